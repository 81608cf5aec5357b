#include "stm/cli.hpp"

int main(int argc, char** argv) { return stm::cli::dispatch(argc, argv); }
