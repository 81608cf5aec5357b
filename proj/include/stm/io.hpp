#pragma once
// Deterministic serialization: shortest round-trip number formatting,
// atomic file writes, and the CSV/JSON shapes emitted by the command-line
// harness.  Identical inputs produce byte-identical files for any worker
// count, locale, or rerun.

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "concentration.hpp"
#include "driver.hpp"
#include "sampling.hpp"

namespace stm {

using ordered_json = nlohmann::ordered_json;

// Shortest representation that parses back to the same double ("nan"/"inf"
// for non-finite values); independent of locale and stream state.
inline std::string format_double(double v) {
  std::array<char, 64> buf;
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (res.ec != std::errc()) throw std::runtime_error("format_double: conversion failed");
  return std::string(buf.data(), res.ptr);
}

// JSON value for a double: a plain number when finite, a string otherwise
// (JSON has no inf/nan literals and silently turning them into null would
// drop information).
inline ordered_json json_number(double v) {
  if (std::isfinite(v)) return v;
  return format_double(v);
}

inline ordered_json json_vector(const Vector& v) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(json_number(v[i]));
  return arr;
}

// Write via a sibling temp file and rename, so readers never observe a
// partially written file.
inline void write_text_atomic(const std::filesystem::path& path, std::string_view content) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("write_text_atomic: cannot open " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write_text_atomic: write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

inline constexpr const char* kIterationsCsvSchema = "stm.iterations.v1";
inline constexpr const char* kSummaryJsonSchema = "stm.summary.v1";
inline constexpr const char* kTailCsvSchema = "stm.tail.v1";
inline constexpr const char* kSamplePlanSchema = "stm.sample_plan.v1";
inline constexpr const char* kCheckReportSchema = "stm.check.v1";

// One row per iteration, stable column order.
inline std::string iterations_csv(const RunReport& report) {
  std::string out =
      "k,sigma,f_value,step_norm,rho,success,accepted,chi1,chi2,chi3,model_decrease,"
      "n_g,n_b,n_t,subsolver_status,subsolver_iterations,cond1_checked,cond1_held,sigma_next\n";
  for (const IterationRecord& r : report.records) {
    out += std::to_string(r.k);
    out += ',';
    out += format_double(r.sigma);
    out += ',';
    out += format_double(r.f_value);
    out += ',';
    out += format_double(r.step_norm);
    out += ',';
    out += format_double(r.rho);
    out += ',';
    out += to_string(r.success);
    out += ',';
    out += r.accepted ? '1' : '0';
    out += ',';
    out += format_double(r.chi1);
    out += ',';
    out += format_double(r.chi2);
    out += ',';
    out += format_double(r.chi3);
    out += ',';
    out += format_double(r.model_decrease);
    out += ',';
    out += std::to_string(r.n_g);
    out += ',';
    out += std::to_string(r.n_b);
    out += ',';
    out += std::to_string(r.n_t);
    out += ',';
    out += to_string(r.subsolver_status);
    out += ',';
    out += std::to_string(r.subsolver_iterations);
    out += ',';
    out += r.cond1_checked ? '1' : '0';
    out += ',';
    out += r.cond1_held ? '1' : '0';
    out += ',';
    out += format_double(r.sigma_next);
    out += '\n';
  }
  return out;
}

inline ordered_json tally_json(const InequalityTally& t) {
  ordered_json j;
  j["checked"] = t.checked;
  j["violations"] = t.violations;
  j["min_margin"] = json_number(t.min_margin);
  return j;
}

inline ordered_json config_json(const StmConfig& c) {
  ordered_json j;
  j["gamma1"] = json_number(c.gamma1);
  j["gamma2"] = json_number(c.gamma2);
  j["gamma3"] = json_number(c.gamma3);
  j["eta1"] = json_number(c.eta1);
  j["eta2"] = json_number(c.eta2);
  j["sigma0"] = json_number(c.sigma0);
  j["sigma_min"] = json_number(c.sigma_min);
  j["theta"] = json_number(c.theta);
  j["zeta"] = json_number(c.zeta);
  j["eps1"] = json_number(c.eps1);
  j["eps2"] = json_number(c.eps2);
  j["eps3"] = json_number(c.eps3);
  j["max_iters"] = c.max_iters;
  j["seed"] = c.seed;
  j["sampling"] = to_string(c.sampling);
  j["delta"] = json_number(c.delta);
  j["kappas"] = {{"g", json_number(c.kappas.g)},
                 {"b", json_number(c.kappas.b)},
                 {"t", json_number(c.kappas.t)}};
  j["mode"] = to_string(c.mode);
  j["sigma_rule"] = to_string(c.sigma_rule);
  j["subsolver_budget"] = c.subsolver_budget;
  j["chi_restarts"] = c.chi_restarts;
  return j;
}

// Full report: configuration echo sufficient to re-run, aggregate results,
// the inequality tallies, and the iteration/sigma budgets.
inline ordered_json run_summary_json(const RunReport& report, const ordered_json& config_echo) {
  ordered_json j;
  j["schema"] = kSummaryJsonSchema;
  j["iterations_csv_schema"] = kIterationsCsvSchema;
  j["config_echo"] = config_echo;
  j["problem"] = report.problem;
  j["stm_config"] = config_json(report.config);
  ordered_json res;
  res["iterations"] = report.iterations;
  res["successful"] = report.successful;
  res["unsuccessful"] = report.unsuccessful;
  res["converged"] = report.converged;
  res["heuristic_termination"] = report.heuristic_termination;
  res["initial_f"] = json_number(report.initial_f);
  res["terminal_f"] = json_number(report.terminal_f);
  res["terminal_chi"] = {json_number(report.terminal_chi1), json_number(report.terminal_chi2),
                         json_number(report.terminal_chi3)};
  res["terminal_x"] = json_vector(report.terminal_x);
  res["sigma_final"] = json_number(report.sigma_final);
  res["sigma_observed_max"] = json_number(report.sigma_observed_max);
  res["eps_combined"] = json_number(report.eps_combined);
  res["plan"] = {{"n_g", report.plan_n_g}, {"n_b", report.plan_n_b}, {"n_t", report.plan_n_t}};
  j["results"] = res;
  ordered_json checks;
  checks["model_decrease"] = tally_json(report.lemma_model_decrease);
  checks["step_chi1"] = tally_json(report.lemma_step_chi1);
  checks["step_chi2"] = tally_json(report.lemma_step_chi2);
  checks["step_chi3"] = tally_json(report.lemma_step_chi3);
  checks["counting"] = tally_json(report.counting);
  checks["cond1"] = {{"checked", report.cond1_checked}, {"violations", report.cond1_violations}};
  j["lemma_checks"] = checks;
  ordered_json budget;
  budget["sigma_max_bound"] = {{"value", json_number(report.sigma_max_bound.value)},
                               {"vacuous", report.sigma_max_bound.vacuous}};
  budget["sigma_max_used"] = json_number(report.sigma_max_used);
  budget["kappa_s"] = json_number(report.budget.kappa_s);
  budget["kappa_s2"] = json_number(report.budget.kappa_s2);
  budget["kappa_s3"] = json_number(report.budget.kappa_s3);
  budget["kappa_max"] = json_number(report.budget.kappa_max);
  budget["k_succ"] = json_number(report.budget.k_succ);
  budget["k_total"] = json_number(report.budget.k_total);
  budget["counting_slope"] = json_number(report.counting_slope);
  budget["counting_offset"] = json_number(report.counting_offset);
  j["budget"] = budget;
  return j;
}

// Columns fixed by the reporting contract: t, empirical_freq, wilson_upper,
// bound, informative_flag.
inline std::string tail_csv(const TailEstimate& est) {
  std::string out = "t,empirical_freq,wilson_upper,bound,informative_flag\n";
  for (std::size_t j = 0; j < est.t_grid.size(); ++j) {
    out += format_double(est.t_grid[j]);
    out += ',';
    out += format_double(est.empirical_freq[j]);
    out += ',';
    out += format_double(est.wilson_upper[j]);
    out += ',';
    out += format_double(est.bound_value[j]);
    out += ',';
    out += est.informative[j] ? '1' : '0';
    out += '\n';
  }
  return out;
}

inline const char* to_string(TailKind k) {
  switch (k) {
    case TailKind::TensorWithoutReplacement: return "tensor_without_replacement";
    case TailKind::TensorIid: return "tensor_iid";
    case TailKind::MatrixWithoutReplacement: return "matrix_without_replacement";
    case TailKind::MatrixIid: return "matrix_iid";
  }
  return "unknown";
}

inline ordered_json tail_summary_json(const TailEstimate& est, const ordered_json& config_echo) {
  ordered_json j;
  j["schema"] = kTailCsvSchema;
  j["config_echo"] = config_echo;
  j["scheme"] = to_string(est.scheme);
  j["n"] = est.n;
  j["trials"] = est.trials;
  j["seed"] = est.seed;
  ordered_json b;
  b["kind"] = to_string(est.bound.kind);
  b["dims"] = est.bound.dims;
  b["sigma"] = json_number(est.bound.sigma);
  b["n"] = est.bound.n;
  b["N"] = est.bound.N;
  b["crossover"] = json_number(bound_crossover(est.bound));
  j["bound"] = b;
  j["max_soundness_gap"] = json_number(max_soundness_gap(est));
  j["sound"] = max_soundness_gap(est) <= 0.0;
  return j;
}

inline ordered_json sample_plan_json(const SamplePlan& plan) {
  ordered_json j;
  j["schema"] = kSamplePlanSchema;
  j["scheme"] = to_string(plan.scheme);
  j["n_g"] = plan.n_g;
  j["n_b"] = plan.n_b;
  j["n_t"] = plan.n_t;
  j["raw_g"] = json_number(plan.raw_g);
  j["raw_b"] = json_number(plan.raw_b);
  j["raw_t"] = json_number(plan.raw_t);
  j["exact_g"] = plan.exact_g;
  j["exact_b"] = plan.exact_b;
  j["exact_t"] = plan.exact_t;
  ordered_json in;
  in["eps"] = json_number(plan.inputs.eps);
  in["delta"] = json_number(plan.inputs.delta);
  in["kappas"] = {{"g", json_number(plan.inputs.kappas.g)},
                  {"b", json_number(plan.inputs.kappas.b)},
                  {"t", json_number(plan.inputs.kappas.t)}};
  in["sigmas"] = {{"g", json_number(plan.inputs.sigmas.sigma_g)},
                  {"b", json_number(plan.inputs.sigmas.sigma_b)},
                  {"t", json_number(plan.inputs.sigmas.sigma_t)}};
  in["d"] = plan.inputs.d;
  in["N"] = plan.inputs.N;
  j["inputs"] = in;
  return j;
}

}  // namespace stm
