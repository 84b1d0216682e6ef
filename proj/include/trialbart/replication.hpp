#pragma once

#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trialbart/effects.hpp"
#include "trialbart/models.hpp"
#include "trialbart/parallel.hpp"
#include "trialbart/scenarios.hpp"
#include "trialbart/text.hpp"

namespace trialbart {

// Follow-up margin d for the power test; chosen per scenario to make the
// power comparison between methods informative.
inline double default_power_margin(int scenario) { return scenario == 2 ? 0.25 : 0.08; }

// Per-replication, per-method performance measurements.
struct MetricsRow {
  double bias = 0.0;
  double rmse = 0.0;       // over posterior draws, against the exact truth
  bool covered = false;    // truth inside the 95% interval
  double ci_length = 0.0;
  double pehe = 0.0;       // per-point posterior means vs the exact truth
  bool reject_type1 = false;  // effect > truth claimed
  bool reject_power = false;  // effect > truth - d claimed
};

inline MetricsRow compute_metrics(const EffectSummary& summary,
                                  std::span<const double> per_point_means,
                                  const GeneratedData& gen, double d) {
  if (!(d > 0.0)) throw std::invalid_argument("compute_metrics: d must be > 0");
  MetricsRow row;
  const double truth = gen.cate_true;
  row.bias = summary.mean - truth;
  long double acc = 0.0L;
  for (double draw : summary.draws) acc += (draw - truth) * (draw - truth);
  row.rmse = std::sqrt(static_cast<double>(acc / static_cast<long double>(summary.draws.size())));
  row.covered = summary.ci_low <= truth && truth <= summary.ci_high;
  row.ci_length = summary.ci_length();
  const auto trial = gen.dataset.trial_rows();
  if (per_point_means.size() != trial.size()) {
    throw std::invalid_argument("compute_metrics: per-point means must cover the trial rows");
  }
  long double pe = 0.0L;
  for (std::size_t k = 0; k < trial.size(); ++k) {
    const double dt = gen.truth.delta(gen.dataset.covariate_row(trial[k]));
    pe += (per_point_means[k] - dt) * (per_point_means[k] - dt);
  }
  row.pehe = std::sqrt(static_cast<double>(pe / static_cast<long double>(trial.size())));
  row.reject_type1 = test_superiority(summary, truth).reject;
  row.reject_power = test_superiority(summary, truth - d).reject;
  return row;
}

// Averages over replications, on the paper's x100 reporting scale.
struct MethodAverages {
  Method method = Method::kBart;
  double bias = 0.0;
  double rmse = 0.0;
  double coverage_pct = 0.0;
  double ci_length = 0.0;
  double pehe = 0.0;
  double reject1_pct = 0.0;
  double reject2_pct = 0.0;
};

struct ReplicationReport {
  ScenarioSpec spec;
  int n_reps = 0;
  std::uint64_t master_seed = 0;
  double power_margin = 0.0;
  double avg_cate_x100 = 0.0;
  std::optional<double> avg_discrepancy_x100;  // violated variant only
  std::vector<MethodAverages> rows;
  int failed_fits = 0;

  const MethodAverages& row(Method m) const {
    for (const auto& r : rows)
      if (r.method == m) return r;
    throw std::invalid_argument("report has no row for " + method_name(m));
  }
};

// Generates n_reps datasets, fits every requested method to each, and
// averages the metrics. Replications run in parallel on substream seeds and
// aggregate in replication order, so the report only depends on the seed.
inline ReplicationReport run_replications(const ScenarioSpec& spec,
                                          const std::vector<Method>& methods, int n_reps,
                                          const FitOptions& options, const McmcConfig& mcmc,
                                          std::uint64_t master_seed, double power_margin = -1.0,
                                          unsigned threads = 0) {
  spec.validate();
  mcmc.validate();
  if (n_reps < 1) throw std::invalid_argument("run_replications: n_reps must be >= 1");
  if (methods.empty()) throw std::invalid_argument("run_replications: no methods requested");
  const double d = power_margin > 0.0 ? power_margin : default_power_margin(spec.scenario);

  struct RepResult {
    double cate_true = 0.0;
    double discrepancy = 0.0;
    std::vector<std::optional<MetricsRow>> by_method;
  };
  std::vector<RepResult> results(static_cast<std::size_t>(n_reps));

  parallel_for(
      static_cast<std::size_t>(n_reps),
      [&](std::size_t r) {
        ScenarioSpec rep_spec = spec;
        rep_spec.seed = derive_seed(master_seed, r, 0);
        const GeneratedData gen = generate_scenario(rep_spec);
        const auto trial_x = gen.dataset.covariate_rows(gen.dataset.trial_rows());
        RepResult& out = results[r];
        out.cate_true = gen.cate_true;
        out.discrepancy = spec.variant == Variant::kViolated ? cate_discrepancy(gen, 1) : 0.0;
        out.by_method.resize(methods.size());
        for (std::size_t k = 0; k < methods.size(); ++k) {
          McmcConfig fit_mcmc = mcmc;
          fit_mcmc.seed = derive_seed(master_seed, r, 1 + k);
          try {
            const auto post = fit_method(methods[k], gen.dataset, options, fit_mcmc);
            const EffectSummary summary = estimate_cate(*post, trial_x);
            const std::vector<double> point_means = per_point_effect_means(*post, trial_x);
            out.by_method[k] = compute_metrics(summary, point_means, gen, d);
          } catch (const std::exception&) {
            // recorded and excluded from the averages
          }
        }
      },
      threads);

  ReplicationReport report;
  report.spec = spec;
  report.n_reps = n_reps;
  report.master_seed = master_seed;
  report.power_margin = d;
  long double cate_acc = 0.0L;
  long double disc_acc = 0.0L;
  for (const auto& res : results) {
    cate_acc += res.cate_true;
    disc_acc += res.discrepancy;
  }
  report.avg_cate_x100 =
      static_cast<double>(cate_acc / static_cast<long double>(n_reps)) * 100.0;
  if (spec.variant == Variant::kViolated) {
    report.avg_discrepancy_x100 =
        static_cast<double>(disc_acc / static_cast<long double>(n_reps)) * 100.0;
  }
  for (std::size_t k = 0; k < methods.size(); ++k) {
    MethodAverages avg;
    avg.method = methods[k];
    long double bias = 0.0L, rmse = 0.0L, cover = 0.0L, len = 0.0L, pehe = 0.0L;
    long double rej1 = 0.0L, rej2 = 0.0L;
    int n_ok = 0;
    for (const auto& res : results) {
      const auto& cell = res.by_method[k];
      if (!cell) {
        ++report.failed_fits;
        continue;
      }
      ++n_ok;
      bias += cell->bias;
      rmse += cell->rmse;
      cover += cell->covered ? 1.0L : 0.0L;
      len += cell->ci_length;
      pehe += cell->pehe;
      rej1 += cell->reject_type1 ? 1.0L : 0.0L;
      rej2 += cell->reject_power ? 1.0L : 0.0L;
    }
    if (n_ok == 0) throw std::runtime_error("every fit failed for " + method_name(methods[k]));
    const auto n = static_cast<long double>(n_ok);
    avg.bias = static_cast<double>(bias / n) * 100.0;
    avg.rmse = static_cast<double>(rmse / n) * 100.0;
    avg.coverage_pct = static_cast<double>(cover / n) * 100.0;
    avg.ci_length = static_cast<double>(len / n) * 100.0;
    avg.pehe = static_cast<double>(pehe / n) * 100.0;
    avg.reject1_pct = static_cast<double>(rej1 / n) * 100.0;
    avg.reject2_pct = static_cast<double>(rej2 / n) * 100.0;
    report.rows.push_back(avg);
  }
  return report;
}

// Report file: '#' metadata lines, then the operating-characteristics table
// (scale matching the published convention: bias and lengths x100,
// coverage and rejection rates in percent).
inline void write_report(std::ostream& out, const ReplicationReport& report) {
  out << "# scenario=" << report.spec.scenario << '\n';
  out << "# variant=" << variant_name(report.spec.variant) << '\n';
  out << "# n_trial=" << report.spec.n_trial << '\n';
  out << "# n_external_per_source=" << report.spec.external_per_source() << '\n';
  out << "# n_reps=" << report.n_reps << '\n';
  out << "# seed=" << report.master_seed << '\n';
  out << "# power_margin=" << format_double(report.power_margin) << '\n';
  out << "# avg_cate=" << format_fixed(report.avg_cate_x100, 4) << '\n';
  if (report.avg_discrepancy_x100) {
    out << "# avg_cate_discrepancy=" << format_fixed(*report.avg_discrepancy_x100, 4) << '\n';
  }
  out << "# failed_fits=" << report.failed_fits << '\n';
  out << "model,bias,rmse,cover_pct,ci_length,pehe,rej1_pct,rej2_pct\n";
  for (const auto& r : report.rows) {
    out << method_name(r.method) << ',' << format_fixed(r.bias, 4) << ','
        << format_fixed(r.rmse, 4) << ',' << format_fixed(r.coverage_pct, 4) << ','
        << format_fixed(r.ci_length, 4) << ',' << format_fixed(r.pehe, 4) << ','
        << format_fixed(r.reject1_pct, 4) << ',' << format_fixed(r.reject2_pct, 4) << '\n';
  }
}

inline ReplicationReport parse_report(std::istream& in) {
  ReplicationReport report;
  std::string line;
  bool saw_header = false;
  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    ++row_number;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const auto eq = t.find('=');
      if (eq == std::string_view::npos) continue;
      const auto key = trim(t.substr(1, eq - 1));
      const std::string value{trim(t.substr(eq + 1))};
      if (key == "scenario") report.spec.scenario = static_cast<int>(parse_long(value, "scenario"));
      else if (key == "variant") report.spec.variant = parse_variant(value);
      else if (key == "n_trial") report.spec.n_trial = static_cast<int>(parse_long(value, key.data()));
      else if (key == "n_external_per_source") report.spec.n_external = static_cast<int>(parse_long(value, "n_external"));
      else if (key == "n_reps") report.n_reps = static_cast<int>(parse_long(value, "n_reps"));
      else if (key == "seed") report.master_seed = static_cast<std::uint64_t>(parse_long(value, "seed"));
      else if (key == "power_margin") report.power_margin = parse_double(value, "power_margin");
      else if (key == "avg_cate") report.avg_cate_x100 = parse_double(value, "avg_cate");
      else if (key == "avg_cate_discrepancy") report.avg_discrepancy_x100 = parse_double(value, "avg_cate_discrepancy");
      else if (key == "failed_fits") report.failed_fits = static_cast<int>(parse_long(value, "failed_fits"));
      continue;
    }
    if (!saw_header) {
      saw_header = true;  // column header line
      continue;
    }
    const auto cells = split_csv_line(t);
    if (cells.size() != 8) {
      throw std::runtime_error("report row " + std::to_string(row_number) + ": expected 8 cells");
    }
    MethodAverages r;
    r.method = parse_method(std::string(trim(cells[0])));
    const std::string where = "report row " + std::to_string(row_number);
    r.bias = parse_double(trim(cells[1]), where);
    r.rmse = parse_double(trim(cells[2]), where);
    r.coverage_pct = parse_double(trim(cells[3]), where);
    r.ci_length = parse_double(trim(cells[4]), where);
    r.pehe = parse_double(trim(cells[5]), where);
    r.reject1_pct = parse_double(trim(cells[6]), where);
    r.reject2_pct = parse_double(trim(cells[7]), where);
    report.rows.push_back(r);
  }
  if (!saw_header) throw std::runtime_error("report: missing table header");
  return report;
}

}  // namespace trialbart
