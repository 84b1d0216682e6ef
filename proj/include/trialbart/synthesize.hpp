#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "trialbart/dataset.hpp"
#include "trialbart/rng.hpp"

namespace trialbart {

// How a hypothetical external control arm relates to the trial controls.
enum class SynthMode {
  kMimic,           // resample with jitter: conditionally independent case
  kCovariateShift,  // oversample low values of the shift column, outcomes still commensurate
  kOutcomeShift,    // mimic, then y += 5 - 0.05 * shift column
};

inline SynthMode parse_synth_mode(const std::string& name) {
  if (name == "mimic") return SynthMode::kMimic;
  if (name == "covariate-shift") return SynthMode::kCovariateShift;
  if (name == "outcome-shift") return SynthMode::kOutcomeShift;
  throw std::invalid_argument("unknown synthesis mode '" + name +
                              "' (expected mimic, covariate-shift, or outcome-shift)");
}

namespace detail {

// Rice-type estimate of the conditional outcome scale: sd of the gaps to the
// nearest covariate neighbour, divided by sqrt(2).
inline double neighbour_residual_sd(const std::vector<std::vector<double>>& rows,
                                    const std::vector<double>& y,
                                    const std::vector<double>& col_scale) {
  const std::size_t n = rows.size();
  long double acc = 0.0L;
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = i;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      double dist = 0.0;
      for (std::size_t q = 0; q < rows[i].size(); ++q) {
        const double dq = (rows[i][q] - rows[j][q]) / col_scale[q];
        dist += dq * dq;
      }
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    const double gap = y[i] - y[best_j];
    acc += gap * gap;
  }
  return std::sqrt(static_cast<double>(acc / (2.0L * static_cast<long double>(n))));
}

}  // namespace detail

// Builds n_ext hypothetical external control rows (source 1) from the trial
// controls: resample rows, jitter the continuous covariates, and regenerate
// outcomes by nearest-neighbour matching plus residual-scale noise. The
// covariate-shift mode weights the resampling toward low values of
// shift_column; the outcome-shift mode adds 5 - 0.05 * shift_column to the
// outcome afterwards.
inline TrialDataset synthesize_external(const TrialDataset& trial, int n_ext, SynthMode mode,
                                        std::uint64_t seed, std::size_t shift_column = 0) {
  if (n_ext < 1) throw std::invalid_argument("synthesize_external: n_ext must be >= 1");
  if (shift_column >= trial.num_covariates()) {
    throw std::invalid_argument("synthesize_external: shift column out of range");
  }
  const std::vector<std::size_t> control_rows = trial.rows_where(0, 0);
  const std::size_t n = control_rows.size();
  if (n < 10) {
    throw std::invalid_argument("synthesize_external: need at least 10 trial control rows");
  }
  const std::size_t q = trial.num_covariates();

  std::vector<std::vector<double>> rows;
  std::vector<double> y;
  rows.reserve(n);
  for (std::size_t i : control_rows) {
    rows.push_back(trial.covariate_row(i));
    y.push_back(trial.outcome[i]);
  }
  std::vector<double> col_sd(q, 1.0);
  for (std::size_t c = 0; c < q; ++c) {
    std::vector<double> col(n);
    for (std::size_t i = 0; i < n; ++i) col[i] = rows[i][c];
    const double sd = sd_of(col);
    col_sd[c] = sd > 0.0 ? sd : 1.0;
  }
  const double resid_sd = detail::neighbour_residual_sd(rows, y, col_sd);

  // resampling weights; covariate-shift decreases linearly in the rank of
  // the shift column
  std::vector<double> cum(n);
  {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return rows[a][shift_column] < rows[b][shift_column];
    });
    std::vector<double> w(n, 1.0);
    if (mode == SynthMode::kCovariateShift) {
      for (std::size_t r = 0; r < n; ++r) {
        w[order[r]] = static_cast<double>(n - r);
      }
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += w[i];
      cum[i] = total;
    }
    for (auto& c : cum) c /= total;
  }

  Rng rng(seed);
  TrialDataset out;
  out.covariate_names = trial.covariate_names;
  out.covariate_types = trial.covariate_types;
  out.covariates.resize(q);
  for (int k = 0; k < n_ext; ++k) {
    const double u = rng.uniform();
    const std::size_t pick = static_cast<std::size_t>(
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
    std::vector<double> x = rows[std::min(pick, n - 1)];
    for (std::size_t c = 0; c < q; ++c) {
      if (trial.covariate_types[c] == ColumnType::kContinuous) {
        x[c] += rng.normal(0.0, 0.05 * col_sd[c]);
      }
    }
    // outcome from the closest trial control in standardized covariate space
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = 0;
    for (std::size_t j = 0; j < n; ++j) {
      double dist = 0.0;
      for (std::size_t c = 0; c < q; ++c) {
        const double dc = (x[c] - rows[j][c]) / col_sd[c];
        dist += dc * dc;
      }
      if (dist < best) {
        best = dist;
        best_j = j;
      }
    }
    double yk = y[best_j] + rng.normal(0.0, resid_sd);
    if (mode == SynthMode::kOutcomeShift) yk += 5.0 - 0.05 * x[shift_column];
    out.append_row(yk, 0, 1, x);
  }
  return out;
}

}  // namespace trialbart
