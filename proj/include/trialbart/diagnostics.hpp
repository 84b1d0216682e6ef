#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "trialbart/bart.hpp"
#include "trialbart/parallel.hpp"

namespace trialbart {

// 1 - SS_resid / SS_total for a set of fitted values.
inline double pseudo_r_squared(std::span<const double> y, std::span<const double> fitted) {
  if (y.size() != fitted.size() || y.size() < 2) {
    throw std::invalid_argument("pseudo_r_squared: need two equal-length vectors");
  }
  const double ybar = mean_of(y);
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    ss_res += (y[i] - fitted[i]) * (y[i] - fitted[i]);
    ss_tot += (y[i] - ybar) * (y[i] - ybar);
  }
  if (ss_tot <= 0.0) throw std::invalid_argument("pseudo_r_squared: outcome is constant");
  return 1.0 - ss_res / ss_tot;
}

struct PermutationConfig {
  int n_perm = 100;
  // Reduced chain settings keep the 1 + n_perm refits desk-scale; the test's
  // calibration only needs the same settings on both sides.
  BartHyper hyper = [] {
    BartHyper h;
    h.num_trees = 50;
    return h;
  }();
  McmcConfig mcmc{500, 100, 0};
  unsigned threads = 0;
};

struct PermutationResult {
  double observed_r2 = 0.0;
  std::vector<double> null_r2;  // one per permutation
  double p_value = 1.0;
  int n_perm = 0;
};

// Tests conditional independence of the control outcome and the data source:
// fit the control surface on (x, s), record the in-sample pseudo-R^2, then
// refit with the source column permuted. Small p means the source predicts
// the outcome even after the covariates.
inline PermutationResult source_permutation_test(const TrialDataset& data,
                                                 const PermutationConfig& config) {
  if (config.n_perm < 1) throw std::invalid_argument("permutation test: n_perm must be >= 1");
  config.mcmc.validate();
  TrialDataset controls;
  controls.covariate_names = data.covariate_names;
  controls.covariate_types = data.covariate_types;
  controls.covariates.resize(data.num_covariates());
  for (std::size_t i = 0; i < data.num_rows(); ++i) {
    if (data.arm[i] == 0) controls.append_row(data.outcome[i], 0, data.source[i], data.covariate_row(i));
  }
  if (controls.num_sources() < 2) {
    throw std::invalid_argument("permutation test: control rows must span at least two sources");
  }
  const std::vector<std::size_t> all_rows = [&] {
    std::vector<std::size_t> idx(controls.num_rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }();

  auto fit_r2 = [&](const TrialDataset& ds, std::uint64_t seed) {
    const BartDesign design = make_design(ds, all_rows, /*include_source=*/true,
                                          config.hyper.cutpoint_count);
    McmcConfig mcmc = config.mcmc;
    mcmc.seed = seed;
    const SurfaceFit fit = fit_bart_surface(design, ds.outcome, config.hyper, mcmc);
    return pseudo_r_squared(ds.outcome, fit.fitted_mean);
  };

  PermutationResult result;
  result.n_perm = config.n_perm;
  result.observed_r2 = fit_r2(controls, derive_seed(config.mcmc.seed, 0));
  result.null_r2.resize(static_cast<std::size_t>(config.n_perm));
  parallel_for(
      static_cast<std::size_t>(config.n_perm),
      [&](std::size_t b) {
        const std::uint64_t sub = derive_seed(config.mcmc.seed, b + 1);
        TrialDataset permuted = controls;
        Rng rng(sub);
        rng.shuffle(permuted.source);
        result.null_r2[b] = fit_r2(permuted, derive_seed(sub, 1));
      },
      config.threads);

  int at_least = 0;  // ties count toward the numerator
  for (double r2 : result.null_r2) at_least += r2 >= result.observed_r2;
  result.p_value = static_cast<double>(at_least) / static_cast<double>(config.n_perm);
  return result;
}

}  // namespace trialbart
