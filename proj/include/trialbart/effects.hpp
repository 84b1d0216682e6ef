#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "trialbart/posterior.hpp"
#include "trialbart/rng.hpp"

namespace trialbart {

// Draws of the conditional treatment effect at x: f1(x) - f0(x, 0) per
// retained draw.
inline std::vector<double> conditional_effect_draws(const PosteriorDraws& post,
                                                    std::span<const double> x) {
  std::vector<double> out(post.num_draws());
  for (std::size_t l = 0; l < out.size(); ++l) {
    out[l] = post.treatment_value(l, x) - post.control_value(l, x, 0);
  }
  return out;
}

// Conditional average treatment effect over the supplied trial covariate
// rows: each draw is the arithmetic mean of the per-patient effect draws.
inline EffectSummary estimate_cate(const PosteriorDraws& post,
                                   const std::vector<std::vector<double>>& trial_covariates) {
  if (trial_covariates.empty()) {
    throw std::invalid_argument("estimate_cate: no trial covariate rows");
  }
  std::vector<double> acc(post.num_draws(), 0.0);
  for (const auto& x : trial_covariates) {
    const std::vector<double> d = conditional_effect_draws(post, x);
    for (std::size_t l = 0; l < acc.size(); ++l) acc[l] += d[l];
  }
  const double n = static_cast<double>(trial_covariates.size());
  for (auto& v : acc) v /= n;
  return summarize_draws(std::move(acc), Estimand::kCate);
}

// Population average treatment effect under a flat Dirichlet over the
// observed trial covariate rows. One weight vector is drawn per retained
// draw so surface and population uncertainty propagate together.
inline EffectSummary estimate_pate(const PosteriorDraws& post,
                                   const std::vector<std::vector<double>>& trial_covariates,
                                   std::uint64_t seed) {
  if (trial_covariates.empty()) {
    throw std::invalid_argument("estimate_pate: no trial covariate rows");
  }
  const std::size_t n = trial_covariates.size();
  std::vector<std::vector<double>> per_point;
  per_point.reserve(n);
  for (const auto& x : trial_covariates) per_point.push_back(conditional_effect_draws(post, x));
  Rng rng(seed);
  std::vector<double> draws(post.num_draws(), 0.0);
  for (std::size_t l = 0; l < draws.size(); ++l) {
    const std::vector<double> w = rng.dirichlet_flat(n);
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += w[i] * per_point[i][l];
    draws[l] = v;
  }
  return summarize_draws(std::move(draws), Estimand::kPate);
}

inline EffectSummary estimate_effect(const PosteriorDraws& post,
                                     const std::vector<std::vector<double>>& trial_covariates,
                                     Estimand estimand, std::uint64_t seed = 0) {
  return estimand == Estimand::kCate ? estimate_cate(post, trial_covariates)
                                     : estimate_pate(post, trial_covariates, seed);
}

struct SuperiorityTest {
  double posterior_prob = 0.0;
  bool reject = false;
};

// Posterior probability that the effect exceeds the threshold; reject when
// it clears the level.
inline SuperiorityTest test_superiority(const EffectSummary& summary, double threshold,
                                        double level = 0.95) {
  if (summary.draws.empty()) throw std::invalid_argument("test_superiority: no draws");
  std::size_t above = 0;
  for (double d : summary.draws) above += d > threshold;
  SuperiorityTest t;
  t.posterior_prob = static_cast<double>(above) / static_cast<double>(summary.draws.size());
  t.reject = t.posterior_prob > level;
  return t;
}

// Posterior mean of the conditional effect at each covariate row.
inline std::vector<double> per_point_effect_means(
    const PosteriorDraws& post, const std::vector<std::vector<double>>& covariate_rows) {
  std::vector<double> out;
  out.reserve(covariate_rows.size());
  for (const auto& x : covariate_rows) out.push_back(mean_of(conditional_effect_draws(post, x)));
  return out;
}

inline std::vector<EffectSummary> per_point_effect_summaries(
    const PosteriorDraws& post, const std::vector<std::vector<double>>& covariate_rows) {
  std::vector<EffectSummary> out;
  out.reserve(covariate_rows.size());
  for (const auto& x : covariate_rows) {
    out.push_back(summarize_draws(conditional_effect_draws(post, x), Estimand::kCate));
  }
  return out;
}

}  // namespace trialbart
