#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace trialbart {

// Empirical quantile with linear interpolation between order statistics.
inline double empirical_quantile(std::vector<double> sorted_or_not, double p) {
  if (sorted_or_not.empty()) throw std::invalid_argument("empirical_quantile: no draws");
  std::sort(sorted_or_not.begin(), sorted_or_not.end());
  const std::size_t n = sorted_or_not.size();
  if (n == 1) return sorted_or_not[0];
  double h = p * static_cast<double>(n - 1);
  double fl = std::floor(h);
  auto i = static_cast<std::size_t>(fl);
  if (i >= n - 1) return sorted_or_not[n - 1];
  return sorted_or_not[i] + (h - fl) * (sorted_or_not[i + 1] - sorted_or_not[i]);
}

inline double mean_of(std::span<const double> v) {
  long double acc = 0.0L;
  for (double x : v) acc += x;
  return static_cast<double>(acc / static_cast<long double>(v.size()));
}

inline double sd_of(std::span<const double> v) {
  const double m = mean_of(v);
  long double acc = 0.0L;
  for (double x : v) acc += (x - m) * (x - m);
  return std::sqrt(static_cast<double>(acc / static_cast<long double>(v.size() - 1)));
}

// Joint draws of both response surfaces. Every model (tree ensemble or
// parametric) fits behind this interface so effect estimation is agnostic to
// how the surfaces were fit.
class PosteriorDraws {
 public:
  virtual ~PosteriorDraws() = default;

  virtual std::size_t num_draws() const = 0;

  // Control surface f0 evaluated at (x, source) for one retained draw.
  virtual double control_value(std::size_t draw, std::span<const double> x, int source) const = 0;

  // Treatment surface f1 evaluated at x.
  virtual double treatment_value(std::size_t draw, std::span<const double> x) const = 0;

  // Residual-sd draws on the outcome scale.
  const std::vector<double>& sigma_control() const { return sigma_control_; }
  const std::vector<double>& sigma_treatment() const { return sigma_treatment_; }

 protected:
  std::vector<double> sigma_control_;
  std::vector<double> sigma_treatment_;
};

enum class Estimand { kCate, kPate };

inline std::string estimand_name(Estimand e) { return e == Estimand::kCate ? "CATE" : "PATE"; }

// Posterior draw vector of a treatment effect with its mean and 95%
// equal-tailed credible interval.
struct EffectSummary {
  std::vector<double> draws;
  double mean = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  Estimand estimand = Estimand::kCate;

  double ci_length() const { return ci_high - ci_low; }
};

inline EffectSummary summarize_draws(std::vector<double> draws, Estimand estimand) {
  if (draws.empty()) throw std::invalid_argument("summarize_draws: no draws");
  EffectSummary s;
  s.mean = mean_of(draws);
  s.ci_low = empirical_quantile(draws, 0.025);
  s.ci_high = empirical_quantile(draws, 0.975);
  s.estimand = estimand;
  s.draws = std::move(draws);
  return s;
}

}  // namespace trialbart
