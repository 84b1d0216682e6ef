#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "trialbart/dataset.hpp"
#include "trialbart/rng.hpp"

namespace trialbart {

enum class Variant { kCondIndep, kViolated, kMultiSource };

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kCondIndep: return "cond-indep";
    case Variant::kViolated: return "violated";
    case Variant::kMultiSource: return "multi-source";
  }
  throw std::logic_error("unknown variant");
}

inline Variant parse_variant(const std::string& name) {
  if (name == "cond-indep") return Variant::kCondIndep;
  if (name == "violated") return Variant::kViolated;
  if (name == "multi-source") return Variant::kMultiSource;
  throw std::invalid_argument("unknown variant '" + name +
                              "' (expected cond-indep, violated, or multi-source)");
}

// Simulation design: which scenario, which external-data variant, and the
// sample sizes. n_external counts rows per source; the multi-source variant
// uses four sources of 50 by default, the others one source of 200.
struct ScenarioSpec {
  int scenario = 1;
  Variant variant = Variant::kCondIndep;
  int n_trial = 50;
  int n_external = -1;  // per source; -1 picks the default for the variant
  std::uint64_t seed = 0;

  int num_external_sources() const { return variant == Variant::kMultiSource ? 4 : 1; }
  int external_per_source() const {
    if (n_external >= 0) return n_external;
    return variant == Variant::kMultiSource ? 50 : 200;
  }

  void validate() const {
    if (scenario < 1 || scenario > 3) throw std::invalid_argument("scenario must be 1, 2, or 3");
    if (n_trial < 1) throw std::invalid_argument("n_trial must be >= 1");
    if (external_per_source() < 1) throw std::invalid_argument("n_external must be >= 1");
  }
};

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

// Closed-form mean surfaces of the generating process, kept alongside the
// data so metrics can be computed against the exact truth.
struct ScenarioTruth {
  int scenario = 1;
  Variant variant = Variant::kCondIndep;
  std::vector<double> beta_treat;     // scenario 2
  std::vector<double> beta_control;   // scenario 2
  std::vector<double> beta_diff;      // scenario 2, shifted external sources

  // E[Y | T=1, x, S=0]
  double treatment_mean(std::span<const double> x) const {
    switch (scenario) {
      case 1: return 1.0 - 0.16 + (x[0] - 1.0) * (x[0] - 1.0);
      case 2: return dot(beta_treat, x) + 5.0;
      default: return 0.2 + 0.5;
    }
  }

  // E[Y | T=0, x, S=s]; source 0 is the current trial.
  double control_mean(std::span<const double> x, int source) const {
    const bool shifted = source_is_shifted(source);
    switch (scenario) {
      case 1: return shifted ? 1.4 - 1.2 * x[0] * x[0] : 1.0 - x[0] * x[0];
      case 2: {
        double lin = dot(beta_control, x);
        if (shifted) lin += dot(beta_diff, x);
        return std::exp(lin);
      }
      default: return shifted ? 0.4 : 0.2;
    }
  }

  double delta(std::span<const double> x) const {
    return treatment_mean(x) - control_mean(x, 0);
  }

  bool source_is_shifted(int source) const {
    if (source == 0) return false;
    switch (variant) {
      case Variant::kCondIndep: return false;
      case Variant::kViolated: return true;
      case Variant::kMultiSource: return source >= 3;  // sources 3 and 4
    }
    return false;
  }

 private:
  static double dot(std::span<const double> a, std::span<const double> b) {
    double v = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) v += a[i] * b[i];
    return v;
  }
};

struct GeneratedData {
  TrialDataset dataset;
  ScenarioTruth truth;
  double cate_true = 0.0;  // mean of delta over the realized trial rows
};

namespace detail {

// Correlation matrix with off-diagonals drawn from {0.1, 0.4, 0.7, -0.3}
// with weights {0.4, 0.3, 0.1, 0.2}, repaired to positive definite by
// eigenvalue clipping and rescaling to unit diagonal.
inline Eigen::MatrixXd draw_correlation(Rng& rng, int dim) {
  static constexpr double kValues[4] = {0.1, 0.4, 0.7, -0.3};
  static constexpr double kWeights[4] = {0.4, 0.3, 0.1, 0.2};
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::MatrixXd omega = Eigen::MatrixXd::Identity(dim, dim);
    for (int i = 0; i < dim; ++i) {
      for (int j = i + 1; j < dim; ++j) {
        const double u = rng.uniform();
        double cum = 0.0;
        double v = kValues[3];
        for (int k = 0; k < 4; ++k) {
          cum += kWeights[k];
          if (u < cum) {
            v = kValues[k];
            break;
          }
        }
        omega(i, j) = omega(j, i) = v;
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(omega);
    Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(1e-6);
    Eigen::MatrixXd repaired =
        eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
    Eigen::VectorXd d = repaired.diagonal().cwiseSqrt();
    for (int i = 0; i < dim; ++i) {
      for (int j = 0; j < dim; ++j) repaired(i, j) /= d(i) * d(j);
    }
    if (Eigen::LLT<Eigen::MatrixXd>(repaired).info() == Eigen::Success) return repaired;
  }
  throw std::runtime_error("correlation draw failed to produce a positive definite matrix");
}

inline std::vector<double> draw_coefficients(Rng& rng, int dim, double lo_value, double hi_value,
                                             double lo_prob) {
  std::vector<double> beta(static_cast<std::size_t>(dim));
  for (auto& b : beta) b = rng.uniform() < lo_prob ? lo_value : hi_value;
  return beta;
}

// Coordinates from {0.2, -0.2, 0} with weights {0.3, 0.3, 0.4}, redrawn
// until the vector is nonzero.
inline std::vector<double> draw_shift_coefficients(Rng& rng, int dim) {
  while (true) {
    std::vector<double> diff(static_cast<std::size_t>(dim));
    bool nonzero = false;
    for (auto& d : diff) {
      const double u = rng.uniform();
      d = u < 0.3 ? 0.2 : (u < 0.6 ? -0.2 : 0.0);
      nonzero |= d != 0.0;
    }
    if (nonzero) return diff;
  }
}

// One row of (x1, x2, x3, x4~) ~ N(mu 1, sd^2 Omega), with the fourth
// coordinate replaced by the binary Ber(Phi(a * x4~ + b)).
inline std::vector<double> draw_covariates4(Rng& rng, const Eigen::MatrixXd& chol_lower,
                                            double mu, double sd, double probit_a,
                                            double probit_b) {
  Eigen::VectorXd z(4);
  for (int i = 0; i < 4; ++i) z(i) = rng.normal();
  Eigen::VectorXd x = chol_lower * z;
  std::vector<double> row(4);
  for (int i = 0; i < 3; ++i) row[static_cast<std::size_t>(i)] = mu + sd * x(i);
  const double latent = mu + sd * x(3);
  row[3] = rng.bernoulli(standard_normal_cdf(probit_a * latent + probit_b)) ? 1.0 : 0.0;
  return row;
}

}  // namespace detail

// Draws one dataset: trial covariates and 1:1 randomized arms, external
// control rows per source, outcomes from the scenario's mean functions, and
// the exact effect truth evaluated on the realized trial rows.
inline GeneratedData generate_scenario(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  GeneratedData gen;
  gen.truth.scenario = spec.scenario;
  gen.truth.variant = spec.variant;

  TrialDataset& ds = gen.dataset;
  const int num_sources = spec.num_external_sources();
  const int q = spec.scenario == 1 ? 1 : 4;
  ds.covariates.resize(static_cast<std::size_t>(q));
  if (spec.scenario == 1) {
    ds.covariate_names = {"x"};
    ds.covariate_types = {ColumnType::kContinuous};
  } else {
    ds.covariate_names = {"x1", "x2", "x3", "x4"};
    ds.covariate_types = {ColumnType::kContinuous, ColumnType::kContinuous,
                          ColumnType::kContinuous, ColumnType::kBinary};
  }

  Eigen::MatrixXd chol_lower;
  if (spec.scenario != 1) {
    const Eigen::MatrixXd omega = detail::draw_correlation(rng, 4);
    chol_lower = Eigen::LLT<Eigen::MatrixXd>(omega).matrixL();
    gen.truth.beta_treat = detail::draw_coefficients(rng, 4, 0.1, 0.7, 0.3);
    gen.truth.beta_control = detail::draw_coefficients(rng, 4, 0.1, 0.7, 0.3);
    const bool need_shift = spec.variant != Variant::kCondIndep && spec.scenario == 2;
    gen.truth.beta_diff =
        need_shift ? detail::draw_shift_coefficients(rng, 4) : std::vector<double>(4, 0.0);
  }

  auto draw_x = [&](bool trial_like) {
    switch (spec.scenario) {
      case 1:
        return std::vector<double>{trial_like ? rng.normal(0.7, 0.2) : rng.normal(0.3, 0.4)};
      case 2:
        return trial_like ? detail::draw_covariates4(rng, chol_lower, 0.7, 0.2, 1.0, -0.5)
                          : detail::draw_covariates4(rng, chol_lower, 0.3, 0.4, 1.0, -0.5);
      default:
        return detail::draw_covariates4(rng, chol_lower, 0.5, 0.5, 2.0, -1.0);
    }
  };
  const double noise_sd = spec.scenario == 2 ? 0.5 : 0.1;

  // current trial: covariates, Ber(0.5) treatment, outcomes
  for (int i = 0; i < spec.n_trial; ++i) {
    const std::vector<double> x = draw_x(true);
    const int t = rng.bernoulli(0.5) ? 1 : 0;
    const double mean = t == 1 ? gen.truth.treatment_mean(x) : gen.truth.control_mean(x, 0);
    ds.append_row(rng.normal(mean, noise_sd), t, 0, x);
  }
  // external sources: control only
  for (int s = 1; s <= num_sources; ++s) {
    // in the multi-source design, sources 1 and 3 share the trial covariate
    // distribution and 2 and 4 the external one
    const bool trial_like_x =
        spec.scenario == 3 || (spec.variant == Variant::kMultiSource && (s == 1 || s == 3));
    for (int i = 0; i < spec.external_per_source(); ++i) {
      const std::vector<double> x = draw_x(trial_like_x);
      ds.append_row(rng.normal(gen.truth.control_mean(x, s), noise_sd), 0, s, x);
    }
  }
  ds.validate();

  long double acc = 0.0L;
  const auto trial = ds.trial_rows();
  for (std::size_t i : trial) acc += gen.truth.delta(ds.covariate_row(i));
  gen.cate_true = static_cast<double>(acc / static_cast<long double>(trial.size()));
  return gen;
}

// Average over trial rows of the gap between the current and the external
// control mean surfaces; zero exactly when the source satisfies conditional
// independence.
inline double cate_discrepancy(const GeneratedData& gen, int source) {
  if (source < 1 || source >= gen.dataset.num_sources()) {
    throw std::invalid_argument("cate_discrepancy: unknown external source " +
                                std::to_string(source));
  }
  long double acc = 0.0L;
  const auto trial = gen.dataset.trial_rows();
  for (std::size_t i : trial) {
    const std::vector<double> x = gen.dataset.covariate_row(i);
    acc += gen.truth.control_mean(x, 0) - gen.truth.control_mean(x, source);
  }
  return static_cast<double>(acc / static_cast<long double>(trial.size()));
}

}  // namespace trialbart
