#pragma once

#include <cmath>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "trialbart/dataset.hpp"
#include "trialbart/mcmc.hpp"
#include "trialbart/posterior.hpp"
#include "trialbart/rng.hpp"

namespace trialbart {

// Hyperprior constants: IG(nu, nu) in shape-rate form on every variance
// (prior mean of a precision is then exactly 1) and N(0, 10^2) on every
// unshrunk location parameter.
inline constexpr double kVariancePriorNu = 1e-4;
inline constexpr double kLocationPriorVar = 100.0;

struct LinearModelOptions {
  // Scenario covariates are generated on comparable scales; real data can
  // opt into z-scaling.
  bool standardize_covariates = false;
  // Pins the between-group variances instead of sampling them; turns the
  // hierarchy into fixed-strength pooling.
  std::optional<double> fixed_group_variance;
};

// Draws from a linear response-surface model: per-source control intercepts
// and slopes plus one treatment regression. Q = 0 reduces to the
// intercept-only (normal-normal) model.
class LinearSurfacePosterior final : public PosteriorDraws {
 public:
  LinearSurfacePosterior(std::size_t groups, std::size_t q, std::vector<double> center,
                         std::vector<double> scale)
      : groups_(groups), q_(q), center_(std::move(center)), scale_(std::move(scale)) {}

  std::size_t num_draws() const override { return alpha1_.size(); }

  double control_value(std::size_t draw, std::span<const double> x, int source) const override {
    if (source < 0 || static_cast<std::size_t>(source) >= groups_) {
      throw std::invalid_argument("control_value: unknown source level");
    }
    const auto s = static_cast<std::size_t>(source);
    double v = control_intercepts_[draw * groups_ + s];
    for (std::size_t j = 0; j < q_; ++j) {
      v += control_slopes_[(draw * groups_ + s) * q_ + j] * standardized(x, j);
    }
    return v;
  }

  double treatment_value(std::size_t draw, std::span<const double> x) const override {
    double v = alpha1_[draw];
    for (std::size_t j = 0; j < q_; ++j) {
      v += treatment_slopes_[draw * q_ + j] * standardized(x, j);
    }
    return v;
  }

  void append_draw(const std::vector<Eigen::VectorXd>& control_coefs,
                   const Eigen::VectorXd& treatment_coefs, double sigma0, double sigma1) {
    for (std::size_t s = 0; s < groups_; ++s) {
      control_intercepts_.push_back(control_coefs[s](0));
      for (std::size_t j = 0; j < q_; ++j) {
        control_slopes_.push_back(control_coefs[s](static_cast<Eigen::Index>(j) + 1));
      }
    }
    alpha1_.push_back(treatment_coefs(0));
    for (std::size_t j = 0; j < q_; ++j) {
      treatment_slopes_.push_back(treatment_coefs(static_cast<Eigen::Index>(j) + 1));
    }
    sigma_control_.push_back(sigma0);
    sigma_treatment_.push_back(sigma1);
  }

  std::size_t num_groups() const { return groups_; }
  std::size_t num_slopes() const { return q_; }

  // Posterior draws of one control intercept; handy for inspecting shrinkage.
  std::vector<double> control_intercept_draws(std::size_t source) const {
    std::vector<double> out(num_draws());
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = control_intercepts_[l * groups_ + source];
    return out;
  }

  std::vector<double> treatment_intercept_draws() const { return alpha1_; }

  std::vector<double> control_slope_draws(std::size_t source, std::size_t j) const {
    std::vector<double> out(num_draws());
    for (std::size_t l = 0; l < out.size(); ++l) {
      out[l] = control_slopes_[(l * groups_ + source) * q_ + j];
    }
    return out;
  }

 private:
  double standardized(std::span<const double> x, std::size_t j) const {
    if (j >= x.size()) throw std::invalid_argument("surface evaluation: covariate vector too short");
    return center_.empty() ? x[j] : (x[j] - center_[j]) / scale_[j];
  }

  std::size_t groups_;
  std::size_t q_;
  std::vector<double> center_;  // empty when covariates are used as-is
  std::vector<double> scale_;
  std::vector<double> control_intercepts_;  // L x groups
  std::vector<double> control_slopes_;      // L x groups x Q
  std::vector<double> alpha1_;              // L
  std::vector<double> treatment_slopes_;    // L x Q
};

namespace detail {

struct GroupData {
  Eigen::MatrixXd ztz;
  Eigen::VectorXd zty;
  double yty = 0.0;
  std::size_t n = 0;
  double y_mean = 0.0;
};

inline GroupData accumulate_group(const std::vector<Eigen::VectorXd>& rows,
                                  const std::vector<double>& y) {
  const auto p = rows.empty() ? 1 : static_cast<Eigen::Index>(rows[0].size());
  GroupData g;
  g.ztz = Eigen::MatrixXd::Zero(p, p);
  g.zty = Eigen::VectorXd::Zero(p);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    g.ztz.noalias() += rows[i] * rows[i].transpose();
    g.zty.noalias() += rows[i] * y[i];
    g.yty += y[i] * y[i];
    g.y_mean += y[i];
  }
  g.n = rows.size();
  if (g.n > 0) g.y_mean /= static_cast<double>(g.n);
  return g;
}

inline Eigen::VectorXd draw_gaussian_coefs(const Eigen::MatrixXd& precision,
                                           const Eigen::VectorXd& linear, Rng& rng) {
  Eigen::LLT<Eigen::MatrixXd> llt(precision);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("linear model: coefficient precision not positive definite");
  }
  Eigen::VectorXd mean = llt.solve(linear);
  Eigen::VectorXd z(linear.size());
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.normal();
  // theta = mean + L^{-T} z has covariance precision^{-1}
  return mean + llt.matrixU().solve(z);
}

inline double group_ssr(const GroupData& g, const Eigen::VectorXd& theta) {
  const double ssr =
      g.yty - 2.0 * theta.dot(g.zty) + theta.dot(g.ztz.selfadjointView<Eigen::Lower>() * theta);
  return std::max(ssr, 0.0);
}

}  // namespace detail

// Gibbs sampler over the conjugate linear hierarchy. With use_external the
// control arm has one (intercept, slopes) block per data source shrunk to a
// common mean; without it a single block with the N(0, 10^2) priors directly.
// use_covariates = false drops the slopes entirely.
inline std::unique_ptr<LinearSurfacePosterior> fit_linear_model(
    const TrialDataset& data, const McmcConfig& mcmc, const LinearModelOptions& options,
    bool use_covariates, bool use_external) {
  data.validate();
  mcmc.validate();
  const std::size_t q = use_covariates ? data.num_covariates() : 0;
  if (use_covariates && q == 0) {
    throw std::invalid_argument("linear model: dataset has no covariates");
  }
  const std::size_t groups = use_external ? static_cast<std::size_t>(data.num_sources()) : 1;
  if (use_external && groups < 2) {
    throw std::invalid_argument("linear model: borrowing requires at least one external source");
  }

  std::vector<double> center, scale;
  if (options.standardize_covariates && q > 0) {
    center.resize(q);
    scale.resize(q);
    for (std::size_t j = 0; j < q; ++j) {
      center[j] = mean_of(data.covariates[j]);
      double sd = sd_of(data.covariates[j]);
      scale[j] = sd > 0.0 ? sd : 1.0;
    }
  }
  auto design_row = [&](std::size_t i) {
    Eigen::VectorXd z(static_cast<Eigen::Index>(q) + 1);
    z(0) = 1.0;
    for (std::size_t j = 0; j < q; ++j) {
      double v = data.covariates[j][i];
      if (!center.empty()) v = (v - center[j]) / scale[j];
      z(static_cast<Eigen::Index>(j) + 1) = v;
    }
    return z;
  };

  // Per-group cross products for the control arm, one block for treatment.
  std::vector<detail::GroupData> control(groups);
  {
    std::vector<std::vector<Eigen::VectorXd>> rows(groups);
    std::vector<std::vector<double>> ys(groups);
    for (std::size_t i = 0; i < data.num_rows(); ++i) {
      if (data.arm[i] != 0) continue;
      if (!use_external && data.source[i] != 0) continue;
      const auto s = use_external ? static_cast<std::size_t>(data.source[i]) : 0;
      rows[s].push_back(design_row(i));
      ys[s].push_back(data.outcome[i]);
    }
    for (std::size_t s = 0; s < groups; ++s) {
      if (ys[s].size() < (use_covariates ? 2u : 1u)) {
        throw std::invalid_argument("linear model: too few control rows in source " +
                                    std::to_string(s));
      }
      control[s] = detail::accumulate_group(rows[s], ys[s]);
    }
  }
  detail::GroupData treated;
  {
    std::vector<Eigen::VectorXd> rows;
    std::vector<double> ys;
    for (std::size_t i : data.rows_where(1, 0)) {
      rows.push_back(design_row(i));
      ys.push_back(data.outcome[i]);
    }
    if (ys.size() < 2) throw std::invalid_argument("linear model: too few treated rows");
    treated = detail::accumulate_group(rows, ys);
  }

  const auto p = static_cast<Eigen::Index>(q) + 1;
  const double nu = kVariancePriorNu;
  Rng rng(mcmc.seed);

  // State
  std::vector<Eigen::VectorXd> theta0(groups, Eigen::VectorXd::Zero(p));
  Eigen::VectorXd hyper_mean = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd group_var = Eigen::VectorXd::Ones(p);  // tau_alpha^2, tau_beta^2
  if (options.fixed_group_variance) group_var.setConstant(*options.fixed_group_variance);
  Eigen::VectorXd theta1 = Eigen::VectorXd::Zero(p);
  double sigma0_sq = 1.0;
  double sigma1_sq = 1.0;
  {
    double pooled = 0.0;
    std::size_t n0 = 0;
    for (std::size_t s = 0; s < groups; ++s) {
      theta0[s](0) = control[s].y_mean;
      pooled += detail::group_ssr(control[s], theta0[s]);
      n0 += control[s].n;
    }
    sigma0_sq = std::max(pooled / static_cast<double>(n0), 1e-8);
    theta1(0) = treated.y_mean;
    sigma1_sq = std::max(detail::group_ssr(treated, theta1) / static_cast<double>(treated.n), 1e-8);
    for (std::size_t s = 0; s < groups; ++s) hyper_mean(0) += theta0[s](0);
    hyper_mean(0) /= static_cast<double>(groups);
  }

  auto result = std::make_unique<LinearSurfacePosterior>(groups, q, center, scale);
  const double g = static_cast<double>(groups);

  for (int it = 0; it < mcmc.n_iter; ++it) {
    if (use_external) {
      // hypermeans
      for (Eigen::Index j = 0; j < p; ++j) {
        double total = 0.0;
        for (const auto& th : theta0) total += th(j);
        const double prec = 1.0 / kLocationPriorVar + g / group_var(j);
        const double mean = (total / group_var(j)) / prec;
        hyper_mean(j) = rng.normal(mean, std::sqrt(1.0 / prec));
      }
      // hypervariances
      if (!options.fixed_group_variance) {
        for (Eigen::Index j = 0; j < p; ++j) {
          double ss = 0.0;
          for (const auto& th : theta0) ss += (th(j) - hyper_mean(j)) * (th(j) - hyper_mean(j));
          group_var(j) = rng.inv_gamma(nu + 0.5 * g, nu + 0.5 * ss);
        }
      }
    }

    // control coefficients, one block per source
    const Eigen::VectorXd prior_mean = use_external ? hyper_mean : Eigen::VectorXd::Zero(p);
    Eigen::VectorXd prior_prec(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      prior_prec(j) = use_external ? 1.0 / group_var(j) : 1.0 / kLocationPriorVar;
    }
    for (std::size_t s = 0; s < groups; ++s) {
      Eigen::MatrixXd precision = control[s].ztz / sigma0_sq;
      precision.diagonal() += prior_prec;
      Eigen::VectorXd linear = control[s].zty / sigma0_sq + prior_prec.asDiagonal() * prior_mean;
      theta0[s] = detail::draw_gaussian_coefs(precision, linear, rng);
    }

    // treatment coefficients
    {
      Eigen::MatrixXd precision = treated.ztz / sigma1_sq;
      precision.diagonal().array() += 1.0 / kLocationPriorVar;
      Eigen::VectorXd linear = treated.zty / sigma1_sq;
      theta1 = detail::draw_gaussian_coefs(precision, linear, rng);
    }

    // error variances
    {
      double ssr = 0.0;
      std::size_t n0 = 0;
      for (std::size_t s = 0; s < groups; ++s) {
        ssr += detail::group_ssr(control[s], theta0[s]);
        n0 += control[s].n;
      }
      sigma0_sq = rng.inv_gamma(nu + 0.5 * static_cast<double>(n0), nu + 0.5 * ssr);
      sigma1_sq = rng.inv_gamma(nu + 0.5 * static_cast<double>(treated.n),
                                nu + 0.5 * detail::group_ssr(treated, theta1));
    }

    if (it >= mcmc.n_burn) {
      result->append_draw(theta0, theta1, std::sqrt(sigma0_sq), std::sqrt(sigma1_sq));
    }
  }
  return result;
}

inline std::unique_ptr<LinearSurfacePosterior> fit_hlm(const TrialDataset& data,
                                                       const McmcConfig& mcmc,
                                                       const LinearModelOptions& options = {}) {
  return fit_linear_model(data, mcmc, options, /*use_covariates=*/true, /*use_external=*/true);
}

inline std::unique_ptr<LinearSurfacePosterior> fit_nnhm(const TrialDataset& data,
                                                        const McmcConfig& mcmc,
                                                        const LinearModelOptions& options = {}) {
  return fit_linear_model(data, mcmc, options, /*use_covariates=*/false, /*use_external=*/true);
}

inline std::unique_ptr<LinearSurfacePosterior> fit_hlm_no_borrow(
    const TrialDataset& data, const McmcConfig& mcmc, const LinearModelOptions& options = {}) {
  return fit_linear_model(data, mcmc, options, /*use_covariates=*/true, /*use_external=*/false);
}

inline std::unique_ptr<LinearSurfacePosterior> fit_nnhm_no_borrow(
    const TrialDataset& data, const McmcConfig& mcmc, const LinearModelOptions& options = {}) {
  return fit_linear_model(data, mcmc, options, /*use_covariates=*/false, /*use_external=*/false);
}

}  // namespace trialbart
