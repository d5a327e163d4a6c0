#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "proxdm/schedule.hpp"

namespace proxdm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Mixture of isotropic Gaussians sum_i w_i N(mu_i, sigma_i^2 I_d).
///
/// Means are stored column-wise in a d x K matrix. Weights must sum to one
/// within 1e-12 and every variance must be positive.
class GaussianMixture {
  public:
    GaussianMixture(std::vector<double> weights, Matrix means, std::vector<double> variances);

    static GaussianMixture gaussian(const Vector& mean, double variance);

    /// Equal-weight mixture with one narrow component per row of `points`.
    static GaussianMixture point_cloud(const Matrix& points, double variance = 1e-6);

    /// K modes evenly spaced on a circle of the given radius in the plane.
    static GaussianMixture ring(std::size_t modes, double radius, double variance);

    Eigen::Index dim() const { return means_.rows(); }
    std::size_t size() const { return weights_.size(); }
    double weight(std::size_t i) const { return weights_[i]; }
    double variance(std::size_t i) const { return variances_[i]; }
    auto mean(std::size_t i) const { return means_.col(static_cast<Eigen::Index>(i)); }
    const Matrix& means() const { return means_; }
    const std::vector<double>& weights() const { return weights_; }
    const std::vector<double>& variances() const { return variances_; }

    bool is_single_gaussian() const { return weights_.size() == 1; }

    /// E ||X||^2 = sum_i w_i (||mu_i||^2 + d sigma_i^2).
    double second_moment() const;
    Vector overall_mean() const;

    /// log w_i - (d/2) log(2 pi sigma_i^2).
    double log_coef(std::size_t i) const { return log_coef_[i]; }

  private:
    std::vector<double> weights_;
    Matrix means_;
    std::vector<double> variances_;
    std::vector<double> log_coef_;
};

/// Law of sqrt(abar_t) X_0 + sqrt(1 - abar_t) eps for X_0 ~ base.
GaussianMixture marginal_at(const GaussianMixture& base, const ScheduleSpec& spec, double t);

/// Variance-exploding marginal: X_0 + sqrt(t) eps.
GaussianMixture ve_marginal_at(const GaussianMixture& base, double t);

double log_density(const GaussianMixture& gm, const Vector& x);
Vector score(const GaussianMixture& gm, const Vector& x);
Matrix hessian_log_density(const GaussianMixture& gm, const Vector& x);

/// Tweedie denoiser x + sigma2 * score(x).
Vector mmse_denoise(const GaussianMixture& gm, const Vector& x, double sigma2);

/// n x d matrix of i.i.d. draws; row i depends only on (seed, i).
Matrix sample_target(const GaussianMixture& gm, std::size_t n, std::uint64_t seed);

struct ProxQuery {
    double lambda;
    Vector anchor;
};

struct ProxResult {
    Vector point;
    double objective = 0.0;
    double grad_residual_norm = 0.0;
    std::size_t iterations = 0;
    std::size_t multistart_winner = 0;  // 0: anchor, 1: MMSE point, 2: component start
};

struct ProxSolverOptions {
    double tol = 1e-10;
    std::size_t max_iter = 100;
};

/// Minimizes g(u) = -lambda log p(u) + 0.5 ||u - x||^2 by damped Newton from
/// the anchor and from the MMSE point, returning the lower-objective
/// stationary point. A third start at the single-component prox with the best
/// objective bound is tried when it already improves on both. Throws
/// ProxSolverError if no start converges.
ProxResult prox_log_density(const GaussianMixture& gm, const ProxQuery& q,
                            const ProxSolverOptions& opts = {});

/// Closed form (x + (lambda/s2) mu) / (1 + lambda/s2) for a single Gaussian.
Vector gaussian_prox(const Vector& mean, double variance, double lambda, const Vector& x);

/// Objective g(u) of the prox subproblem.
double prox_objective(const GaussianMixture& gm, double lambda, const Vector& anchor,
                      const Vector& u);

}  // namespace proxdm
