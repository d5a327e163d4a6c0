#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/samplers.hpp"
#include "proxdm/schedule.hpp"

namespace proxdm {

struct W2Report {
    double value = 0.0;
    std::size_t n = 0;
    std::uint64_t assignment_checksum = 0;  // FNV-1a over the optimal permutation
};

/// Largest sample count accepted by the exact assignment solver.
inline constexpr std::size_t kMaxExactW2 = 1024;

/// Optimal-assignment W2 between equal-size empirical measures with uniform
/// weights: W2^2 = (1/n) min_pi sum_i ||a_i - b_pi(i)||^2.
W2Report wasserstein2(const Matrix& a, const Matrix& b);

/// Min-cost perfect matching on an n x n cost matrix; returns row -> column.
std::vector<std::size_t> solve_assignment(const Matrix& cost);

/// Isotropic Gaussian N(mean, cov_scale * I).
struct AffineGaussianState {
    Vector mean;
    double cov_scale = 1.0;
};

/// KL(N(m1, c1 I) || N(m2, c2 I)) in dimension d.
double gaussian_kl(const AffineGaussianState& p, const AffineGaussianState& q, Eigen::Index d);

/// Exact law of a sampler's output when the target is a single isotropic
/// Gaussian, so every score or prox call is affine in its argument. Starts from
/// the N(0, I) initialization (N(0, T I) for VE) and propagates mean and
/// covariance through each step.
AffineGaussianState pushforward_exact(Method method, const ScheduleSpec& spec, const TimeGrid& grid,
                                      const GaussianMixture& target,
                                      std::optional<double> eps_last = std::nullopt);

struct ConvergenceFit {
    std::vector<std::pair<double, double>> points;  // (h, KL) as supplied
    double floor = 0.0;
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/// Least-squares line through (ln h, ln(KL - floor)). Needs at least three
/// points with KL > 0 and at least three strictly above the floor.
ConvergenceFit fit_convergence(const std::vector<std::pair<double, double>>& points, double floor = 0.0);

struct Moments {
    Vector mean;
    Vector var;  // unbiased, per coordinate
};

Moments empirical_moments(const Matrix& samples);

/// One row of a results file: method,N,h,metric,value.
struct ResultRow {
    std::string method;
    std::size_t n_steps = 0;
    double h = 0.0;
    std::string metric;
    double value = 0.0;
};

void write_results_header(std::ostream& os);
void write_result_row(std::ostream& os, const ResultRow& row);

}  // namespace proxdm
