#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the code path it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <vector>

#include <Eigen/Core>

#include "proxdm/gaussian_mixture.hpp"

namespace oracle {

using proxdm::Matrix;
using proxdm::Vector;

/// ln sum_i w_i N(x; mu_i, s_i^2 I) by direct summation, no max shift.
inline double naive_log_density(const proxdm::GaussianMixture& gm, const Vector& x) {
    const double d = static_cast<double>(gm.dim());
    double sum = 0.0;
    for (std::size_t i = 0; i < gm.size(); ++i) {
        const double s2 = gm.variance(i);
        double sq = 0.0;
        for (Eigen::Index j = 0; j < x.size(); ++j) sq += (x[j] - gm.mean(i)[j]) * (x[j] - gm.mean(i)[j]);
        sum += gm.weight(i) * std::pow(2.0 * std::numbers::pi * s2, -0.5 * d) * std::exp(-0.5 * sq / s2);
    }
    return std::log(sum);
}

/// Central-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x, double h) {
    Vector g(x.size());
    for (Eigen::Index j = 0; j < x.size(); ++j) {
        Vector a = x, b = x;
        a[j] += h;
        b[j] -= h;
        g[j] = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

/// Central-difference Jacobian of a vector function; column j is d f / d x_j.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& x, double h) {
    const auto n = x.size();
    Matrix J(f(x).size(), n);
    for (Eigen::Index j = 0; j < n; ++j) {
        Vector a = x, b = x;
        a[j] += h;
        b[j] -= h;
        J.col(j) = (f(a) - f(b)) / (2.0 * h);
    }
    return J;
}

/// Minimizer of g(u) = -lambda ln p(u) + (u - x)^2 / 2 for a 1D mixture by a
/// dense grid scan on [lo, hi] followed by golden-section refinement of the
/// best cell. Uses naive_log_density.
inline double grid_search_prox_1d(const proxdm::GaussianMixture& gm, double lambda, double x,
                                  double lo = -6.0, double hi = 6.0, double step = 1e-5) {
    auto g = [&](double u) {
        Vector v(1);
        v[0] = u;
        return -lambda * naive_log_density(gm, v) + 0.5 * (u - x) * (u - x);
    };
    const auto n = static_cast<long>(std::llround((hi - lo) / step));
    double best_u = lo;
    double best_g = std::numeric_limits<double>::infinity();
    for (long i = 0; i <= n; ++i) {
        const double u = lo + static_cast<double>(i) * step;
        const double v = g(u);
        if (v < best_g) {
            best_g = v;
            best_u = u;
        }
    }
    double a = best_u - step, b = best_u + step;
    const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
    double c = b - phi * (b - a), d = a + phi * (b - a);
    double gc = g(c), gd = g(d);
    for (int it = 0; it < 80; ++it) {
        if (gc < gd) {
            b = d;
            d = c;
            gd = gc;
            c = b - phi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + phi * (b - a);
            gd = g(d);
        }
    }
    return 0.5 * (a + b);
}

/// Exact W2 between equal-size point sets by enumerating all permutations.
inline double brute_force_w2(const Matrix& a, const Matrix& b) {
    const auto n = a.rows();
    std::vector<int> perm(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (int i = 0; i < n; ++i) c += (a.row(i) - b.row(perm[static_cast<std::size_t>(i)])).squaredNorm();
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(n));
}

}  // namespace oracle
