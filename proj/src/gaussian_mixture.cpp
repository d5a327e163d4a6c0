#include "proxdm/gaussian_mixture.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "proxdm/errors.hpp"
#include "proxdm/rng.hpp"

namespace proxdm {

namespace {

void check_dim(const GaussianMixture& gm, const Vector& x) {
    if (x.size() != gm.dim()) {
        std::ostringstream os;
        os << "dimension mismatch: mixture has d = " << gm.dim() << ", point has " << x.size();
        throw std::invalid_argument(os.str());
    }
}

// Per-component log terms, their log-sum-exp, and normalized responsibilities.
struct Posterior {
    std::vector<double> resp;
    double log_total = 0.0;
};

Posterior posterior(const GaussianMixture& gm, const Vector& x) {
    const auto k = gm.size();
    const auto d = gm.dim();
    const double* mu = gm.means().data();
    const double* xp = x.data();
    Posterior p;
    p.resp.resize(k);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < k; ++i, mu += d) {
        double sq = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            const double e = xp[j] - mu[j];
            sq += e * e;
        }
        const double v = gm.log_coef(i) - 0.5 * sq / gm.variance(i);
        p.resp[i] = v;
        top = std::max(top, v);
    }
    // Terms below e^-60 of the largest cannot move the sum; skip their exp.
    double acc = 0.0;
    for (auto& v : p.resp) {
        v = (v - top > -60.0) ? std::exp(v - top) : 0.0;
        acc += v;
    }
    for (auto& v : p.resp) v /= acc;
    p.log_total = top + std::log(acc);
    return p;
}

struct LocalModel {
    double log_p;
    Vector score;
    Matrix hessian;
    double grad_scale;  // magnitude of the summed terms, for the rounding floor
};

LocalModel local_model(const GaussianMixture& gm, const Vector& x) {
    const auto post = posterior(gm, x);
    const auto d = gm.dim();
    const double* means = gm.means().data();
    const double xn = x.norm();
    Vector s = Vector::Zero(d);
    double diag = 0.0;
    double scale = 0.0;
    for (std::size_t i = 0; i < gm.size(); ++i) {
        const double r = post.resp[i];
        if (r == 0.0) continue;
        const double* mu = means + static_cast<Eigen::Index>(i) * d;
        const double c = r / gm.variance(i);
        double mn = 0.0;
        for (Eigen::Index j = 0; j < d; ++j) {
            s[j] -= c * (x[j] - mu[j]);
            mn += mu[j] * mu[j];
        }
        diag += c;
        scale += c * (xn + std::sqrt(mn));
    }
    // Covariance of the per-component scores under the responsibilities.
    Matrix h = Matrix::Identity(d, d) * (-diag);
    Vector a(d);
    for (std::size_t i = 0; i < gm.size(); ++i) {
        const double r = post.resp[i];
        if (r == 0.0) continue;
        const double* mu = means + static_cast<Eigen::Index>(i) * d;
        const double iv = 1.0 / gm.variance(i);
        for (Eigen::Index j = 0; j < d; ++j) a[j] = -(x[j] - mu[j]) * iv - s[j];
        for (Eigen::Index c = 0; c < d; ++c)
            for (Eigen::Index j = c; j < d; ++j) h(j, c) += r * a[j] * a[c];
    }
    for (Eigen::Index c = 0; c < d; ++c)
        for (Eigen::Index j = c + 1; j < d; ++j) h(c, j) = h(j, c);
    return {post.log_total, std::move(s), std::move(h), scale};
}

constexpr std::size_t kExhaustiveComponents = 16;
constexpr std::size_t kBoundedStarts = 3;

struct StartOutcome {
    Vector point;
    double objective;
    double residual;
    std::size_t iterations;
    bool converged;
};

StartOutcome newton_from(const GaussianMixture& gm, double lambda, const Vector& anchor,
                         Vector u, const ProxSolverOptions& opts) {
    constexpr double eps = std::numeric_limits<double>::epsilon();
    const auto d = gm.dim();
    auto objective_of = [&](const Vector& v) {
        return -lambda * log_density(gm, v) + 0.5 * (v - anchor).squaredNorm();
    };

    double best_residual = std::numeric_limits<double>::infinity();
    for (std::size_t it = 0;; ++it) {
        const auto m = local_model(gm, u);
        const double g = -lambda * m.log_p + 0.5 * (u - anchor).squaredNorm();
        const Vector grad = -lambda * m.score + (u - anchor);
        const double res = grad.norm();
        best_residual = std::min(best_residual, res);
        // Rounding floor of the gradient sum; only binds for very narrow components.
        const double floor = 64.0 * eps * (u.norm() + anchor.norm() + lambda * m.grad_scale);
        if (res <= std::max(opts.tol, floor)) return {u, g, res, it, true};
        if (it >= opts.max_iter) return {u, g, best_residual, it, false};

        const Matrix hg = Matrix::Identity(d, d) - lambda * m.hessian;
        Eigen::SelfAdjointEigenSolver<Matrix> eig(hg);
        Vector ev = eig.eigenvalues().cwiseAbs();
        const double shift = 1e-8 * std::max(1.0, ev.maxCoeff());
        ev = ev.cwiseMax(shift);
        const Matrix& q = eig.eigenvectors();
        const Vector dir = -(q * ((q.transpose() * grad).array() / ev.array()).matrix());

        const double slope = grad.dot(dir);
        double step = 1.0;
        bool moved = false;
        for (int ls = 0; ls < 60; ++ls) {
            const Vector trial = u + step * dir;
            const double gt = objective_of(trial);
            if (std::isfinite(gt) && gt <= g + 1e-4 * step * slope) {
                moved = (trial != u);
                u = trial;
                break;
            }
            // Near a flat minimizer the objective change drops below rounding;
            // accept a step that is level within rounding but shrinks the gradient.
            if (std::isfinite(gt) && gt <= g + 8.0 * eps * (std::abs(g) + 1.0) && trial != u) {
                const auto mt = local_model(gm, trial);
                if ((-lambda * mt.score + (trial - anchor)).norm() < res) {
                    moved = true;
                    u = trial;
                    break;
                }
            }
            step *= 0.5;
        }
        if (!moved) {
            // No representable decrease left along the Newton direction.
            return {u, g, res, it, res <= std::max(opts.tol, 1e3 * floor)};
        }
    }
}

}  // namespace

GaussianMixture::GaussianMixture(std::vector<double> weights, Matrix means,
                                 std::vector<double> variances)
    : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    if (weights_.empty()) throw ConfigError("mixture needs at least one component");
    if (weights_.size() != variances_.size() ||
        static_cast<Eigen::Index>(weights_.size()) != means_.cols())
        throw ConfigError("mixture weights, means and variances must have equal length");
    if (means_.rows() < 1) throw ConfigError("mixture dimension must be >= 1");
    double total = 0.0;
    for (double w : weights_) {
        if (!(w >= 0.0)) throw ConfigError("mixture weights must be non-negative");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("mixture weights must sum to 1");
    for (double v : variances_) {
        if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError("mixture variances must be > 0");
    }
    const double d = static_cast<double>(means_.rows());
    log_coef_.resize(weights_.size());
    for (std::size_t i = 0; i < weights_.size(); ++i)
        log_coef_[i] = std::log(weights_[i]) - 0.5 * d * std::log(2.0 * std::numbers::pi * variances_[i]);
}

GaussianMixture GaussianMixture::gaussian(const Vector& mean, double variance) {
    return GaussianMixture({1.0}, Matrix(mean), {variance});
}

GaussianMixture GaussianMixture::point_cloud(const Matrix& points, double variance) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (n == 0) throw ConfigError("point cloud is empty");
    std::vector<double> w(n, 1.0 / static_cast<double>(n));
    // Renormalize so the sum is exactly representable as 1 up to rounding.
    double total = 0.0;
    for (double v : w) total += v;
    w.back() += 1.0 - total;
    return GaussianMixture(std::move(w), points.transpose(), std::vector<double>(n, variance));
}

GaussianMixture GaussianMixture::ring(std::size_t modes, double radius, double variance) {
    if (modes == 0) throw ConfigError("ring mixture needs at least one mode");
    Matrix pts(static_cast<Eigen::Index>(modes), 2);
    for (std::size_t i = 0; i < modes; ++i) {
        const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(modes);
        pts(static_cast<Eigen::Index>(i), 0) = radius * std::cos(a);
        pts(static_cast<Eigen::Index>(i), 1) = radius * std::sin(a);
    }
    return point_cloud(pts, variance);
}

double GaussianMixture::second_moment() const {
    double m2 = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
        m2 += weights_[i] * (mean(i).squaredNorm() + static_cast<double>(dim()) * variances_[i]);
    return m2;
}

Vector GaussianMixture::overall_mean() const {
    Vector m = Vector::Zero(dim());
    for (std::size_t i = 0; i < size(); ++i) m += weights_[i] * mean(i);
    return m;
}

GaussianMixture marginal_at(const GaussianMixture& base, const ScheduleSpec& spec, double t) {
    const double a = alpha_bar(spec, t);
    std::vector<double> var(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) var[i] = a * base.variance(i) + (1.0 - a);
    return GaussianMixture(base.weights(), std::sqrt(a) * base.means(), std::move(var));
}

GaussianMixture ve_marginal_at(const GaussianMixture& base, double t) {
    if (!(t >= 0.0)) throw std::domain_error("VE marginal needs t >= 0");
    std::vector<double> var(base.size());
    for (std::size_t i = 0; i < base.size(); ++i) var[i] = base.variance(i) + t;
    return GaussianMixture(base.weights(), base.means(), std::move(var));
}

double log_density(const GaussianMixture& gm, const Vector& x) {
    check_dim(gm, x);
    return posterior(gm, x).log_total;
}

Vector score(const GaussianMixture& gm, const Vector& x) {
    check_dim(gm, x);
    const auto post = posterior(gm, x);
    Vector s = Vector::Zero(gm.dim());
    for (std::size_t i = 0; i < gm.size(); ++i) {
        if (post.resp[i] == 0.0) continue;
        s.noalias() -= (post.resp[i] / gm.variance(i)) * (x - gm.mean(i));
    }
    return s;
}

Matrix hessian_log_density(const GaussianMixture& gm, const Vector& x) {
    check_dim(gm, x);
    return local_model(gm, x).hessian;
}

Vector mmse_denoise(const GaussianMixture& gm, const Vector& x, double sigma2) {
    if (sigma2 == 0.0) return x;
    return x + sigma2 * score(gm, x);
}

Matrix sample_target(const GaussianMixture& gm, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ConfigError("sample_target needs n >= 1");
    const auto d = gm.dim();
    Matrix out(static_cast<Eigen::Index>(n), d);
    std::vector<double> cdf(gm.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < gm.size(); ++i) cdf[i] = (acc += gm.weight(i));
    const CounterRng root(seed);
    for (std::size_t r = 0; r < n; ++r) {
        auto rng = root.split(r);
        const double u = rng.uniform() * acc;
        auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const auto c = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), gm.size() - 1);
        const double sd = std::sqrt(gm.variance(c));
        for (Eigen::Index j = 0; j < d; ++j)
            out(static_cast<Eigen::Index>(r), j) = gm.mean(c)[j] + sd * rng.normal();
    }
    return out;
}

Vector gaussian_prox(const Vector& mean, double variance, double lambda, const Vector& x) {
    const double r = lambda / variance;
    return (x + r * mean) / (1.0 + r);
}

double prox_objective(const GaussianMixture& gm, double lambda, const Vector& anchor,
                      const Vector& u) {
    return -lambda * log_density(gm, u) + 0.5 * (u - anchor).squaredNorm();
}

ProxResult prox_log_density(const GaussianMixture& gm, const ProxQuery& q,
                            const ProxSolverOptions& opts) {
    check_dim(gm, q.anchor);
    if (!(q.lambda > 0.0)) throw std::invalid_argument("prox: lambda must be > 0");
    if (!(opts.tol > 0.0)) throw std::invalid_argument("prox: tol must be > 0");

    ProxResult best;
    bool found = false;
    double best_residual = std::numeric_limits<double>::infinity();
    auto run = [&](const Vector& start, std::size_t tag) {
        if (!start.allFinite()) return;
        auto out = newton_from(gm, q.lambda, q.anchor, start, opts);
        best_residual = std::min(best_residual, out.residual);
        if (!out.converged) return;
        if (!found || out.objective < best.objective) {
            best.point = std::move(out.point);
            best.objective = out.objective;
            best.grad_residual_norm = out.residual;
            best.iterations = out.iterations;
            best.multistart_winner = tag;
            found = true;
        }
    };
    run(q.anchor, 0);
    run(mmse_denoise(gm, q.anchor, q.lambda), 1);

    // Each component alone bounds -log p from above, and its closed-form prox
    // can sit in a basin the first two starts miss. Small mixtures try every
    // component; large ones only the few with the tightest bounds, and only
    // when the start already improves on the best point found.
    if (gm.size() > 1) {
        std::vector<std::pair<double, std::size_t>> bounds(gm.size());
        std::vector<Vector> cands(gm.size());
        for (std::size_t i = 0; i < gm.size(); ++i) {
            cands[i] = gaussian_prox(gm.mean(i), gm.variance(i), q.lambda, q.anchor);
            const double r2 = (cands[i] - gm.mean(i)).squaredNorm();
            bounds[i] = {-q.lambda * (gm.log_coef(i) - 0.5 * r2 / gm.variance(i)) +
                             0.5 * (cands[i] - q.anchor).squaredNorm(),
                         i};
        }
        const bool exhaustive = gm.size() <= kExhaustiveComponents;
        const std::size_t tries = exhaustive ? gm.size() : kBoundedStarts;
        std::partial_sort(bounds.begin(), bounds.begin() + static_cast<std::ptrdiff_t>(tries), bounds.end());
        for (std::size_t j = 0; j < tries; ++j) {
            const Vector& c = cands[bounds[j].second];
            if (exhaustive || !found || prox_objective(gm, q.lambda, q.anchor, c) < best.objective) run(c, 2);
        }
    }
    if (!found) {
        std::ostringstream os;
        os << "prox solver did not converge (lambda = " << q.lambda
           << ", best gradient residual = " << best_residual << ")";
        throw ProxSolverError(os.str(), best_residual);
    }
    return best;
}

}  // namespace proxdm
