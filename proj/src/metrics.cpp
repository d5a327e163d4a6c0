#include "proxdm/metrics.hpp"

#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "proxdm/errors.hpp"
#include "proxdm/io.hpp"

namespace proxdm {

std::vector<std::size_t> solve_assignment(const Matrix& cost) {
    // Shortest augmenting path with dual potentials (Kuhn-Munkres), O(n^3).
    const auto n = static_cast<std::size_t>(cost.rows());
    if (cost.cols() != cost.rows()) throw ConfigError("assignment needs a square cost matrix");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1);
    std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
    std::vector<char> used(n + 1);
    for (std::size_t i = 1; i <= n; ++i) {
        match[0] = i;
        std::size_t j0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = match[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(static_cast<Eigen::Index>(i0 - 1), static_cast<Eigen::Index>(j - 1)) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[match[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (match[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            match[j0] = match[j1];
            j0 = j1;
        } while (j0 != 0);
    }
    std::vector<std::size_t> row_to_col(n);
    for (std::size_t j = 1; j <= n; ++j) row_to_col[match[j] - 1] = j - 1;
    return row_to_col;
}

W2Report wasserstein2(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ConfigError("wasserstein2: sample sets must have equal count and dimension");
    const auto n = static_cast<std::size_t>(a.rows());
    if (n == 0 || n > kMaxExactW2) {
        std::ostringstream os;
        os << "wasserstein2: unsupported size n = " << n << " (exact mode needs 1 <= n <= " << kMaxExactW2 << ")";
        throw ConfigError(os.str());
    }
    Matrix cost(a.rows(), a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < b.rows(); ++j) cost(i, j) = (a.row(i) - b.row(j)).squaredNorm();
    const auto perm = solve_assignment(cost);
    double total = 0.0;
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (std::size_t i = 0; i < n; ++i) {
        total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
        for (int byte = 0; byte < 8; ++byte) {
            h ^= (static_cast<std::uint64_t>(perm[i]) >> (8 * byte)) & 0xffu;
            h *= 0x100000001b3ull;
        }
    }
    return {std::sqrt(total / static_cast<double>(n)), n, h};
}

double gaussian_kl(const AffineGaussianState& p, const AffineGaussianState& q, Eigen::Index d) {
    if (!(p.cov_scale > 0.0) || !(q.cov_scale > 0.0))
        throw ConfigError("gaussian_kl: covariance scales must be positive");
    const double r = p.cov_scale / q.cov_scale;
    const double dd = static_cast<double>(d);
    // r - 1 - ln r loses everything to cancellation near r = 1; log1p keeps it.
    const double x = r - 1.0;
    const double trace_term = (std::abs(x) < 1e-4) ? x - std::log1p(x) : r - 1.0 - std::log(r);
    return 0.5 * (dd * trace_term + (p.mean - q.mean).squaredNorm() / q.cov_scale);
}

AffineGaussianState pushforward_exact(Method method, const ScheduleSpec& spec, const TimeGrid& grid,
                                      const GaussianMixture& target, std::optional<double> eps_last) {
    if (!target.is_single_gaussian())
        throw ConfigError("pushforward_exact: target must be a single isotropic Gaussian");
    const Vector mu = target.mean(0);
    const double s2 = target.variance(0);
    const bool ve = method == Method::VeProx;

    // Marginal at time t: mean scale and variance.
    auto marginal = [&](double t) -> std::pair<double, double> {
        if (ve) return {1.0, s2 + t};
        const double a = std::exp(-spec.integrated(t));
        return {std::sqrt(a), a * s2 + 1.0 - a};
    };

    const auto gammas = method_step_sizes(method, spec, grid);
    AffineGaussianState st{Vector::Zero(mu.size()), ve ? grid.horizon() : 1.0};
    for (std::size_t k = grid.steps(); k >= 1; --k) {
        const double g = gammas[k - 1];
        double gain = 0.0, noise = 0.0;
        Vector shift;
        if (method == Method::ScoreSDE || method == Method::ScoreSDEFinalDenoise || method == Method::ScoreODE) {
            // Score at t_k is -(x - ms mu) / v. The ODE halves the score term
            // and drops the noise.
            const auto [ms, v] = marginal(grid[k]);
            const double w = (method == Method::ScoreODE) ? 0.5 * g : g;
            gain = 1.0 + 0.5 * g - w / v;
            noise = (method == Method::ScoreODE) ? 0.0 : g;
            shift = (w / v) * ms * mu;
        } else {
            const auto [ms, v] = marginal(grid[k - 1]);
            double pre = 0.0, lambda = 0.0;
            switch (method) {
                case Method::PdaBackward:
                    if (!(g < 2.0)) throw StepSizeError("pushforward_exact: backward step with gamma >= 2", g);
                    pre = 2.0 / (2.0 - g);
                    lambda = 2.0 * g / (2.0 - g);
                    noise = pre * pre * g;
                    break;
                case Method::PdaHybrid:
                    pre = 1.0 + 0.5 * g;
                    lambda = g;
                    noise = g;
                    break;
                case Method::PfOdeProx:
                    if (!(g < 2.0)) throw StepSizeError("pushforward_exact: PF-ODE step with gamma >= 2", g);
                    pre = 2.0 / (2.0 - g);
                    lambda = g / (2.0 - g);
                    noise = 0.0;
                    break;
                case Method::VeProx:
                    pre = 1.0;
                    lambda = g;
                    noise = g;
                    break;
                default:
                    break;
            }
            // prox of -lambda ln N(m, v I) is y -> (v y + lambda m) / (v + lambda).
            const double a = v / (v + lambda);
            gain = a * pre;
            noise *= a * a;
            shift = (lambda / (v + lambda)) * ms * mu;
        }
        st.mean = gain * st.mean + shift;
        st.cov_scale = gain * gain * st.cov_scale + noise;
    }
    if (method == Method::ScoreSDEFinalDenoise && grid.steps() > 0) {
        const double te = eps_last.value_or(grid[1]);
        const auto [ms, v] = marginal(te);
        const double w = 1.0 - std::exp(-spec.integrated(te));
        const double gain = 1.0 - w / v;
        st.mean = gain * st.mean + (w / v) * ms * mu;
        st.cov_scale *= gain * gain;
    }
    return st;
}

ConvergenceFit fit_convergence(const std::vector<std::pair<double, double>>& points, double floor) {
    if (points.size() < 3) throw NumericError("fit_convergence: need at least 3 points");
    ConvergenceFit fit;
    fit.points = points;
    fit.floor = floor;
    std::vector<double> xs, ys;
    for (const auto& [h, kl] : points) {
        if (!(kl > 0.0) || !(h > 0.0)) throw NumericError("fit_convergence: h and KL must be positive");
        if (kl - floor > 0.0) {
            xs.push_back(std::log(h));
            ys.push_back(std::log(kl - floor));
        }
    }
    if (xs.size() < 3) throw NumericError("fit_convergence: fewer than 3 points above the KL floor");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    if (!(sxx > 0.0)) throw NumericError("fit_convergence: step sizes must differ");
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    fit.r2 = (syy > 0.0) ? (sxy * sxy) / (sxx * syy) : 1.0;
    return fit;
}

Moments empirical_moments(const Matrix& samples) {
    if (samples.rows() < 2) throw ConfigError("empirical_moments: need n >= 2 samples");
    const double n = static_cast<double>(samples.rows());
    Moments m;
    m.mean = samples.colwise().mean().transpose();
    m.var = ((samples.rowwise() - m.mean.transpose()).array().square().colwise().sum() / (n - 1.0)).transpose();
    return m;
}

void write_results_header(std::ostream& os) { os << "method,N,h,metric,value\n"; }

void write_result_row(std::ostream& os, const ResultRow& row) {
    os << row.method << ',' << row.n_steps << ',' << format_double(row.h) << ',' << row.metric << ','
       << format_double(row.value) << '\n';
}

}  // namespace proxdm
