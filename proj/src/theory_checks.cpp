#include "proxdm/theory_checks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "proxdm/errors.hpp"
#include "proxdm/io.hpp"
#include "proxdm/metrics.hpp"
#include "proxdm/parallel.hpp"
#include "proxdm/rng.hpp"

namespace proxdm {

namespace {

constexpr double kSlack = 1e-12;

double spectral_norm(const Matrix& sym) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(sym, Eigen::EigenvaluesOnly);
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Marginal time T - kh - t, clamped against round-off at the ends.
double marginal_time(const TheoryFixture& fx, std::size_t k, double t) {
    const double s = fx.T - static_cast<double>(k) * fx.h - t;
    if (s < -1e-9 * fx.T || s > fx.T * (1.0 + 1e-12)) {
        std::ostringstream os;
        os << "G_k: time T - kh - t = " << s << " outside [0, " << fx.T << "]";
        throw ConfigError(os.str());
    }
    return std::clamp(s, 0.0, fx.T);
}

struct GkRaw {
    GkEvaluation eval;
    double hess_norm = 0.0;
    bool invertible = true;
};

GkRaw build_g(const TheoryFixture& fx, std::size_t k, double t, const Vector& x, double identity_coef) {
    if (!(t >= 0.0)) throw ConfigError("G_k: t must be >= 0");
    const auto pt = marginal_at(fx.target, fx.spec, marginal_time(fx, k, t));
    const Matrix H = hessian_log_density(pt, x);
    const auto d = H.rows();
    const Matrix M = identity_coef * Matrix::Identity(d, d) - 2.0 * t * H;
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    const Vector m = es.eigenvalues();

    GkRaw out;
    out.hess_norm = spectral_norm(H);
    out.eval.k = k;
    out.eval.t = t;
    out.eval.x = x;
    if (!(m.minCoeff() > 0.0)) {
        out.invertible = false;
        out.eval.G = Matrix::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
        return out;
    }
    const Vector inv_sq = m.array().square().inverse().matrix();
    out.eval.G = es.eigenvectors() * inv_sq.asDiagonal() * es.eigenvectors().transpose();
    // M is positive definite, so 1/m_i is both a root of G's eigenvalue and
    // ordered opposite to m.
    out.eval.eig_min = inv_sq.minCoeff();
    out.eval.eig_max = inv_sq.maxCoeff();
    out.eval.sqrt_eig_min = 1.0 / m.maxCoeff();
    out.eval.sqrt_eig_max = 1.0 / m.minCoeff();
    return out;
}

struct Bounds {
    double lo, hi, sqrt_lo, sqrt_hi;
};

CheckResult judge(const TheoryFixture& fx, const GkRaw& raw, const Bounds& b, const char* check) {
    CheckResult r{check, fx.name, 0.0, CheckStatus::Pass, {}};
    if (!raw.invertible) {
        r.margin = -std::numeric_limits<double>::infinity();
        r.status = CheckStatus::OutOfRegime;
        r.detail = "matrix not positive definite";
        return r;
    }
    const auto& e = raw.eval;
    r.margin = std::min({e.eig_min - b.lo, b.hi - e.eig_max, e.sqrt_eig_min - b.sqrt_lo, b.sqrt_hi - e.sqrt_eig_max});
    std::ostringstream os;
    os << "k=" << e.k << " t=" << format_double(e.t);
    if (!fx.in_regime()) {
        r.status = CheckStatus::OutOfRegime;
        os << " h=" << format_double(fx.h) << " > 1/(8L+4)=" << format_double(fx.h_max());
    } else if (e.t > fx.h * (1.0 + kSlack)) {
        r.status = CheckStatus::OutOfRegime;
        os << " t exceeds h";
    } else if (raw.hess_norm > fx.L * (1.0 + 1e-9)) {
        r.status = CheckStatus::OutOfRegime;
        os << " |Hessian|=" << format_double(raw.hess_norm) << " exceeds L";
    } else if (r.margin < -kSlack) {
        r.status = CheckStatus::Fail;
    }
    r.detail = os.str();
    return r;
}

GaussianMixture shifted_target() {
    Vector m(2);
    m << 2.0, 0.0;
    return GaussianMixture::gaussian(m, 1.0);
}

}  // namespace

const std::vector<std::string>& builtin_fixture_names() {
    static const std::vector<std::string> names{"stationary", "shifted", "gmm8"};
    return names;
}

TheoryFixture make_fixture(std::string name, GaussianMixture target, double T, std::size_t n_probes,
                           std::uint64_t seed, std::optional<double> h_override) {
    if (!(T > 0.0)) throw ConfigError("fixture: T must be positive");
    if (n_probes == 0) throw ConfigError("fixture: need at least one probe");
    TheoryFixture fx{std::move(name), std::move(target), ScheduleSpec::constant(2.0, T), T, 0.0, 0, 1.0, 0.0, {}};
    fx.M2 = fx.target.second_moment();

    const CounterRng root(seed);
    fx.probes.resize(n_probes);
    std::vector<double> norms(n_probes);
    for (std::size_t p = 0; p < n_probes; ++p) {
        CounterRng rng = root.split(p);
        const double s = T * rng.uniform();
        const auto pt = marginal_at(fx.target, fx.spec, s);
        // Component by inverse CDF on the weights, then an isotropic draw.
        const double u = rng.uniform();
        std::size_t i = 0;
        double acc = pt.weight(0);
        while (u >= acc && i + 1 < pt.size()) acc += pt.weight(++i);
        const Vector x = pt.mean(i) + std::sqrt(pt.variance(i)) * rng.normal_vector(pt.dim());
        fx.probes[p] = {s, x};
        norms[p] = spectral_norm(hessian_log_density(pt, x));
    }
    fx.L = std::max(1.0, *std::max_element(norms.begin(), norms.end()));

    if (h_override) {
        if (!(*h_override > 0.0 && *h_override <= T)) throw ConfigError("fixture: h must lie in (0, T]");
        fx.h = *h_override;
        fx.n_steps = static_cast<std::size_t>(std::ceil(T / fx.h - 1e-9));
    } else {
        fx.n_steps = static_cast<std::size_t>(std::ceil(T * (8.0 * fx.L + 4.0)));
        fx.h = T / static_cast<double>(fx.n_steps);
    }
    return fx;
}

TheoryFixture make_builtin_fixture(const std::string& name, std::uint64_t seed, std::size_t n_probes,
                                   std::optional<double> h_override) {
    if (name == "stationary")
        return make_fixture(name, GaussianMixture::gaussian(Vector::Zero(2), 1.0), 2.0, n_probes, seed, h_override);
    if (name == "shifted") return make_fixture(name, shifted_target(), 2.0, n_probes, seed, h_override);
    if (name == "gmm8") return make_fixture(name, GaussianMixture::ring(8, 2.0, 0.1), 2.0, n_probes, seed, h_override);
    throw ConfigError("unknown theory fixture '" + name + "' (expected stationary, shifted or gmm8)");
}

std::string status_name(CheckStatus s) {
    switch (s) {
        case CheckStatus::Pass: return "pass";
        case CheckStatus::Fail: return "fail";
        case CheckStatus::OutOfRegime: return "out_of_regime";
        case CheckStatus::Skipped: return "skipped";
    }
    return "unknown";
}

GkEvaluation g_backward(const TheoryFixture& fx, std::size_t k, double t, const Vector& x) {
    return build_g(fx, k, t, x, 1.0 - t).eval;
}

GkEvaluation g_hybrid(const TheoryFixture& fx, std::size_t k, double t, const Vector& x) {
    return build_g(fx, k, t, x, 1.0).eval;
}

CheckResult check_g_bounds_backward(const TheoryFixture& fx, std::size_t k, double t, const Vector& x) {
    const double tl = t * fx.L;
    return judge(fx, build_g(fx, k, t, x, 1.0 - t), {1.0 - 4.0 * tl, 1.0 + 18.0 * tl, 1.0 - 2.0 * tl, 1.0 + 6.0 * tl},
                 "g_bounds_backward");
}

CheckResult check_g_bounds_hybrid(const TheoryFixture& fx, std::size_t k, double t, const Vector& x) {
    const double tl = t * fx.L;
    return judge(fx, build_g(fx, k, t, x, 1.0), {1.0 - 4.0 * tl, 1.0 + 12.0 * tl, 1.0 - 2.0 * tl, 1.0 + 4.0 * tl},
                 "g_bounds_hybrid");
}

CheckResult check_second_moment(const TheoryFixture& fx) {
    const double bound = 2.0 * (static_cast<double>(fx.target.dim()) + fx.M2);
    CheckResult r{"second_moment", fx.name, std::numeric_limits<double>::infinity(), CheckStatus::Pass, {}};
    double worst_t = 0.0;
    const auto n = static_cast<std::size_t>(std::floor(fx.T / 0.1 + 1e-9));
    std::vector<double> ts;
    for (std::size_t i = 0; i <= n; ++i) ts.push_back(std::min(fx.T, 0.1 * static_cast<double>(i)));
    if (ts.back() < fx.T) ts.push_back(fx.T);
    for (double t : ts) {
        const double slack = bound - marginal_at(fx.target, fx.spec, t).second_moment();
        if (slack < r.margin) {
            r.margin = slack;
            worst_t = t;
        }
    }
    if (r.margin < -kSlack * bound) r.status = CheckStatus::Fail;
    r.detail = "bound=" + format_double(bound) + " worst_t=" + format_double(worst_t);
    return r;
}

CheckResult check_init_kl(const TheoryFixture& fx) {
    CheckResult r{"init_kl", fx.name, 0.0, CheckStatus::Pass, {}};
    if (!fx.target.is_single_gaussian()) {
        r.status = CheckStatus::Skipped;
        r.margin = std::numeric_limits<double>::quiet_NaN();
        r.detail = "mixture target: KL has no closed form";
        return r;
    }
    const double d = static_cast<double>(fx.target.dim());
    const double bound = 2.0 * (d + fx.M2) * std::exp(-2.0 * fx.T);
    const auto pT = marginal_at(fx.target, fx.spec, fx.T);
    const double kl = gaussian_kl({pT.mean(0), pT.variance(0)}, {Vector::Zero(fx.target.dim()), 1.0}, fx.target.dim());
    r.margin = bound - kl;
    r.detail = "kl=" + format_double(kl) + " bound=" + format_double(bound);
    if (fx.T < 0.25) {
        r.status = CheckStatus::OutOfRegime;
        r.detail += " T<0.25";
    } else if (r.margin < -kSlack) {
        r.status = CheckStatus::Fail;
    }
    return r;
}

std::vector<CheckResult> run_all_checks(const TheoryFixture& fx, unsigned threads) {
    const std::size_t n = fx.probes.size();
    std::vector<CheckResult> back(n), hyb(n);
    parallel_for(n, threads, [&](std::size_t p) {
        const auto& pr = fx.probes[p];
        const double steps_back = (fx.T - pr.s) / fx.h;
        auto k = static_cast<std::size_t>(std::floor(steps_back));
        if (fx.n_steps > 0) k = std::min(k, fx.n_steps - 1);
        const double t = std::clamp(fx.T - static_cast<double>(k) * fx.h - pr.s, 0.0, fx.h);
        back[p] = check_g_bounds_backward(fx, k, t, pr.x);
        hyb[p] = check_g_bounds_hybrid(fx, k, t, pr.x);
    });

    auto fold = [&](const std::vector<CheckResult>& rows, const char* check) {
        CheckResult r{check, fx.name, std::numeric_limits<double>::infinity(), CheckStatus::Pass, {}};
        std::size_t fails = 0, outside = 0;
        for (const auto& row : rows) {
            r.margin = std::min(r.margin, row.margin);
            if (row.status == CheckStatus::Fail) ++fails;
            if (row.status == CheckStatus::OutOfRegime) ++outside;
        }
        if (fails > 0) {
            r.status = CheckStatus::Fail;
        } else if (outside > 0) {
            r.status = CheckStatus::OutOfRegime;
        }
        std::ostringstream os;
        os << "probes=" << rows.size() << " fail=" << fails << " out_of_regime=" << outside
           << " L=" << format_double(fx.L) << " h=" << format_double(fx.h);
        r.detail = os.str();
        return r;
    };
    return {fold(back, "g_bounds_backward"), fold(hyb, "g_bounds_hybrid"), check_second_moment(fx), check_init_kl(fx)};
}

void write_check_csv(std::ostream& os, const std::vector<CheckResult>& rows) {
    os << "check,fixture,margin,pass\n";
    for (const auto& r : rows)
        os << r.check << ',' << r.fixture << ',' << format_double(r.margin) << ',' << status_name(r.status) << '\n';
}

}  // namespace proxdm
