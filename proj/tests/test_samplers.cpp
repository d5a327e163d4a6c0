#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <sstream>

#include "proxdm/errors.hpp"
#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/samplers.hpp"

using namespace proxdm;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) x[i++] = e;
    return x;
}

// Closed-form prox of -lambda ln N(0, I): x / (1 + lambda).
const ProxFn kStdNormalProx = [](const Vector& x, double, double lambda) { return Vector(x / (1.0 + lambda)); };
const ProxFn kIdentityProx = [](const Vector& x, double, double) { return x; };

double empirical_var(const Matrix& s, Eigen::Index col) {
    const double m = s.col(col).mean();
    return (s.col(col).array() - m).square().sum() / static_cast<double>(s.rows() - 1);
}

}  // namespace

TEST_CASE("method names round-trip") {
    for (auto m : {Method::ScoreSDE, Method::ScoreSDEFinalDenoise, Method::ScoreODE, Method::PdaBackward,
                   Method::PdaHybrid, Method::VeProx, Method::PfOdeProx})
        CHECK(parse_method(method_name(m)) == m);
    CHECK_THROWS_AS(parse_method("ddpm"), ConfigError);
}

TEST_CASE("em_step") {
    CHECK(em_step(Vector::Zero(2), 0.3, Vector::Zero(2), Vector::Zero(2)).norm() == 0.0);
    CHECK((em_step(vec({2, 0}), 0.02, vec({-2, 0}), Vector::Zero(2)) - vec({1.98, 0})).norm() < 1e-15);
    CHECK((em_step(Vector::Zero(2), 1.0, Vector::Zero(2), vec({1, 0})) - vec({1, 0})).norm() == 0.0);
}

TEST_CASE("pda_backward_step") {
    CHECK((pda_backward_step(vec({3, 0}), 1.0, kStdNormalProx, 0.0, Vector::Zero(2)) - vec({2, 0})).norm() < 1e-15);
    const Vector x = vec({1.5, -0.7});
    for (double g : {1e-3, 1e-4, 1e-5}) {
        const Vector y = pda_backward_step(x, g, kStdNormalProx, 0.0, Vector::Zero(2));
        CHECK((y - x).norm() <= 2.0 * g * x.norm());
    }
    CHECK_NOTHROW(pda_backward_step(x, 1.999, kStdNormalProx, 0.0, Vector::Zero(2)));
    CHECK_THROWS_AS(pda_backward_step(x, 2.0, kStdNormalProx, 0.0, Vector::Zero(2)), StepSizeError);
}

TEST_CASE("pda_hybrid_step") {
    CHECK((pda_hybrid_step(vec({2, 0}), 1.0, kStdNormalProx, 0.0, Vector::Zero(2)) - vec({1.5, 0})).norm() < 1e-15);
    CHECK_NOTHROW(pda_hybrid_step(vec({2, 0}), 10.0, kStdNormalProx, 0.0, Vector::Zero(2)));
    const Vector x = vec({1.5, -0.7});
    for (double g : {1e-3, 1e-4}) {
        const Vector y = pda_hybrid_step(x, g, kStdNormalProx, 0.0, Vector::Zero(2));
        CHECK((y - x).norm() <= 2.0 * g * x.norm());
    }
}

TEST_CASE("backward and hybrid agree as gamma vanishes") {
    const Vector x = vec({0.8, -1.3});
    const Vector z = vec({0.4, 1.1});
    const Vector a = pda_backward_step(x, 1e-6, kStdNormalProx, 0.0, z);
    const Vector b = pda_hybrid_step(x, 1e-6, kStdNormalProx, 0.0, z);
    CHECK((a - b).norm() <= 1e-9);
}

TEST_CASE("noise is injected before the prox and after the drift") {
    const Vector x = vec({0.8, -1.3});
    const Vector z = vec({0.4, 1.1});
    const double g = 0.25;
    const Vector pda = pda_backward_step(x, g, kIdentityProx, 0.0, z);
    CHECK((pda - (2.0 / (2.0 - g)) * (x + std::sqrt(g) * z)).norm() < 1e-15);
    const Vector hyb = pda_hybrid_step(x, g, kIdentityProx, 0.0, z);
    CHECK((hyb - ((1.0 + 0.5 * g) * x + std::sqrt(g) * z)).norm() < 1e-15);
    const Vector em = em_step(x, g, Vector::Zero(2), z);
    CHECK((em - (x + g * 0.5 * x + std::sqrt(g) * z)).norm() < 1e-15);
    // The prox sees the noisy anchor: a contraction prox shrinks the noise too.
    const Vector shrunk = pda_hybrid_step(x, g, kStdNormalProx, 0.0, z);
    CHECK((shrunk - hyb / (1.0 + g)).norm() < 1e-15);
}

TEST_CASE("score_ode_step") {
    const Vector x = vec({2, 0});
    CHECK((score_ode_step(x, 0.3, -x) - x).norm() == 0.0);
    CHECK((score_ode_step(x, 0.02, vec({-1, 0})) - vec({2.01, 0})).norm() < 1e-15);
    CHECK(score_ode_step(x, 0.0, vec({5, 5})) == x);
}

TEST_CASE("pf_ode_prox_step") {
    CHECK((pf_ode_prox_step(vec({2, 0}), 1.0, kStdNormalProx, 0.0) - vec({2, 0})).norm() < 1e-15);
    const Vector x = vec({1.5, -0.7});
    const Vector y = pf_ode_prox_step(x, 1e-5, kStdNormalProx, 0.0);
    CHECK((y - x).norm() <= 1e-5 * x.norm());
    CHECK(pf_ode_prox_step(x, 0.7, kStdNormalProx, 0.0) == pf_ode_prox_step(x, 0.7, kStdNormalProx, 0.0));
    CHECK_THROWS_AS(pf_ode_prox_step(x, 2.5, kStdNormalProx, 0.0), StepSizeError);
}

TEST_CASE("ve_prox_step") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const ProxFn exact = [&](const Vector& x, double, double lambda) {
        return prox_log_density(stdn, {lambda, x}).point;
    };
    const Vector x = vec({2, 0});
    CHECK((ve_prox_step(x, 1e-12, exact, 0.0, Vector::Zero(2)) - x).norm() <= 1e-9);
    CHECK((ve_prox_step(x, 1.0, exact, 0.0, Vector::Zero(2)) - vec({1, 0})).norm() <= 1e-12);
    const Vector z = vec({1, 1});
    CHECK((ve_prox_step(x, 4.0, kStdNormalProx, 0.0, z) - (x + 2.0 * z) / 5.0).norm() < 1e-15);
}

TEST_CASE("final_denoise") {
    const auto spec = ScheduleSpec::constant(2.0, 1.0);
    const ScoreFn s = [](const Vector& x, double) { return Vector(-x); };
    const Vector x = vec({2, 0});
    CHECK((final_denoise(x, s, spec, 1e-14) - x).norm() < 1e-12);
    const double t_half = 0.5 * std::log(2.0);  // 1 - abar = 0.5
    const Vector y = final_denoise(x, s, spec, t_half);
    CHECK((y - vec({1, 0})).norm() < 1e-14);
    CHECK((final_denoise(y, s, spec, t_half) - vec({0.5, 0})).norm() < 1e-14);
    CHECK_THROWS_AS(final_denoise(x, s, spec, 0.0), ConfigError);
}

TEST_CASE("sampler config validates step sizes eagerly") {
    const auto lin = ScheduleSpec::linear(0.1, 20.0, 1.0);
    CHECK_THROWS_AS(SamplerConfig(Method::PdaBackward, lin, make_uniform_grid(1.0, 5), 10, 1), StepSizeError);
    CHECK_THROWS_AS(SamplerConfig(Method::PfOdeProx, lin, make_uniform_grid(1.0, 5), 10, 1), StepSizeError);
    CHECK_NOTHROW(SamplerConfig(Method::PdaHybrid, lin, make_uniform_grid(1.0, 5), 10, 1));
    CHECK_NOTHROW(SamplerConfig(Method::PdaBackward, lin, make_uniform_grid(1.0, 20), 10, 1));
    CHECK_THROWS_AS(SamplerConfig(Method::PdaHybrid, lin, make_uniform_grid(2.0, 5), 10, 1), ConfigError);
    CHECK_THROWS_AS(SamplerConfig(Method::PdaHybrid, lin, make_uniform_grid(1.0, 5), 0, 1), ConfigError);

    const SamplerConfig fd(Method::ScoreSDEFinalDenoise, lin, make_uniform_grid(1.0, 10), 4, 1);
    CHECK(fd.eps_last() == doctest::Approx(0.1));
}

TEST_CASE("run_sampler basics") {
    const auto spec = ScheduleSpec::constant(2.0, 1.0);
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const auto oracle = OracleHandle::exact(stdn, spec);

    const SamplerConfig none(Method::PdaHybrid, spec, TimeGrid({0.0}), 16, 3);
    const auto t0 = run_sampler(none, oracle, 2);
    REQUIRE(t0.states.size() == 1);
    CHECK(t0.steps() == 0);
    CHECK(t0.output().row(5).transpose() == chain_noise(3, 5, 0, 2));

    const SamplerConfig cfg(Method::PdaBackward, spec, make_uniform_grid(1.0, 8), 32, 42);
    const auto a = run_sampler(cfg, oracle, 2);
    const auto b = run_sampler(cfg, oracle, 2);
    REQUIRE(a.states.size() == 9);
    for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == b.states[k]);

    auto threaded = cfg;
    threaded.threads = 3;
    const auto c = run_sampler(threaded, oracle, 2);
    for (std::size_t k = 0; k < a.states.size(); ++k) CHECK(a.states[k] == c.states[k]);

    OracleHandle prox_only;
    prox_only.prox_fn = oracle.prox_fn;
    CHECK_THROWS_AS(run_sampler(SamplerConfig(Method::ScoreSDE, spec, make_uniform_grid(1.0, 4), 2, 1), prox_only, 2),
                    ConfigError);
}

TEST_CASE("run_sampler attaches step context to prox failures") {
    const auto spec = ScheduleSpec::constant(2.0, 1.0);
    OracleHandle failing;
    failing.prox_fn = [](const Vector&, double t, double) -> Vector {
        if (t < 0.5) throw ProxSolverError("boom", 1.0);
        return Vector::Zero(2);
    };
    const SamplerConfig cfg(Method::PdaHybrid, spec, make_uniform_grid(1.0, 4), 3, 1);
    try {
        run_sampler(cfg, failing, 2);
        FAIL("expected ProxSolverError");
    } catch (const ProxSolverError& e) {
        CHECK(std::string(e.what()).find("step k = 2, chain 0") != std::string::npos);
    }
}

TEST_CASE("final-denoise run equals plain SDE run plus one Tweedie step") {
    const auto spec = ScheduleSpec::linear(0.1, 20.0, 1.0);
    Matrix pts(3, 2);
    pts << 0.0, 1.0, 1.0, -1.0, -1.0, 0.0;
    const auto base = GaussianMixture::point_cloud(pts, 0.01);
    const auto oracle = OracleHandle::exact(base, spec);
    const auto grid = make_uniform_grid(1.0, 10);
    const auto plain = run_sampler(SamplerConfig(Method::ScoreSDE, spec, grid, 50, 7), oracle, 2);
    const SamplerConfig fd_cfg(Method::ScoreSDEFinalDenoise, spec, grid, 50, 7, 0.05);
    const auto fd = run_sampler(fd_cfg, oracle, 2);
    for (std::size_t k = 1; k < plain.states.size(); ++k) CHECK(plain.states[k] == fd.states[k]);
    for (Eigen::Index c = 0; c < 50; ++c) {
        const Vector x = plain.output().row(c).transpose();
        const Vector expected = final_denoise(x, oracle.score_fn, spec, 0.05);
        CHECK(fd.output().row(c).transpose() == expected);
    }
}

TEST_CASE("stationary target: backward fixed point and centred outputs") {
    const double T = 5.0;
    const std::size_t n = 100;
    const double h = T / n;
    const auto spec = ScheduleSpec::constant(2.0, T);
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const auto oracle = OracleHandle::exact(stdn, spec);
    const std::size_t chains = 10000;

    const auto trace = run_sampler(SamplerConfig(Method::PdaBackward, spec, make_uniform_grid(T, n), chains, 2024),
                                   oracle, 2);
    const double fixed = 2.0 / (2.0 + h);
    for (Eigen::Index j = 0; j < 2; ++j) {
        const double v = empirical_var(trace.output(), j);
        CHECK(v >= 0.93);
        CHECK(v <= 1.0);
        CHECK(std::abs(v - fixed) <= 4.0 * fixed * std::sqrt(2.0 / (chains - 1)));
    }

    for (auto m : {Method::ScoreSDE, Method::ScoreSDEFinalDenoise, Method::ScoreODE, Method::PdaBackward,
                   Method::PdaHybrid, Method::PfOdeProx}) {
        const auto t = run_sampler(SamplerConfig(m, spec, make_uniform_grid(T, 20), chains, 99), oracle, 2);
        for (Eigen::Index j = 0; j < 2; ++j) CHECK(std::abs(t.output().col(j).mean()) <= 4.0 / std::sqrt(chains));
    }
}

TEST_CASE("VE prox sampler keeps a stationary-variance target centred") {
    const auto base = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const auto oracle = OracleHandle::exact_ve(base);
    const auto spec = ScheduleSpec::constant(1.0, 4.0);
    const auto t = run_sampler(SamplerConfig(Method::VeProx, spec, make_uniform_grid(4.0, 50), 4000, 5), oracle, 2);
    for (Eigen::Index j = 0; j < 2; ++j) {
        CHECK(std::abs(t.output().col(j).mean()) <= 4.0 * std::sqrt(2.0 / 4000));
        CHECK(empirical_var(t.output(), j) == doctest::Approx(1.0).epsilon(0.15));
    }
}

TEST_CASE("trace export") {
    const auto spec = ScheduleSpec::constant(2.0, 1.0);
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(3), 1.0);
    const auto trace = run_sampler(SamplerConfig(Method::PdaHybrid, spec, make_uniform_grid(1.0, 3), 4, 8),
                                   OracleHandle::exact(stdn, spec), 3);

    std::stringstream bin;
    write_trace_binary(bin, trace);
    const std::string bytes = bin.str();
    CHECK(bytes.substr(0, 4) == "PDMT");
    CHECK(bytes.size() == 4 + 4 + 3 * 8 + 4 * 4 * 3 * 8);
    const auto back = read_trace_binary(bin);
    REQUIRE(back.states.size() == trace.states.size());
    for (std::size_t k = 0; k < back.states.size(); ++k) CHECK(back.states[k] == trace.states[k]);

    std::stringstream bad("PDMX\x01");
    CHECK_THROWS_AS(read_trace_binary(bad), ConfigError);

    std::ostringstream csv;
    write_trace_csv(csv, trace);
    std::istringstream lines(csv.str());
    std::string header;
    std::getline(lines, header);
    CHECK(header == "chain,step,x0,x1,x2");
    std::size_t rows = 0;
    for (std::string l; std::getline(lines, l);) ++rows;
    CHECK(rows == 4 * 4);
}
