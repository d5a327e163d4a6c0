#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "oracles.hpp"
#include "proxdm/errors.hpp"
#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/rng.hpp"

using namespace proxdm;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double e : v) x[i++] = e;
    return x;
}

GaussianMixture random_mixture(CounterRng& rng, Eigen::Index d, std::size_t k) {
    std::vector<double> w(k), var(k);
    double total = 0.0;
    for (auto& e : w) total += (e = 0.2 + rng.uniform());
    for (auto& e : w) e /= total;
    total = 0.0;
    for (double e : w) total += e;
    w.back() += 1.0 - total;
    Matrix means(d, static_cast<Eigen::Index>(k));
    for (Eigen::Index c = 0; c < means.cols(); ++c)
        for (Eigen::Index j = 0; j < d; ++j) means(j, c) = 4.0 * (rng.uniform() - 0.5);
    for (auto& e : var) e = 0.2 + 1.8 * rng.uniform();
    return GaussianMixture(std::move(w), std::move(means), std::move(var));
}

Vector random_point(CounterRng& rng, Eigen::Index d, double scale) {
    Vector x(d);
    for (Eigen::Index j = 0; j < d; ++j) x[j] = scale * (rng.uniform() - 0.5);
    return x;
}

}  // namespace

TEST_CASE("mixture construction enforces its invariants") {
    CHECK_THROWS_AS(GaussianMixture({0.5, 0.6}, Matrix::Zero(1, 2), {1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(GaussianMixture({1.0}, Matrix::Zero(1, 1), {0.0}), ConfigError);
    CHECK_THROWS_AS(GaussianMixture({0.5, 0.5}, Matrix::Zero(1, 1), {1.0, 1.0}), ConfigError);
    CHECK_THROWS_AS(GaussianMixture({}, Matrix::Zero(1, 0), {}), ConfigError);
    CHECK_NOTHROW(GaussianMixture::point_cloud(Matrix::Random(7, 2)));
}

TEST_CASE("marginal_at") {
    const auto spec = ScheduleSpec::constant(2.0, 1.0);
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    for (double t : {0.0, 0.3, 1.0}) {
        const auto m = marginal_at(stdn, spec, t);
        CHECK(m.mean(0).norm() == 0.0);
        CHECK(m.variance(0) == doctest::Approx(1.0).epsilon(1e-15));
    }

    Matrix pts(2, 2);
    pts << 1.0, 2.0, -4.0, 0.5;
    const auto cloud = GaussianMixture::point_cloud(pts, 1e-6);
    const double t = std::log(2.0);  // abar = e^{-2t} = 0.25
    const auto m = marginal_at(cloud, spec, t);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK((m.mean(i) - 0.5 * cloud.mean(i)).norm() < 1e-15);
        CHECK(m.variance(i) == doctest::Approx(0.25e-6 + 0.75).epsilon(1e-14));
    }

    const Vector mu = vec({1.5, -2.0});
    const auto g = GaussianMixture::gaussian(mu, 0.3);
    const auto mt = marginal_at(g, spec, 0.7);
    CHECK((mt.mean(0) - std::exp(-0.7) * mu).norm() < 1e-15);
    CHECK(mt.variance(0) == doctest::Approx(std::exp(-1.4) * 0.3 + 1.0 - std::exp(-1.4)).epsilon(1e-14));

    CHECK_THROWS_AS(marginal_at(g, spec, 1.2), std::domain_error);
}

TEST_CASE("forward reparameterization matches marginal moments") {
    const auto spec = ScheduleSpec::linear(0.1, 20.0, 1.0);
    CounterRng gen(3);
    const auto base = random_mixture(gen, 2, 3);
    const double t = 0.15;
    const double a = alpha_bar(spec, t);
    const std::size_t n = 40000;
    const Matrix x0 = sample_target(base, n, 11);
    CounterRng noise(12);
    Matrix xt(x0.rows(), x0.cols());
    for (Eigen::Index r = 0; r < xt.rows(); ++r)
        for (Eigen::Index j = 0; j < xt.cols(); ++j)
            xt(r, j) = std::sqrt(a) * x0(r, j) + std::sqrt(1.0 - a) * noise.normal();

    const auto mt = marginal_at(base, spec, t);
    const Vector mean = mt.overall_mean();
    for (Eigen::Index j = 0; j < 2; ++j) {
        double var = 0.0;
        for (std::size_t i = 0; i < mt.size(); ++i)
            var += mt.weight(i) * (mt.variance(i) + mt.mean(i)[j] * mt.mean(i)[j]);
        var -= mean[j] * mean[j];
        const double emp = xt.col(j).mean();
        CHECK(std::abs(emp - mean[j]) <= 4.0 * std::sqrt(var / n));
    }
}

TEST_CASE("log_density") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    CHECK(log_density(stdn, Vector::Zero(2)) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-15));
    CHECK(log_density(stdn, Vector::Zero(2)) == doctest::Approx(-1.837877).epsilon(1e-6));

    Matrix m(1, 2);
    m << -1.0, 1.0;
    const GaussianMixture sym({0.5, 0.5}, m, {0.7, 0.7});
    const auto single = GaussianMixture::gaussian(vec({1.0}), 0.7);
    // At x = 0 both components contribute equally: ln(0.5 + 0.5) + ln N(0; 1, 0.7).
    CHECK(log_density(sym, vec({0.0})) == doctest::Approx(log_density(single, vec({0.0}))).epsilon(1e-15));

    CounterRng rng(5);
    for (int i = 0; i < 100; ++i) {
        const auto gm = random_mixture(rng, 3, 2);
        const Vector x = random_point(rng, 3, 6.0);
        CHECK(std::abs(log_density(gm, x) - oracle::naive_log_density(gm, x)) <= 1e-12);
    }
    CHECK_THROWS_AS(log_density(stdn, Vector::Zero(3)), std::invalid_argument);
}

TEST_CASE("score") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    CHECK((score(stdn, vec({2.0, 0.0})) - vec({-2.0, 0.0})).norm() == 0.0);

    Matrix m(2, 2);
    m << -1.0, 1.0, 0.5, 0.5;
    const GaussianMixture sym({0.5, 0.5}, m, {0.4, 0.4});
    CHECK(score(sym, vec({0.0, 0.5})).norm() < 1e-15);

    CounterRng rng(6);
    for (int fixture = 0; fixture < 5; ++fixture) {
        const auto gm = random_mixture(rng, 2 + fixture % 2, 1 + fixture);
        double worst = 0.0;
        for (int q = 0; q < 100; ++q) {
            const Vector x = random_point(rng, gm.dim(), 6.0);
            const Vector fd = oracle::fd_gradient(
                [&](const Vector& v) { return oracle::naive_log_density(gm, v); }, x, 1e-5);
            worst = std::max(worst, (score(gm, x) - fd).cwiseAbs().maxCoeff());
        }
        CHECK(worst <= 1e-6);
    }
}

TEST_CASE("hessian_log_density") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(3), 1.0);
    CHECK((hessian_log_density(stdn, vec({0.3, -2.0, 1.0})) + Matrix::Identity(3, 3)).norm() < 1e-15);

    CounterRng rng(7);
    for (int fixture = 0; fixture < 5; ++fixture) {
        const auto gm = random_mixture(rng, 2 + fixture % 2, 2 + fixture);
        double worst = 0.0;
        for (int q = 0; q < 100; ++q) {
            const Vector x = random_point(rng, gm.dim(), 6.0);
            const Matrix h = hessian_log_density(gm, x);
            CHECK((h - h.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
            const Matrix fd = oracle::fd_jacobian([&](const Vector& v) { return score(gm, v); }, x, 1e-5);
            worst = std::max(worst, (h - fd).cwiseAbs().maxCoeff());
        }
        CHECK(worst <= 1e-5);
    }
}

TEST_CASE("mmse_denoise") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const Vector x = vec({2.0, 0.0});
    CHECK(mmse_denoise(stdn, x, 0.0) == x);
    CHECK(mmse_denoise(stdn, x, 1.0).norm() < 1e-15);

    CounterRng rng(8);
    const auto gm = random_mixture(rng, 2, 4);
    const Vector y = random_point(rng, 2, 4.0);
    CHECK((mmse_denoise(gm, y, 0.37) - (y + 0.37 * score(gm, y))).norm() <= 1e-12);
}

TEST_CASE("prox_log_density examples") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const auto r = prox_log_density(stdn, {1.0, vec({2.0, 0.0})});
    CHECK((r.point - vec({1.0, 0.0})).norm() <= 1e-12);
    CHECK(r.grad_residual_norm <= 1e-10);

    CounterRng rng(9);
    for (int i = 0; i < 20; ++i) {
        const auto gm = random_mixture(rng, 2, 3);
        const Vector x = random_point(rng, 2, 8.0);
        const auto tiny = prox_log_density(gm, {1e-12, x});
        CHECK((tiny.point - x).norm() <= 1e-9);
    }

    Matrix m(1, 2);
    m << -3.0, 3.0;
    const GaussianMixture two({0.5, 0.5}, m, {0.25, 0.25});
    const auto p = prox_log_density(two, {0.5, vec({2.9})});
    const double ref = oracle::grid_search_prox_1d(two, 0.5, 2.9);
    CHECK(std::abs(p.point[0] - ref) <= 1e-4);
}

TEST_CASE("prox_log_density properties") {
    CounterRng rng(10);
    for (int i = 0; i < 100; ++i) {
        const Eigen::Index d = 1 + static_cast<Eigen::Index>(rng.below(4));
        const Vector mu = random_point(rng, d, 6.0);
        const double s2 = 0.05 + 3.0 * rng.uniform();
        const double lambda = std::exp(8.0 * (rng.uniform() - 0.5));
        const Vector x = random_point(rng, d, 10.0);
        const auto gm = GaussianMixture::gaussian(mu, s2);
        const auto r = prox_log_density(gm, {lambda, x});
        CHECK((r.point - gaussian_prox(mu, s2, lambda, x)).norm() <= 1e-9);
    }
    for (int i = 0; i < 100; ++i) {
        const auto gm = random_mixture(rng, 2, 1 + rng.below(5));
        const double lambda = std::exp(4.0 * (rng.uniform() - 0.5));
        const Vector x = random_point(rng, 2, 8.0);
        const auto r = prox_log_density(gm, {lambda, x});
        CHECK(r.grad_residual_norm <= 1e-10);
        const Vector grad = -lambda * score(gm, r.point) + (r.point - x);
        CHECK(grad.norm() <= 1e-10);
        CHECK(r.objective <= prox_objective(gm, lambda, x, x));
    }
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    CHECK_THROWS_AS(prox_log_density(stdn, {0.0, Vector::Zero(2)}), std::invalid_argument);
    CHECK_THROWS_AS(prox_log_density(stdn, {1.0, Vector::Zero(2)}, {0.0, 100}), std::invalid_argument);
}

TEST_CASE("prox finds a basin that neither the anchor nor the MMSE point reaches") {
    Matrix m(1, 2);
    m << 2.4925362098621884, -0.42282439880000977;
    const GaussianMixture two({0.65855072311625418, 0.34144927688374582}, m, {0.26601109369937875, 0.64352655339048881});
    const double lambda = 2.7150167240339234, x = -0.067581660907528374;
    const auto r = prox_log_density(two, {lambda, vec({x})});
    CHECK(std::abs(r.point[0] - oracle::grid_search_prox_1d(two, lambda, x)) <= 1e-4);
    CHECK(r.point[0] > 2.0);
    CHECK(r.multistart_winner == 2);
}

TEST_CASE("prox solver reports non-convergence") {
    Matrix m(1, 2);
    m << -0.5, 0.5;
    const GaussianMixture two({0.5, 0.5}, m, {0.25, 0.25});
    Vector x(1);
    x << 0.4;
    CHECK_THROWS_AS(prox_log_density(two, {4.0, x}, {1e-10, 0}), ProxSolverError);
}

TEST_CASE("prox on a narrow point cloud snaps to a point") {
    Matrix pts(3, 2);
    pts << 0.0, 0.0, 1.0, 1.0, -1.0, 0.5;
    const auto cloud = GaussianMixture::point_cloud(pts, 1e-6);
    const auto r = prox_log_density(cloud, {0.01, vec({0.8, 0.9})});
    CHECK((r.point - vec({1.0, 1.0})).norm() < 1e-3);
}

TEST_CASE("sample_target") {
    const auto stdn = GaussianMixture::gaussian(Vector::Zero(2), 1.0);
    const Matrix s = sample_target(stdn, 1000, 1);
    CHECK(s.rows() == 1000);
    CHECK(std::abs(s.col(0).mean()) < 0.15);
    CHECK(std::abs(s.col(1).mean()) < 0.15);

    Matrix pts(4, 2);
    pts << 0.0, 0.0, 3.0, 1.0, -2.0, 2.0, 1.0, -1.0;
    const auto cloud = GaussianMixture::point_cloud(pts, 1e-6);
    const Matrix c = sample_target(cloud, 1000, 2);
    for (Eigen::Index r = 0; r < c.rows(); ++r) {
        double nearest = 1e9;
        for (Eigen::Index p = 0; p < pts.rows(); ++p) nearest = std::min(nearest, (c.row(r) - pts.row(p)).norm());
        CHECK(nearest < 0.01);
    }
    CHECK(sample_target(cloud, 50, 9) == sample_target(cloud, 50, 9));
    CHECK(sample_target(cloud, 50, 9) != sample_target(cloud, 50, 10));
}
