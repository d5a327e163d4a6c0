#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "proxdm/errors.hpp"
#include "proxdm/rng.hpp"
#include "proxdm/schedule.hpp"

using namespace proxdm;

TEST_CASE("beta_at evaluates both schedule kinds") {
    const auto lin = ScheduleSpec::linear(0.1, 20.0, 1.0);
    CHECK(beta_at(lin, 0.0) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(beta_at(lin, 0.5) == doctest::Approx(10.05).epsilon(1e-15));
    CHECK(beta_at(lin, 1.0) == doctest::Approx(20.0).epsilon(1e-15));

    const auto c = ScheduleSpec::constant(2.0, 5.0);
    CHECK(beta_at(c, 0.0) == 2.0);
    CHECK(beta_at(c, 3.7) == 2.0);

    CHECK_THROWS_AS(beta_at(lin, -1e-9), std::domain_error);
    CHECK_THROWS_AS(beta_at(lin, 1.0 + 1e-9), std::domain_error);
}

TEST_CASE("schedule construction validates its parameters") {
    CHECK_THROWS_AS(ScheduleSpec::linear(0.0, 1.0, 1.0), ConfigError);
    CHECK_THROWS_AS(ScheduleSpec::linear(2.0, 1.0, 1.0), ConfigError);
    CHECK_THROWS_AS(ScheduleSpec::constant(2.0, 0.0), ConfigError);
    CHECK_NOTHROW(ScheduleSpec::linear(1.0, 1.0, 1.0));
}

TEST_CASE("alpha_bar uses the closed-form integral") {
    const auto lin = ScheduleSpec::linear(0.1, 20.0, 1.0);
    const auto c = ScheduleSpec::constant(2.0, 1.0);
    CHECK(alpha_bar(lin, 0.0) == 1.0);
    CHECK(alpha_bar(c, 0.0) == 1.0);
    CHECK(alpha_bar(c, 1.0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-14));
    CHECK(alpha_bar(c, 1.0) == doctest::Approx(0.135335).epsilon(1e-6));
    CHECK(alpha_bar(lin, 1.0) == doctest::Approx(std::exp(-10.05)).epsilon(1e-14));
    CHECK_THROWS_AS(alpha_bar(lin, 1.5), std::domain_error);
}

TEST_CASE("make_uniform_grid") {
    auto g = make_uniform_grid(1.0, 2);
    REQUIRE(g.steps() == 2);
    CHECK(g.knots() == std::vector<double>{0.0, 0.5, 1.0});

    g = make_uniform_grid(2.0, 4);
    CHECK(g.knots() == std::vector<double>{0.0, 0.5, 1.0, 1.5, 2.0});

    g = make_uniform_grid(1.0, 1000);
    REQUIRE(g.steps() == 1000);
    for (std::size_t k = 0; k <= 1000; ++k) CHECK(g[k] == doctest::Approx(k / 1000.0).epsilon(1e-15));

    CHECK_THROWS_AS(make_uniform_grid(1.0, 0), ConfigError);
}

TEST_CASE("TimeGrid rejects malformed knots") {
    CHECK_THROWS_AS(TimeGrid({0.1, 0.5}), ConfigError);
    CHECK_THROWS_AS(TimeGrid({0.0, 0.5, 0.5}), ConfigError);
    CHECK_THROWS_AS(TimeGrid({}), ConfigError);
    CHECK_NOTHROW(TimeGrid({0.0, 0.1, 0.7, 1.0}));
}

TEST_CASE("step_weights examples") {
    const auto c = ScheduleSpec::constant(2.0, 1.0);
    const auto w = step_weights(c, make_uniform_grid(1.0, 100));
    REQUIRE(w.gamma.size() == 100);
    for (double g : w.gamma) CHECK(g == doctest::Approx(0.02).epsilon(1e-13));

    const auto lin = ScheduleSpec::linear(0.1, 20.0, 1.0);
    const auto w1 = step_weights(lin, make_uniform_grid(1.0, 1));
    CHECK(w1.at(1) == doctest::Approx(10.05).epsilon(1e-15));

    const auto w2 = step_weights(lin, make_uniform_grid(1.0, 2));
    CHECK(w2.at(1) == doctest::Approx(2.5375).epsilon(1e-15));
    CHECK(w2.at(2) == doctest::Approx(7.5125).epsilon(1e-15));

    CHECK_THROWS_AS(step_weights(lin, make_uniform_grid(2.0, 4)), ConfigError);
}

TEST_CASE("step weights sum to the integrated rate under refinement") {
    CounterRng rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        const double bmin = 0.01 + 2.0 * rng.uniform();
        const double bmax = bmin + 30.0 * rng.uniform();
        const double T = 0.1 + 5.0 * rng.uniform();
        const auto spec = (trial % 2 == 0) ? ScheduleSpec::linear(bmin, bmax, T)
                                           : ScheduleSpec::constant(bmin, T);
        const std::size_t n = 1 + rng.below(300);
        const auto w = step_weights(spec, make_uniform_grid(T, n));
        const auto w2 = step_weights(spec, make_uniform_grid(T, 2 * n));
        const double s = std::accumulate(w.gamma.begin(), w.gamma.end(), 0.0);
        const double s2 = std::accumulate(w2.gamma.begin(), w2.gamma.end(), 0.0);
        const double exact = spec.integrated(T);
        CHECK(std::abs(s - exact) <= 1e-12 * std::max(1.0, exact));
        CHECK(std::abs(s2 - exact) <= 1e-12 * std::max(1.0, exact));
        for (double g : w.gamma) CHECK(g > 0.0);

        double prev = 1.0;
        const auto grid = make_uniform_grid(T, 20);
        for (std::size_t k = 0; k <= 20; ++k) {
            const double a = alpha_bar(spec, grid[k]);
            CHECK(a <= prev);
            prev = a;
        }
    }
}
