#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/schedule.hpp"

namespace proxdm {

/// A probe is a point x drawn from the marginal p_s at diffusion time s.
struct Probe {
    double s = 0.0;
    Vector x;
};

/// Target plus Constant(2) schedule, step size and the probe cloud from which
/// the smoothness constant L is estimated.
struct TheoryFixture {
    std::string name;
    GaussianMixture target;
    ScheduleSpec spec;
    double T = 0.0;
    double h = 0.0;
    std::size_t n_steps = 0;
    double L = 1.0;  // max(1, largest Hessian spectral norm over the probes)
    double M2 = 0.0;
    std::vector<Probe> probes;

    /// Largest step size inside the regime h <= 1/(8L+4).
    double h_max() const { return 1.0 / (8.0 * L + 4.0); }
    bool in_regime() const { return h <= h_max() * (1.0 + 1e-12); }
};

/// Names accepted by make_fixture: "stationary", "shifted", "gmm8".
const std::vector<std::string>& builtin_fixture_names();

/// Builds a fixture from `target` on [0, T]. Draws `n_probes` probes with s
/// uniform on [0, T], estimates L and, unless `h_override` is given, sets
/// h = T / ceil(T (8L + 4)) so the fixture sits inside the regime.
TheoryFixture make_fixture(std::string name, GaussianMixture target, double T, std::size_t n_probes,
                           std::uint64_t seed, std::optional<double> h_override = std::nullopt);

/// Built-in fixture by name. Throws ConfigError for an unknown name.
TheoryFixture make_builtin_fixture(const std::string& name, std::uint64_t seed, std::size_t n_probes = 10000,
                                   std::optional<double> h_override = std::nullopt);

enum class CheckStatus { Pass, Fail, OutOfRegime, Skipped };

std::string status_name(CheckStatus s);

/// Eigen-decomposition summary of G_k at one (k, t, x).
struct GkEvaluation {
    std::size_t k = 0;
    double t = 0.0;
    Vector x;
    Matrix G;
    double eig_min = 0.0;
    double eig_max = 0.0;
    double sqrt_eig_min = 0.0;
    double sqrt_eig_max = 0.0;
};

struct CheckResult {
    std::string check;
    std::string fixture;
    double margin = 0.0;  // smallest slack to any bound; negative means violated
    CheckStatus status = CheckStatus::Pass;
    std::string detail;
};

/// G_k = [(1 - t) I - 2t H]^{-2} with H the log-density Hessian of p_{T-kh-t}.
GkEvaluation g_backward(const TheoryFixture& fx, std::size_t k, double t, const Vector& x);
/// G_k = [I - 2t H]^{-2}.
GkEvaluation g_hybrid(const TheoryFixture& fx, std::size_t k, double t, const Vector& x);

/// Spectrum of G_k in [1-4tL, 1+18tL] and of its root in [1-2tL, 1+6tL].
CheckResult check_g_bounds_backward(const TheoryFixture& fx, std::size_t k, double t, const Vector& x);
/// Spectrum of G_k in [1-4tL, 1+12tL] and of its root in [1-2tL, 1+4tL].
CheckResult check_g_bounds_hybrid(const TheoryFixture& fx, std::size_t k, double t, const Vector& x);

/// E_{p_t} ||x||^2 <= 2 (d + M2) on t = 0, 0.1, ..., T (plus T itself).
CheckResult check_second_moment(const TheoryFixture& fx);

/// KL(p_T || N(0, I)) <= 2 (d + M2) e^{-2T}. Skipped for mixtures, out of
/// regime for T < 0.25.
CheckResult check_init_kl(const TheoryFixture& fx);

/// Runs both G_k checks at every probe (k and t chosen so T - kh - t is the
/// probe's time), folds them into one row each, and appends the moment and
/// initialization checks.
std::vector<CheckResult> run_all_checks(const TheoryFixture& fx, unsigned threads = 1);

/// CSV with header check,fixture,margin,pass.
void write_check_csv(std::ostream& os, const std::vector<CheckResult>& rows);

}  // namespace proxdm
