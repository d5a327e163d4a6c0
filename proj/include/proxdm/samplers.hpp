#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/schedule.hpp"

namespace proxdm {

using ScoreFn = std::function<Vector(const Vector& x, double t)>;
using ProxFn = std::function<Vector(const Vector& x, double t, double lambda)>;

/// Denoiser access for a sampler. Exact handles evaluate the analytic
/// marginal of the base mixture at the requested time; learned handles wrap a
/// trained proximal network and have no score.
struct OracleHandle {
    enum class Source { Exact, LearnedPM };

    ScoreFn score_fn;
    ProxFn prox_fn;
    Source source = Source::Exact;

    /// Variance-preserving marginals sqrt(abar) X_0 + sqrt(1 - abar) eps.
    static OracleHandle exact(const GaussianMixture& base, const ScheduleSpec& spec,
                              ProxSolverOptions opts = {});
    /// Variance-exploding marginals X_0 + sqrt(t) eps.
    static OracleHandle exact_ve(const GaussianMixture& base, ProxSolverOptions opts = {});
};

enum class Method {
    ScoreSDE,
    ScoreSDEFinalDenoise,
    ScoreODE,
    PdaBackward,
    PdaHybrid,
    VeProx,
    PfOdeProx,
};

std::string_view method_name(Method m);
/// Inverse of method_name; throws ConfigError for unknown names.
Method parse_method(std::string_view name);
bool uses_score(Method m);
/// Methods whose prox strength is only defined for gamma < 2.
bool requires_small_steps(Method m);

/// Prox regularization strength lambda used by a prox method for step gamma.
double prox_strength(Method m, double gamma);

Vector em_step(const Vector& x, double gamma, const Vector& score, const Vector& z);
Vector pda_backward_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev,
                         const Vector& z);
Vector pda_hybrid_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev,
                       const Vector& z);
Vector score_ode_step(const Vector& x, double gamma, const Vector& score);
Vector pf_ode_prox_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev);
Vector ve_prox_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev,
                    const Vector& z);
/// One Tweedie step x + (1 - abar(t_eps)) score(x, t_eps).
Vector final_denoise(const Vector& x, const ScoreFn& score, const ScheduleSpec& spec,
                     double t_eps);

/// Validated sampler settings. Step sizes are computed once at construction;
/// backward-type methods with any gamma_k >= 2 are rejected here, before any
/// sampling work.
class SamplerConfig {
  public:
    SamplerConfig(Method method, ScheduleSpec schedule, TimeGrid grid, std::size_t n_chains,
                  std::uint64_t seed, std::optional<double> eps_last = std::nullopt);

    Method method() const { return method_; }
    const ScheduleSpec& schedule() const { return schedule_; }
    const TimeGrid& grid() const { return grid_; }
    std::size_t n_chains() const { return n_chains_; }
    std::uint64_t seed() const { return seed_; }
    /// Tweedie time for ScoreSDEFinalDenoise; defaults to t_1.
    double eps_last() const { return eps_last_; }
    /// gamma_k for k = 1..N (index k - 1) as used by the configured method.
    const std::vector<double>& gammas() const { return gammas_; }

    std::size_t threads = 1;

  private:
    Method method_;
    ScheduleSpec schedule_;
    TimeGrid grid_;
    std::size_t n_chains_;
    std::uint64_t seed_;
    double eps_last_;
    std::vector<double> gammas_;
};

/// Step sizes for a method: integrated beta for prox methods, beta(t_k) dt for
/// the forward (score) discretizations, dt for VE.
std::vector<double> method_step_sizes(Method m, const ScheduleSpec& spec, const TimeGrid& grid);

struct SamplerTrace {
    /// states[k] is the n_chains x d matrix of X_k; states[N] is the Gaussian
    /// initialization and states[0] the returned samples.
    std::vector<Matrix> states;
    std::vector<double> gammas;
    std::vector<double> step_seconds;  // index k - 1, wall time of step k

    std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
    const Matrix& output() const { return states.front(); }
};

SamplerTrace run_sampler(const SamplerConfig& cfg, const OracleHandle& oracle, Eigen::Index dim);

/// Standard normal noise used by chain `chain` at step `step` (step 0 is the
/// initialization draw).
Vector chain_noise(std::uint64_t seed, std::size_t chain, std::size_t step, Eigen::Index dim);

void write_trace_csv(std::ostream& os, const SamplerTrace& trace);
void write_trace_binary(std::ostream& os, const SamplerTrace& trace);
SamplerTrace read_trace_binary(std::istream& is);

}  // namespace proxdm
