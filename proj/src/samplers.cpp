#include "proxdm/samplers.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstring>
#include <istream>
#include <memory>
#include <mutex>
#include <ostream>
#include <sstream>

#include "proxdm/errors.hpp"
#include "proxdm/io.hpp"
#include "proxdm/parallel.hpp"
#include "proxdm/rng.hpp"

namespace proxdm {

namespace {

constexpr std::array<std::pair<Method, std::string_view>, 7> kMethodNames{{
    {Method::ScoreSDE, "score_sde"},
    {Method::ScoreSDEFinalDenoise, "score_sde_denoise"},
    {Method::ScoreODE, "score_ode"},
    {Method::PdaBackward, "pda_backward"},
    {Method::PdaHybrid, "pda_hybrid"},
    {Method::VeProx, "ve_prox"},
    {Method::PfOdeProx, "pf_ode_prox"},
}};

void require_small_step(double gamma, const char* who) {
    if (!(gamma > 0.0 && gamma < 2.0)) {
        std::ostringstream os;
        os << who << ": step size gamma = " << gamma << " outside (0, 2)";
        throw StepSizeError(os.str(), gamma);
    }
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw ConfigError("trace: truncated header");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    write_u64(os, bits);
}

}  // namespace

namespace {

// Marginals keyed by the exact time value. Samplers query a handful of grid
// times many times each, so rebuilding the mixture per call dominates.
class MarginalCache {
  public:
    explicit MarginalCache(std::function<GaussianMixture(double)> make) : make_(std::move(make)) {}

    std::shared_ptr<const GaussianMixture> at(double t) {
        std::lock_guard lock(mu_);
        for (const auto& [key, gm] : entries_)
            if (key == t) return gm;
        auto gm = std::make_shared<const GaussianMixture>(make_(t));
        if (entries_.size() >= 4096) entries_.clear();
        entries_.emplace_back(t, gm);
        return gm;
    }

  private:
    std::function<GaussianMixture(double)> make_;
    std::mutex mu_;
    std::vector<std::pair<double, std::shared_ptr<const GaussianMixture>>> entries_;
};

OracleHandle cached_handle(std::function<GaussianMixture(double)> make, ProxSolverOptions opts) {
    auto cache = std::make_shared<MarginalCache>(std::move(make));
    OracleHandle h;
    h.source = OracleHandle::Source::Exact;
    h.score_fn = [cache](const Vector& x, double t) { return score(*cache->at(t), x); };
    h.prox_fn = [cache, opts](const Vector& x, double t, double lambda) {
        return prox_log_density(*cache->at(t), {lambda, x}, opts).point;
    };
    return h;
}

}  // namespace

OracleHandle OracleHandle::exact(const GaussianMixture& base, const ScheduleSpec& spec,
                                 ProxSolverOptions opts) {
    return cached_handle([base, spec](double t) { return marginal_at(base, spec, t); }, opts);
}

OracleHandle OracleHandle::exact_ve(const GaussianMixture& base, ProxSolverOptions opts) {
    return cached_handle([base](double t) { return ve_marginal_at(base, t); }, opts);
}

std::string_view method_name(Method m) {
    for (const auto& [k, v] : kMethodNames)
        if (k == m) return v;
    return "unknown";
}

Method parse_method(std::string_view name) {
    for (const auto& [k, v] : kMethodNames)
        if (v == name) return k;
    throw ConfigError("unknown sampler method '" + std::string(name) + "'");
}

bool uses_score(Method m) {
    return m == Method::ScoreSDE || m == Method::ScoreSDEFinalDenoise || m == Method::ScoreODE;
}

bool requires_small_steps(Method m) { return m == Method::PdaBackward || m == Method::PfOdeProx; }

double prox_strength(Method m, double gamma) {
    switch (m) {
        case Method::PdaBackward:
            return 2.0 * gamma / (2.0 - gamma);
        case Method::PfOdeProx:
            return gamma / (2.0 - gamma);
        case Method::PdaHybrid:
        case Method::VeProx:
            return gamma;
        default:
            throw ConfigError("method " + std::string(method_name(m)) + " has no prox step");
    }
}

Vector em_step(const Vector& x, double gamma, const Vector& score, const Vector& z) {
    return x + gamma * (0.5 * x + score) + std::sqrt(gamma) * z;
}

Vector pda_backward_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev,
                         const Vector& z) {
    require_small_step(gamma, "pda_backward_step");
    const Vector anchor = (2.0 / (2.0 - gamma)) * (x + std::sqrt(gamma) * z);
    return prox(anchor, t_prev, 2.0 * gamma / (2.0 - gamma));
}

Vector pda_hybrid_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev,
                       const Vector& z) {
    if (!(gamma > 0.0)) throw StepSizeError("pda_hybrid_step: gamma must be > 0", gamma);
    const Vector anchor = (1.0 + 0.5 * gamma) * x + std::sqrt(gamma) * z;
    return prox(anchor, t_prev, gamma);
}

Vector score_ode_step(const Vector& x, double gamma, const Vector& score) {
    return x + 0.5 * gamma * (x + score);
}

Vector pf_ode_prox_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev) {
    require_small_step(gamma, "pf_ode_prox_step");
    return prox((2.0 / (2.0 - gamma)) * x, t_prev, gamma / (2.0 - gamma));
}

Vector ve_prox_step(const Vector& x, double gamma, const ProxFn& prox, double t_prev,
                    const Vector& z) {
    if (!(gamma > 0.0)) throw StepSizeError("ve_prox_step: gamma must be > 0", gamma);
    return prox(x + std::sqrt(gamma) * z, t_prev, gamma);
}

Vector final_denoise(const Vector& x, const ScoreFn& score, const ScheduleSpec& spec, double t_eps) {
    if (!(t_eps > 0.0)) throw ConfigError("final_denoise: t_eps must be > 0");
    return x + (1.0 - alpha_bar(spec, t_eps)) * score(x, t_eps);
}

std::vector<double> method_step_sizes(Method m, const ScheduleSpec& spec, const TimeGrid& grid) {
    if (m == Method::VeProx) return ve_step_weights(grid).gamma;
    if (uses_score(m)) {
        // Forward discretizations take gamma_k = beta(t_k) (t_k - t_{k-1}).
        std::vector<double> g;
        g.reserve(grid.steps());
        for (std::size_t k = 1; k <= grid.steps(); ++k)
            g.push_back(beta_at(spec, std::min(grid[k], spec.horizon())) * (grid[k] - grid[k - 1]));
        return g;
    }
    return step_weights(spec, grid).gamma;
}

SamplerConfig::SamplerConfig(Method method, ScheduleSpec schedule, TimeGrid grid,
                             std::size_t n_chains, std::uint64_t seed,
                             std::optional<double> eps_last)
    : method_(method),
      schedule_(schedule),
      grid_(std::move(grid)),
      n_chains_(n_chains),
      seed_(seed),
      eps_last_(0.0) {
    if (n_chains_ == 0) throw ConfigError("sampler: n_chains must be >= 1");
    if (method_ != Method::VeProx && grid_.steps() > 0 &&
        std::abs(grid_.horizon() - schedule_.horizon()) > 1e-12 * std::max(1.0, schedule_.horizon()))
        throw ConfigError("sampler: grid horizon does not match the schedule horizon");
    gammas_ = method_step_sizes(method_, schedule_, grid_);
    if (requires_small_steps(method_)) {
        for (std::size_t k = 0; k < gammas_.size(); ++k) {
            if (!(gammas_[k] < 2.0)) {
                std::ostringstream os;
                os << method_name(method_) << " requires gamma_k < 2, but gamma_" << (k + 1)
                   << " = " << gammas_[k] << " (N = " << grid_.steps() << ")";
                throw StepSizeError(os.str(), gammas_[k]);
            }
        }
    }
    if (method_ == Method::ScoreSDEFinalDenoise) {
        if (grid_.steps() == 0) throw ConfigError("sampler: final denoising needs N >= 1");
        eps_last_ = eps_last.value_or(grid_[1]);
        if (!(eps_last_ > 0.0 && eps_last_ <= schedule_.horizon()))
            throw ConfigError("sampler: eps_last must lie in (0, T]");
    }
}

Vector chain_noise(std::uint64_t seed, std::size_t chain, std::size_t step, Eigen::Index dim) {
    auto rng = CounterRng(seed).split(chain).split(step);
    return rng.normal_vector(dim);
}

SamplerTrace run_sampler(const SamplerConfig& cfg, const OracleHandle& oracle, Eigen::Index dim) {
    const Method m = cfg.method();
    if (uses_score(m) && !oracle.score_fn)
        throw ConfigError(std::string(method_name(m)) + " needs a score oracle");
    if (!uses_score(m) && !oracle.prox_fn)
        throw ConfigError(std::string(method_name(m)) + " needs a prox oracle");

    const auto& grid = cfg.grid();
    const std::size_t n = grid.steps();
    const std::size_t chains = cfg.n_chains();
    SamplerTrace trace;
    trace.gammas = cfg.gammas();
    trace.states.assign(n + 1, Matrix(static_cast<Eigen::Index>(chains), dim));
    trace.step_seconds.assign(n, 0.0);

    // VE chains start from the wide prior N(0, T I).
    const double init_scale = (m == Method::VeProx) ? std::sqrt(grid.horizon()) : 1.0;
    for (std::size_t c = 0; c < chains; ++c)
        trace.states[n].row(static_cast<Eigen::Index>(c)) =
            init_scale * chain_noise(cfg.seed(), c, 0, dim).transpose();

    for (std::size_t k = n; k >= 1; --k) {
        const auto start = std::chrono::steady_clock::now();
        const double gamma = trace.gammas[k - 1];
        const double t_now = grid[k];
        const double t_prev = grid[k - 1];
        const Matrix& cur = trace.states[k];
        Matrix& next = trace.states[k - 1];
        parallel_for(chains, cfg.threads, [&](std::size_t c) {
            const auto row = static_cast<Eigen::Index>(c);
            const Vector x = cur.row(row).transpose();
            Vector out;
            try {
                switch (m) {
                    case Method::ScoreSDE:
                    case Method::ScoreSDEFinalDenoise:
                        out = em_step(x, gamma, oracle.score_fn(x, t_now),
                                      chain_noise(cfg.seed(), c, k, dim));
                        break;
                    case Method::ScoreODE:
                        out = score_ode_step(x, gamma, oracle.score_fn(x, t_now));
                        break;
                    case Method::PdaBackward:
                        out = pda_backward_step(x, gamma, oracle.prox_fn, t_prev,
                                                chain_noise(cfg.seed(), c, k, dim));
                        break;
                    case Method::PdaHybrid:
                        out = pda_hybrid_step(x, gamma, oracle.prox_fn, t_prev,
                                              chain_noise(cfg.seed(), c, k, dim));
                        break;
                    case Method::VeProx:
                        out = ve_prox_step(x, gamma, oracle.prox_fn, t_prev,
                                           chain_noise(cfg.seed(), c, k, dim));
                        break;
                    case Method::PfOdeProx:
                        out = pf_ode_prox_step(x, gamma, oracle.prox_fn, t_prev);
                        break;
                }
            } catch (const ProxSolverError& e) {
                std::ostringstream os;
                os << "step k = " << k << ", chain " << c << ": " << e.what();
                throw ProxSolverError(os.str(), e.best_residual());
            }
            if (!out.allFinite()) {
                std::ostringstream os;
                os << "non-finite state at step k = " << k << ", chain " << c;
                throw NumericError(os.str());
            }
            next.row(row) = out.transpose();
        });
        trace.step_seconds[k - 1] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }

    if (m == Method::ScoreSDEFinalDenoise) {
        Matrix& out = trace.states[0];
        parallel_for(chains, cfg.threads, [&](std::size_t c) {
            const auto row = static_cast<Eigen::Index>(c);
            const Vector x = out.row(row).transpose();
            out.row(row) = final_denoise(x, oracle.score_fn, cfg.schedule(), cfg.eps_last()).transpose();
        });
    }
    return trace;
}

void write_trace_csv(std::ostream& os, const SamplerTrace& trace) {
    if (trace.states.empty()) return;
    const auto d = trace.states.front().cols();
    os << "chain,step";
    for (const auto& h : coordinate_header(d)) os << ',' << h;
    os << '\n';
    for (Eigen::Index c = 0; c < trace.states.front().rows(); ++c) {
        for (std::size_t k = 0; k < trace.states.size(); ++k) {
            os << c << ',' << k;
            for (Eigen::Index j = 0; j < d; ++j) os << ',' << format_double(trace.states[k](c, j));
            os << '\n';
        }
    }
}

void write_trace_binary(std::ostream& os, const SamplerTrace& trace) {
    os.write("PDMT", 4);
    const std::uint32_t version = 1;
    unsigned char v[4];
    for (int i = 0; i < 4; ++i) v[i] = static_cast<unsigned char>(version >> (8 * i));
    os.write(reinterpret_cast<const char*>(v), 4);
    const std::uint64_t chains = trace.states.empty() ? 0 : static_cast<std::uint64_t>(trace.states.front().rows());
    const std::uint64_t d = trace.states.empty() ? 0 : static_cast<std::uint64_t>(trace.states.front().cols());
    write_u64(os, trace.steps());
    write_u64(os, chains);
    write_u64(os, d);
    for (const auto& s : trace.states)
        for (Eigen::Index c = 0; c < s.rows(); ++c)
            for (Eigen::Index j = 0; j < s.cols(); ++j) write_f64(os, s(c, j));
}

SamplerTrace read_trace_binary(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "PDMT", 4) != 0)
        throw ConfigError("trace: bad magic");
    unsigned char v[4];
    if (!is.read(reinterpret_cast<char*>(v), 4)) throw ConfigError("trace: truncated header");
    const std::uint32_t version = v[0] | (v[1] << 8) | (v[2] << 16) | (static_cast<std::uint32_t>(v[3]) << 24);
    if (version != 1) throw ConfigError("trace: unsupported version " + std::to_string(version));
    const auto n = read_u64(is);
    const auto chains = static_cast<Eigen::Index>(read_u64(is));
    const auto d = static_cast<Eigen::Index>(read_u64(is));
    SamplerTrace t;
    t.states.assign(n + 1, Matrix(chains, d));
    for (auto& s : t.states)
        for (Eigen::Index c = 0; c < chains; ++c)
            for (Eigen::Index j = 0; j < d; ++j) {
                const auto bits = read_u64(is);
                double x;
                std::memcpy(&x, &bits, 8);
                s(c, j) = x;
            }
    return t;
}

}  // namespace proxdm
