#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/rng.hpp"
#include "proxdm/samplers.hpp"
#include "proxdm/schedule.hpp"

namespace proxdm {

struct PMLossParams {
    double zeta = 1.0;
    Eigen::Index dim = 1;
};

/// 1 - exp(-||pred - target||^2 / (d zeta^2)).
double pm_loss(const Vector& pred, const Vector& target, const PMLossParams& p);
/// Gradient of pm_loss with respect to pred.
Vector pm_loss_grad(const Vector& pred, const Vector& target, const PMLossParams& p);

/// Distribution over (t, lambda) pairs: pick a step count N with probability
/// proportional to its weight, then a step k uniformly on the uniform N-step
/// grid, and return (t_{k-1}, lambda_k).
class TLambdaScheme {
  public:
    enum class Kind { Hybrid, Backward };
    enum class WeightRule { LogN, CubeRootN };

    /// Weights from `rule`. Backward drops counts whose grid has some
    /// gamma_k >= 2; if nothing survives, throws ConfigError.
    TLambdaScheme(ScheduleSpec spec, Kind kind, std::vector<std::size_t> candidates = {5, 10, 20, 50, 100, 1000},
                  WeightRule rule = WeightRule::LogN);
    /// Explicit positive weights, one per candidate.
    TLambdaScheme(ScheduleSpec spec, Kind kind, std::vector<std::size_t> candidates, std::vector<double> weights);

    struct Draw {
        double t;
        double lambda;
        std::size_t n_steps;
        std::size_t k;
    };

    Draw sample(CounterRng& rng) const;

    Kind kind() const { return kind_; }
    const ScheduleSpec& spec() const { return spec_; }
    /// Candidates that survived validation, with normalized probabilities.
    const std::vector<std::size_t>& candidates() const { return candidates_; }
    const std::vector<double>& probabilities() const { return probs_; }
    /// (t_{k-1}, lambda_k) for k = 1..N of a surviving candidate.
    const std::vector<std::pair<double, double>>& pairs(std::size_t candidate_index) const {
        return pairs_[candidate_index];
    }

  private:
    void build(std::vector<std::size_t> candidates, std::vector<double> weights);

    ScheduleSpec spec_;
    Kind kind_;
    std::vector<std::size_t> candidates_;
    std::vector<double> probs_;
    std::vector<double> cdf_;
    std::vector<std::vector<std::pair<double, double>>> pairs_;
};

/// Features appended to x: sin/cos of t and of ln(lambda) at geometric
/// frequencies.
struct FeatureSpec {
    std::size_t t_features = 8;
    std::size_t lambda_features = 8;
};

/// Sinusoidal embedding of a scalar u: [sin(w_j u), cos(w_j u)] for
/// w_j = 2^j, j < count/2.
void sinusoidal_features(double u, std::size_t count, double* out);

/// Multilayer perceptron eps_theta(x; t, lambda) with SiLU hidden units and a
/// linear output. The proximal estimate is the residual form
/// f_theta(x; t, lambda) = x - sqrt(lambda) eps_theta(x; t, lambda).
///
/// Parameters live in one flat vector, layer by layer, each layer stored as
/// its row-major weight matrix followed by its bias.
class PMModel {
  public:
    PMModel(Eigen::Index dim, std::vector<std::size_t> hidden, FeatureSpec features, std::uint64_t init_seed);

    Eigen::Index dim() const { return dim_; }
    const std::vector<std::size_t>& layer_sizes() const { return sizes_; }
    const FeatureSpec& features() const { return features_; }
    std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }
    const Vector& parameters() const { return params_; }
    Vector& parameters() { return params_; }

    /// Network input for columns of x with per-column t and lambda.
    Matrix inputs(const Matrix& x, const std::vector<double>& t, const std::vector<double>& lambda) const;

    /// eps_theta for a batch; x is d x B.
    Matrix eps(const Matrix& x, const std::vector<double>& t, const std::vector<double>& lambda) const;
    /// f_theta for a batch.
    Matrix prox(const Matrix& x, const std::vector<double>& t, const std::vector<double>& lambda) const;
    Vector prox(const Vector& x, double t, double lambda) const;

    /// Forward pass keeping activations, then the gradient of
    /// sum_j <upstream_j, eps_j> with respect to every parameter.
    Matrix eps_with_grad(const Matrix& inputs, const std::function<Matrix(const Matrix&)>& upstream,
                         Vector& grad) const;

    bool operator==(const PMModel& o) const;

  private:
    Eigen::Index dim_;
    FeatureSpec features_;
    std::vector<std::size_t> sizes_;  // input, hidden..., output
    std::vector<std::size_t> offsets_;
    Vector params_;
};

enum class LossKind { L1, PM };

struct TrainPhase {
    LossKind loss = LossKind::PM;
    double zeta = 1.0;  // ignored for L1
    std::size_t iterations = 0;
    double learning_rate = 0.0;  // 0 means TrainConfig::learning_rate

    bool operator==(const TrainPhase&) const = default;
};

struct TrainConfig {
    std::vector<TrainPhase> phases;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    std::uint64_t seed = 0;

    /// Throws ConfigError for no phases, a zero-iteration phase, a zero batch
    /// or non-positive rates.
    void validate() const;
};

/// One mini-batch worth of (t, lambda, noise) draws.
struct BatchDraws {
    Matrix x0;      // d x B clean samples
    Matrix xt;      // forward-noised X_t
    Matrix eps2;    // second noise draw
    Matrix y;       // X_t + sqrt(lambda) eps2
    std::vector<double> t;
    std::vector<double> lambda;
};

/// Batch for iteration `iteration`: sample i uses rng.split(i) for its row
/// index, (t, lambda), and both noise vectors.
BatchDraws draw_batch(const Matrix& data, std::size_t batch, const TLambdaScheme& scheme, const CounterRng& rng);

struct BatchObjective {
    double loss = 0.0;
    Vector grad;
};

/// Mean over the batch of pm_loss(eps_theta(Y; t, lambda), eps2) or, for L1,
/// of (1/d) ||f_theta(Y; t, lambda) - X_t||_1, with its parameter gradient.
BatchObjective train_batch_objective(const PMModel& model, const BatchDraws& draws, LossKind loss, double zeta);

/// The same PM loss written in the prox form:
/// pm_loss((Y - f_theta(Y)) / sqrt(lambda), (Y - X_t) / sqrt(lambda)).
double prox_form_objective(const PMModel& model, const BatchDraws& draws, double zeta);

struct LossRecord {
    std::size_t iteration;
    std::size_t phase;
    LossKind loss;
    double zeta;
    double value;
};

struct TrainResult {
    std::vector<LossRecord> curve;
};

/// SGD with momentum through the phases in order. data is n x d. Throws
/// NumericError naming the iteration if the loss or a parameter goes
/// non-finite.
TrainResult train(PMModel& model, const Matrix& data, const TrainConfig& cfg, const TLambdaScheme& scheme);

void write_loss_curve_csv(std::ostream& os, const std::vector<LossRecord>& curve);

struct OracleErrorReport {
    std::size_t probes = 0;
    std::size_t solver_failures = 0;
    double mean_error = 0.0;
    double max_error = 0.0;
};

/// Compares f_theta with the exact prox of the VP marginal at m probes drawn
/// through the scheme. Probes whose exact solve fails are counted and left
/// out of the statistics.
OracleErrorReport eval_against_oracle(const PMModel& model, const GaussianMixture& base, const TLambdaScheme& scheme,
                                      std::size_t m, std::uint64_t seed);

/// Oracle handle whose prox is the network; score calls throw.
OracleHandle learned_oracle(const PMModel& model);

void write_checkpoint(std::ostream& os, const PMModel& model);
PMModel read_checkpoint(std::istream& is);
void save_checkpoint(const std::filesystem::path& path, const PMModel& model);
PMModel load_checkpoint(const std::filesystem::path& path);

}  // namespace proxdm
