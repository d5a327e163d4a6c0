#include "proxdm/prox_match.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <memory>
#include <numeric>
#include <ostream>
#include <sstream>

#include "proxdm/errors.hpp"
#include "proxdm/io.hpp"

namespace proxdm {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr char kMagic[4] = {'P', 'D', 'M', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;
// ln(lambda) spans roughly [-10, 3] for the default step counts.
constexpr double kLogLambdaScale = 0.25;

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_uint(std::istream& is, int bytes) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), bytes)) throw ConfigError("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::vector<double> rule_weights(const std::vector<std::size_t>& candidates, TLambdaScheme::WeightRule rule) {
    std::vector<double> w;
    for (auto n : candidates) {
        const double x = static_cast<double>(n);
        w.push_back(rule == TLambdaScheme::WeightRule::LogN ? std::log(x) : std::cbrt(x));
    }
    return w;
}

}  // namespace

double pm_loss(const Vector& pred, const Vector& target, const PMLossParams& p) {
    if (!(p.zeta > 0.0)) throw ConfigError("pm_loss: zeta must be > 0");
    const double scale = static_cast<double>(p.dim) * p.zeta * p.zeta;
    return -std::expm1(-(pred - target).squaredNorm() / scale);
}

Vector pm_loss_grad(const Vector& pred, const Vector& target, const PMLossParams& p) {
    if (!(p.zeta > 0.0)) throw ConfigError("pm_loss_grad: zeta must be > 0");
    const double scale = static_cast<double>(p.dim) * p.zeta * p.zeta;
    const Vector r = pred - target;
    return (2.0 / scale) * std::exp(-r.squaredNorm() / scale) * r;
}

TLambdaScheme::TLambdaScheme(ScheduleSpec spec, Kind kind, std::vector<std::size_t> candidates, WeightRule rule)
    : spec_(std::move(spec)), kind_(kind) {
    auto w = rule_weights(candidates, rule);
    build(std::move(candidates), std::move(w));
}

TLambdaScheme::TLambdaScheme(ScheduleSpec spec, Kind kind, std::vector<std::size_t> candidates,
                             std::vector<double> weights)
    : spec_(std::move(spec)), kind_(kind) {
    build(std::move(candidates), std::move(weights));
}

void TLambdaScheme::build(std::vector<std::size_t> candidates, std::vector<double> weights) {
    if (candidates.empty()) throw ConfigError("t/lambda scheme: no candidate step counts");
    if (weights.size() != candidates.size()) throw ConfigError("t/lambda scheme: one weight per candidate required");
    std::vector<double> kept;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const std::size_t n = candidates[i];
        if (n == 0) throw ConfigError("t/lambda scheme: step counts must be >= 1");
        if (!(weights[i] > 0.0) || !std::isfinite(weights[i]))
            throw ConfigError("t/lambda scheme: weight for N = " + std::to_string(n) + " must be positive");
        const auto grid = make_uniform_grid(spec_.horizon(), n);
        const auto gam = step_weights(spec_, grid);
        if (kind_ == Kind::Backward && !(gam.max() < 2.0)) continue;
        std::vector<std::pair<double, double>> pairs;
        for (std::size_t k = 1; k <= n; ++k) {
            const double g = gam.at(k);
            pairs.emplace_back(grid[k - 1], kind_ == Kind::Hybrid ? g : 2.0 * g / (2.0 - g));
        }
        candidates_.push_back(n);
        kept.push_back(weights[i]);
        pairs_.push_back(std::move(pairs));
    }
    if (candidates_.empty())
        throw ConfigError("t/lambda scheme: every candidate step count has some gamma_k >= 2 (backward)");
    const double total = std::accumulate(kept.begin(), kept.end(), 0.0);
    double acc = 0.0;
    for (double w : kept) {
        probs_.push_back(w / total);
        acc += w / total;
        cdf_.push_back(acc);
    }
    cdf_.back() = 1.0;
}

TLambdaScheme::Draw TLambdaScheme::sample(CounterRng& rng) const {
    const double u = rng.uniform();
    auto idx = static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin());
    idx = std::min(idx, cdf_.size() - 1);
    const std::size_t n = candidates_[idx];
    const auto k = static_cast<std::size_t>(rng.below(n));
    const auto& [t, lambda] = pairs_[idx][k];
    return {t, lambda, n, k + 1};
}

void sinusoidal_features(double u, std::size_t count, double* out) {
    for (std::size_t j = 0; j < count / 2; ++j) {
        const double w = std::ldexp(1.0, static_cast<int>(j));
        out[2 * j] = std::sin(w * u);
        out[2 * j + 1] = std::cos(w * u);
    }
}

PMModel::PMModel(Eigen::Index dim, std::vector<std::size_t> hidden, FeatureSpec features, std::uint64_t init_seed)
    : dim_(dim), features_(features) {
    if (dim < 1) throw ConfigError("model: dimension must be >= 1");
    if (features.t_features % 2 != 0 || features.lambda_features % 2 != 0)
        throw ConfigError("model: feature counts must be even (sin/cos pairs)");
    sizes_.push_back(static_cast<std::size_t>(dim) + features.t_features + features.lambda_features);
    for (auto h : hidden) {
        if (h == 0) throw ConfigError("model: hidden layer widths must be >= 1");
        sizes_.push_back(h);
    }
    sizes_.push_back(static_cast<std::size_t>(dim));
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(total);
        total += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
    }
    params_ = Vector::Zero(static_cast<Eigen::Index>(total));
    const CounterRng root(init_seed);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        CounterRng rng = root.split(l);
        const double s = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
        for (std::size_t i = 0; i < sizes_[l + 1] * sizes_[l]; ++i)
            params_[static_cast<Eigen::Index>(offsets_[l] + i)] = s * rng.normal();
    }
}

Matrix PMModel::inputs(const Matrix& x, const std::vector<double>& t, const std::vector<double>& lambda) const {
    const auto B = x.cols();
    if (x.rows() != dim_) throw std::invalid_argument("model: input dimension mismatch");
    if (static_cast<Eigen::Index>(t.size()) != B || static_cast<Eigen::Index>(lambda.size()) != B)
        throw std::invalid_argument("model: need one t and one lambda per column");
    Matrix in(static_cast<Eigen::Index>(sizes_[0]), B);
    in.topRows(dim_) = x;
    const auto nt = features_.t_features, nl = features_.lambda_features;
    for (Eigen::Index j = 0; j < B; ++j) {
        if (!(lambda[j] > 0.0)) throw std::invalid_argument("model: lambda must be > 0");
        double* col = in.col(j).data() + dim_;
        sinusoidal_features(t[j], nt, col);
        sinusoidal_features(kLogLambdaScale * std::log(lambda[j]), nl, col + nt);
    }
    return in;
}

Matrix PMModel::eps(const Matrix& x, const std::vector<double>& t, const std::vector<double>& lambda) const {
    Matrix a = inputs(x, t, lambda);
    const std::size_t layers = sizes_.size() - 1;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto out = static_cast<Eigen::Index>(sizes_[l + 1]), in = static_cast<Eigen::Index>(sizes_[l]);
        Eigen::Map<const RowMajor> W(params_.data() + offsets_[l], out, in);
        Eigen::Map<const Vector> b(params_.data() + offsets_[l] + out * in, out);
        Matrix z = W * a;
        z.colwise() += b;
        if (l + 1 < layers) z = z.unaryExpr([](double v) { return v * sigmoid(v); });
        a = std::move(z);
    }
    return a;
}

Matrix PMModel::prox(const Matrix& x, const std::vector<double>& t, const std::vector<double>& lambda) const {
    Matrix e = eps(x, t, lambda);
    Matrix f(x.rows(), x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) f.col(j) = x.col(j) - std::sqrt(lambda[j]) * e.col(j);
    return f;
}

Vector PMModel::prox(const Vector& x, double t, double lambda) const {
    return prox(Matrix(x), std::vector<double>{t}, std::vector<double>{lambda}).col(0);
}

Matrix PMModel::eps_with_grad(const Matrix& inputs, const std::function<Matrix(const Matrix&)>& upstream,
                              Vector& grad) const {
    const std::size_t layers = sizes_.size() - 1;
    std::vector<Matrix> acts{inputs};
    std::vector<Matrix> pre;
    for (std::size_t l = 0; l < layers; ++l) {
        const auto out = static_cast<Eigen::Index>(sizes_[l + 1]), in = static_cast<Eigen::Index>(sizes_[l]);
        Eigen::Map<const RowMajor> W(params_.data() + offsets_[l], out, in);
        Eigen::Map<const Vector> b(params_.data() + offsets_[l] + out * in, out);
        Matrix z = W * acts.back();
        z.colwise() += b;
        pre.push_back(z);
        if (l + 1 < layers) z = z.unaryExpr([](double v) { return v * sigmoid(v); });
        acts.push_back(std::move(z));
    }
    const Matrix out_eps = acts.back();

    grad = Vector::Zero(params_.size());
    Matrix g = upstream(out_eps);
    for (std::size_t l = layers; l-- > 0;) {
        const auto out = static_cast<Eigen::Index>(sizes_[l + 1]), in = static_cast<Eigen::Index>(sizes_[l]);
        if (l + 1 < layers) {
            g.array() *= pre[l].unaryExpr([](double v) {
                const double s = sigmoid(v);
                return s * (1.0 + v * (1.0 - s));
            }).array();
        }
        Eigen::Map<RowMajor> dW(grad.data() + offsets_[l], out, in);
        Eigen::Map<Vector> db(grad.data() + offsets_[l] + out * in, out);
        dW.noalias() = g * acts[l].transpose();
        db = g.rowwise().sum();
        if (l > 0) {
            Eigen::Map<const RowMajor> W(params_.data() + offsets_[l], out, in);
            g = W.transpose() * g;
        }
    }
    return out_eps;
}

bool PMModel::operator==(const PMModel& o) const {
    return dim_ == o.dim_ && features_.t_features == o.features_.t_features &&
           features_.lambda_features == o.features_.lambda_features && sizes_ == o.sizes_ &&
           params_.size() == o.params_.size() && params_ == o.params_;
}

void TrainConfig::validate() const {
    if (phases.empty()) throw ConfigError("train: at least one phase is required");
    for (const auto& p : phases) {
        if (p.iterations == 0) throw ConfigError("train: every phase needs iterations > 0");
        if (p.loss == LossKind::PM && !(p.zeta > 0.0)) throw ConfigError("train: PM phase needs zeta > 0");
        if (!(p.learning_rate >= 0.0)) throw ConfigError("train: phase learning_rate must be >= 0");
    }
    if (batch_size == 0) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must lie in [0, 1)");
}

BatchDraws draw_batch(const Matrix& data, std::size_t batch, const TLambdaScheme& scheme, const CounterRng& rng) {
    if (data.rows() == 0) throw ConfigError("train: dataset is empty");
    const auto d = data.cols();
    const auto B = static_cast<Eigen::Index>(batch);
    BatchDraws out{Matrix(d, B), Matrix(d, B), Matrix(d, B), Matrix(d, B), {}, {}};
    out.t.resize(batch);
    out.lambda.resize(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        CounterRng r = rng.split(i);
        const auto j = static_cast<Eigen::Index>(i);
        const auto row = static_cast<Eigen::Index>(r.below(static_cast<std::uint64_t>(data.rows())));
        const auto draw = scheme.sample(r);
        const double ab = alpha_bar(scheme.spec(), draw.t);
        out.x0.col(j) = data.row(row).transpose();
        out.xt.col(j) = std::sqrt(ab) * out.x0.col(j) + std::sqrt(1.0 - ab) * r.normal_vector(d);
        out.eps2.col(j) = r.normal_vector(d);
        out.y.col(j) = out.xt.col(j) + std::sqrt(draw.lambda) * out.eps2.col(j);
        out.t[i] = draw.t;
        out.lambda[i] = draw.lambda;
    }
    return out;
}

BatchObjective train_batch_objective(const PMModel& model, const BatchDraws& draws, LossKind loss, double zeta) {
    const auto B = draws.y.cols();
    if (B == 0) throw ConfigError("train: empty batch");
    const auto d = draws.y.rows();
    const double inv_b = 1.0 / static_cast<double>(B);
    const PMLossParams p{zeta, d};
    double total = 0.0;
    auto upstream = [&](const Matrix& e) {
        Matrix g(e.rows(), e.cols());
        for (Eigen::Index j = 0; j < B; ++j) {
            if (loss == LossKind::PM) {
                total += pm_loss(e.col(j), draws.eps2.col(j), p);
                g.col(j) = inv_b * pm_loss_grad(e.col(j), draws.eps2.col(j), p);
            } else {
                const double s = std::sqrt(draws.lambda[j]);
                const Vector r = draws.y.col(j) - s * e.col(j) - draws.xt.col(j);
                total += r.cwiseAbs().sum() / static_cast<double>(d);
                g.col(j) = (-s * inv_b / static_cast<double>(d)) * r.cwiseSign();
            }
        }
        return g;
    };
    BatchObjective obj;
    model.eps_with_grad(model.inputs(draws.y, draws.t, draws.lambda), upstream, obj.grad);
    obj.loss = total * inv_b;
    return obj;
}

double prox_form_objective(const PMModel& model, const BatchDraws& draws, double zeta) {
    const Matrix f = model.prox(draws.y, draws.t, draws.lambda);
    const PMLossParams p{zeta, draws.y.rows()};
    double total = 0.0;
    for (Eigen::Index j = 0; j < f.cols(); ++j) {
        const double s = std::sqrt(draws.lambda[static_cast<std::size_t>(j)]);
        total += pm_loss((draws.y.col(j) - f.col(j)) / s, (draws.y.col(j) - draws.xt.col(j)) / s, p);
    }
    return total / static_cast<double>(f.cols());
}

TrainResult train(PMModel& model, const Matrix& data, const TrainConfig& cfg, const TLambdaScheme& scheme) {
    cfg.validate();
    if (data.rows() == 0) throw ConfigError("train: dataset is empty");
    if (data.cols() != model.dim()) throw ConfigError("train: dataset dimension does not match the model");
    TrainResult result;
    const CounterRng root(cfg.seed);
    Vector velocity = Vector::Zero(model.parameters().size());
    std::size_t it = 0;
    for (std::size_t ph = 0; ph < cfg.phases.size(); ++ph) {
        const auto& phase = cfg.phases[ph];
        const double lr = phase.learning_rate > 0.0 ? phase.learning_rate : cfg.learning_rate;
        for (std::size_t i = 0; i < phase.iterations; ++i, ++it) {
            const auto draws = draw_batch(data, cfg.batch_size, scheme, root.split(it));
            const auto obj = train_batch_objective(model, draws, phase.loss, phase.zeta);
            if (!std::isfinite(obj.loss) || !obj.grad.allFinite()) {
                std::ostringstream os;
                os << "train: non-finite loss or gradient at iteration " << it << " (phase " << ph << ")";
                throw NumericError(os.str());
            }
            velocity = cfg.momentum * velocity + obj.grad;
            model.parameters() -= lr * velocity;
            if (!model.parameters().allFinite()) {
                std::ostringstream os;
                os << "train: parameters diverged at iteration " << it << " (phase " << ph << ")";
                throw NumericError(os.str());
            }
            result.curve.push_back({it, ph, phase.loss, phase.loss == LossKind::PM ? phase.zeta : 0.0, obj.loss});
        }
    }
    return result;
}

void write_loss_curve_csv(std::ostream& os, const std::vector<LossRecord>& curve) {
    os << "iteration,phase,zeta,loss\n";
    for (const auto& r : curve)
        os << r.iteration << ',' << (r.loss == LossKind::L1 ? "l1" : "pm") << ',' << format_double(r.zeta) << ','
           << format_double(r.value) << '\n';
}

OracleErrorReport eval_against_oracle(const PMModel& model, const GaussianMixture& base, const TLambdaScheme& scheme,
                                      std::size_t m, std::uint64_t seed) {
    OracleErrorReport rep;
    if (m == 0) return rep;
    if (base.dim() != model.dim()) throw ConfigError("eval: target dimension does not match the model");
    const Matrix x0 = sample_target(base, m, seed);
    const CounterRng root = CounterRng(seed).split(0x70726f6265ull);
    double sum = 0.0;
    for (std::size_t p = 0; p < m; ++p) {
        CounterRng r = root.split(p);
        const auto draw = scheme.sample(r);
        const double ab = alpha_bar(scheme.spec(), draw.t);
        const Vector xt = std::sqrt(ab) * x0.row(static_cast<Eigen::Index>(p)).transpose() +
                          std::sqrt(1.0 - ab) * r.normal_vector(base.dim());
        const Vector y = xt + std::sqrt(draw.lambda) * r.normal_vector(base.dim());
        ++rep.probes;
        try {
            const auto exact = prox_log_density(marginal_at(base, scheme.spec(), draw.t), {draw.lambda, y});
            const double err = (model.prox(y, draw.t, draw.lambda) - exact.point).norm();
            sum += err;
            rep.max_error = std::max(rep.max_error, err);
        } catch (const ProxSolverError&) {
            ++rep.solver_failures;
        }
    }
    const std::size_t ok = rep.probes - rep.solver_failures;
    rep.mean_error = ok > 0 ? sum / static_cast<double>(ok) : 0.0;
    return rep;
}

OracleHandle learned_oracle(const PMModel& model) {
    auto shared = std::make_shared<const PMModel>(model);
    OracleHandle h;
    h.source = OracleHandle::Source::LearnedPM;
    h.prox_fn = [shared](const Vector& x, double t, double lambda) { return shared->prox(x, t, lambda); };
    h.score_fn = [](const Vector&, double) -> Vector {
        throw ConfigError("learned proximal oracle provides no score; use a prox-based method");
    };
    return h;
}

void write_checkpoint(std::ostream& os, const PMModel& model) {
    os.write(kMagic, 4);
    put_u32(os, kCheckpointVersion);
    put_u64(os, static_cast<std::uint64_t>(model.dim()));
    put_u64(os, model.features().t_features);
    put_u64(os, model.features().lambda_features);
    const auto& sizes = model.layer_sizes();
    put_u64(os, sizes.size());
    for (auto s : sizes) put_u64(os, s);
    put_u64(os, model.parameter_count());
    for (Eigen::Index i = 0; i < model.parameters().size(); ++i) {
        std::uint64_t bits;
        const double v = model.parameters()[i];
        std::memcpy(&bits, &v, 8);
        put_u64(os, bits);
    }
}

PMModel read_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ConfigError("checkpoint: bad magic");
    const auto version = get_uint(is, 4);
    if (version != kCheckpointVersion)
        throw ConfigError("checkpoint: unsupported version " + std::to_string(version));
    const auto d = get_uint(is, 8);
    FeatureSpec f{static_cast<std::size_t>(get_uint(is, 8)), static_cast<std::size_t>(get_uint(is, 8))};
    const auto n_sizes = get_uint(is, 8);
    if (n_sizes < 2 || n_sizes > 64) throw ConfigError("checkpoint: implausible layer count");
    std::vector<std::size_t> sizes(n_sizes);
    for (auto& s : sizes) s = static_cast<std::size_t>(get_uint(is, 8));
    if (sizes.front() != d + f.t_features + f.lambda_features || sizes.back() != d)
        throw ConfigError("checkpoint: layer sizes inconsistent with dimension and features");
    PMModel model(static_cast<Eigen::Index>(d), std::vector<std::size_t>(sizes.begin() + 1, sizes.end() - 1), f, 0);
    const auto count = get_uint(is, 8);
    if (count != model.parameter_count()) throw ConfigError("checkpoint: parameter count mismatch");
    for (Eigen::Index i = 0; i < model.parameters().size(); ++i) {
        const std::uint64_t bits = get_uint(is, 8);
        double v;
        std::memcpy(&v, &bits, 8);
        model.parameters()[i] = v;
    }
    return model;
}

void save_checkpoint(const std::filesystem::path& path, const PMModel& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open checkpoint for writing: " + path.string());
    write_checkpoint(os, model);
}

PMModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path.string());
    return read_checkpoint(is);
}

}  // namespace proxdm
