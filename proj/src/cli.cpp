#include "proxdm/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "proxdm/datasets.hpp"
#include "proxdm/errors.hpp"
#include "proxdm/io.hpp"
#include "proxdm/metrics.hpp"
#include "proxdm/rng.hpp"
#include "proxdm/theory_checks.hpp"

namespace proxdm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Tags for seeds derived from the run seed.
constexpr std::uint64_t kReferenceTag = 1;
constexpr std::uint64_t kDataTag = 2;
constexpr std::uint64_t kEvalTag = 3;
constexpr std::uint64_t kInitTag = 4;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) { return CounterRng(seed).split(tag)(); }

/// Typed access to one JSON object that remembers which keys were read, so
/// leftovers can be reported as unknown.
class Fields {
  public:
    Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    const std::string& path() const { return path_; }
    std::string at(const std::string& key) const { return path_ + "." + key; }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(at(key) + ": " + msg);
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    const json& required(const std::string& key) {
        if (!has(key)) fail(key, "is required");
        seen_.insert(key);
        return j_.at(key);
    }

    double number(const std::string& key) {
        const auto& v = required(key);
        if (!v.is_number()) fail(key, "expected a number");
        const double d = v.get<double>();
        if (!std::isfinite(d)) fail(key, "must be finite");
        return d;
    }
    double number(const std::string& key, double def) { return has(key) ? number(key) : def; }

    double positive(const std::string& key) {
        const double d = number(key);
        if (!(d > 0.0)) fail(key, "must be > 0");
        return d;
    }
    double positive(const std::string& key, double def) { return has(key) ? positive(key) : def; }

    std::uint64_t u64(const std::string& key, std::uint64_t def) {
        if (!has(key)) return def;
        return as_u64(required(key), at(key));
    }

    std::size_t count(const std::string& key) {
        const auto v = as_u64(required(key), at(key));
        if (v == 0) fail(key, "must be >= 1");
        return static_cast<std::size_t>(v);
    }
    std::size_t count(const std::string& key, std::size_t def) { return has(key) ? count(key) : def; }

    std::string text(const std::string& key) {
        const auto& v = required(key);
        if (!v.is_string()) fail(key, "expected a string");
        return v.get<std::string>();
    }
    std::string text(const std::string& key, const std::string& def) { return has(key) ? text(key) : def; }

    bool flag(const std::string& key, bool def) {
        if (!has(key)) return def;
        const auto& v = required(key);
        if (!v.is_boolean()) fail(key, "expected true or false");
        return v.get<bool>();
    }

    const json& array(const std::string& key) {
        const auto& v = required(key);
        if (!v.is_array()) fail(key, "expected an array");
        if (v.empty()) fail(key, "must not be empty");
        return v;
    }

    std::vector<double> numbers(const std::string& key) {
        std::vector<double> out;
        const auto& v = array(key);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_number()) fail(key, "element " + std::to_string(i) + " is not a number");
            out.push_back(v[i].get<double>());
            if (!std::isfinite(out.back())) fail(key, "element " + std::to_string(i) + " must be finite");
        }
        return out;
    }

    std::vector<std::size_t> counts(const std::string& key) {
        std::vector<std::size_t> out;
        const auto& v = array(key);
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto c = as_u64(v[i], at(key) + "[" + std::to_string(i) + "]");
            if (c == 0) fail(key, "element " + std::to_string(i) + " must be >= 1");
            out.push_back(static_cast<std::size_t>(c));
        }
        return out;
    }

    std::vector<std::string> texts(const std::string& key) {
        std::vector<std::string> out;
        const auto& v = array(key);
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (!v[i].is_string()) fail(key, "element " + std::to_string(i) + " is not a string");
            out.push_back(v[i].get<std::string>());
        }
        return out;
    }

    Fields object(const std::string& key) { return Fields(required(key), at(key)); }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.contains(item.key())) throw ConfigError(at(item.key()) + ": unknown key");
    }

  private:
    static std::uint64_t as_u64(const json& v, const std::string& where) {
        if (!v.is_number_integer()) throw ConfigError(where + ": expected a non-negative integer");
        if (v.is_number_unsigned()) return v.get<std::uint64_t>();
        const auto s = v.get<std::int64_t>();
        if (s < 0) throw ConfigError(where + ": expected a non-negative integer");
        return static_cast<std::uint64_t>(s);
    }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

// Runs `fn`, prefixing any ConfigError with the field path.
template <class Fn>
auto at_path(const std::string& path, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError& e) {
        if (std::string_view(e.what()).starts_with("config.")) throw;
        throw ConfigError(path + ": " + e.what());
    }
}

std::string resolve_file(Fields& f, const std::string& key, const fs::path& base) {
    fs::path p(f.text(key));
    if (p.empty()) f.fail(key, "path is empty");
    if (p.is_relative()) p = base / p;
    p = fs::absolute(p).lexically_normal();
    if (!fs::is_regular_file(p)) f.fail(key, "file not found: " + p.string());
    return p.string();
}

ScheduleSpec parse_schedule(Fields f, const ScheduleSpec& def) {
    const std::string kind = f.text("kind", def.kind() == ScheduleSpec::Kind::Linear ? "linear" : "constant");
    const double T = f.positive("T", def.horizon());
    ScheduleSpec out = def;
    if (kind == "linear") {
        const bool same = def.kind() == ScheduleSpec::Kind::Linear;
        const double lo = f.positive("beta_min", same ? def.beta_min() : 0.1);
        const double hi = f.positive("beta_max", same ? def.beta_max() : 20.0);
        out = at_path(f.path(), [&] { return ScheduleSpec::linear(lo, hi, T); });
    } else if (kind == "constant") {
        const double b = f.positive("beta", def.kind() == ScheduleSpec::Kind::Constant ? def.beta_min() : 2.0);
        out = at_path(f.path(), [&] { return ScheduleSpec::constant(b, T); });
    } else {
        f.fail("kind", "expected linear or constant, got '" + kind + "'");
    }
    f.finish();
    return out;
}

ScheduleSpec schedule_field(Fields& f, const ScheduleSpec& def) {
    return f.has("schedule") ? parse_schedule(f.object("schedule"), def) : def;
}

Json schedule_json(const ScheduleSpec& s) {
    Json j;
    if (s.kind() == ScheduleSpec::Kind::Linear) {
        j["kind"] = "linear";
        j["beta_min"] = s.beta_min();
        j["beta_max"] = s.beta_max();
    } else {
        j["kind"] = "constant";
        j["beta"] = s.beta_min();
    }
    j["T"] = s.horizon();
    return j;
}

TargetSpec parse_target(Fields f, const fs::path& base) {
    TargetSpec t;
    const std::string type = f.text("type");
    if (type == "gaussian") {
        t.kind = TargetSpec::Kind::Gaussian;
        t.mean = f.numbers("mean");
        t.variance = f.positive("variance", 1.0);
    } else if (type == "mixture") {
        t.kind = TargetSpec::Kind::Mixture;
        t.weights = f.numbers("weights");
        const auto& rows = f.array("means");
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto where = f.at("means") + "[" + std::to_string(i) + "]";
            if (!rows[i].is_array() || rows[i].empty()) throw ConfigError(where + ": expected a non-empty array");
            std::vector<double> row;
            for (const auto& v : rows[i]) {
                if (!v.is_number()) throw ConfigError(where + ": expected numbers");
                row.push_back(v.get<double>());
            }
            t.means.push_back(std::move(row));
        }
        t.variances = f.numbers("variances");
    } else if (type == "ring") {
        t.kind = TargetSpec::Kind::Ring;
        t.modes = f.count("modes", 8);
        t.radius = f.positive("radius", 2.0);
        t.variance = f.positive("variance", 0.1);
    } else if (type == "point_cloud") {
        t.kind = TargetSpec::Kind::PointCloud;
        if (f.has("dataset") == f.has("path")) throw ConfigError(f.path() + ": give exactly one of dataset or path");
        if (f.has("dataset")) t.dataset = f.text("dataset");
        else t.path = resolve_file(f, "path", base);
        t.variance = f.positive("variance", 1e-4);
    } else {
        f.fail("type", "expected gaussian, mixture, ring or point_cloud, got '" + type + "'");
    }
    f.finish();
    at_path(f.path(), [&] { return build_target(t); });
    return t;
}

Json target_json(const TargetSpec& t) {
    Json j;
    switch (t.kind) {
        case TargetSpec::Kind::Gaussian:
            j["type"] = "gaussian";
            j["mean"] = t.mean;
            j["variance"] = t.variance;
            break;
        case TargetSpec::Kind::Mixture:
            j["type"] = "mixture";
            j["weights"] = t.weights;
            j["means"] = t.means;
            j["variances"] = t.variances;
            break;
        case TargetSpec::Kind::Ring:
            j["type"] = "ring";
            j["modes"] = t.modes;
            j["radius"] = t.radius;
            j["variance"] = t.variance;
            break;
        case TargetSpec::Kind::PointCloud:
            j["type"] = "point_cloud";
            if (!t.dataset.empty()) j["dataset"] = t.dataset;
            else j["path"] = t.path;
            j["variance"] = t.variance;
            break;
    }
    return j;
}

Method parse_method_at(const std::string& where, const std::string& name) {
    return at_path(where, [&] { return parse_method(name); });
}

std::vector<Method> parse_methods(Fields& f, const std::string& key) {
    std::vector<Method> out;
    for (const auto& n : f.texts(key)) out.push_back(parse_method_at(f.at(key), n));
    return out;
}

Json methods_json(const std::vector<Method>& ms) {
    Json j = Json::array();
    for (auto m : ms) j.push_back(std::string(method_name(m)));
    return j;
}

bool learned_compatible(Method m) {
    return m == Method::PdaBackward || m == Method::PdaHybrid || m == Method::PfOdeProx;
}

OracleSpec parse_oracle(Fields& parent, const fs::path& base) {
    OracleSpec o;
    if (!parent.has("oracle")) return o;
    Fields f = parent.object("oracle");
    const std::string type = f.text("type", "exact");
    if (type == "learned") {
        o.learned = true;
        o.checkpoint = resolve_file(f, "checkpoint", base);
    } else if (type != "exact") {
        f.fail("type", "expected exact or learned, got '" + type + "'");
    }
    f.finish();
    return o;
}

Json oracle_json(const OracleSpec& o) {
    Json j;
    j["type"] = o.learned ? "learned" : "exact";
    if (o.learned) j["checkpoint"] = o.checkpoint;
    return j;
}

void check_oracle_methods(const Fields& f, const OracleSpec& o, const std::vector<Method>& methods) {
    if (!o.learned) return;
    for (auto m : methods)
        if (!learned_compatible(m))
            throw ConfigError(f.at("oracle") + ": a learned prox cannot drive " + std::string(method_name(m)));
}

void check_w2_size(Fields& f, bool w2, std::size_t chains) {
    if (w2 && chains > kMaxExactW2)
        f.fail("chains", "exact W2 supports at most " + std::to_string(kMaxExactW2) + " chains; set w2 to false");
}

SchemeSpec parse_scheme(Fields& parent) {
    SchemeSpec s;
    if (!parent.has("scheme")) return s;
    Fields f = parent.object("scheme");
    const std::string kind = f.text("kind", "hybrid");
    if (kind == "hybrid") s.kind = TLambdaScheme::Kind::Hybrid;
    else if (kind == "backward") s.kind = TLambdaScheme::Kind::Backward;
    else f.fail("kind", "expected hybrid or backward, got '" + kind + "'");
    if (f.has("candidates")) s.candidates = f.counts("candidates");
    if (f.has("weights")) {
        if (f.required("weights").is_string()) {
            const auto w = f.text("weights");
            if (w == "log_n") s.rule = TLambdaScheme::WeightRule::LogN;
            else if (w == "cube_root_n") s.rule = TLambdaScheme::WeightRule::CubeRootN;
            else f.fail("weights", "expected log_n, cube_root_n or an array, got '" + w + "'");
        } else {
            s.rule.reset();
            s.weights = f.numbers("weights");
            if (s.weights.size() != s.candidates.size()) f.fail("weights", "needs one weight per candidate");
        }
    }
    f.finish();
    return s;
}

Json scheme_json(const SchemeSpec& s) {
    Json j;
    j["kind"] = s.kind == TLambdaScheme::Kind::Hybrid ? "hybrid" : "backward";
    j["candidates"] = s.candidates;
    if (s.rule) j["weights"] = *s.rule == TLambdaScheme::WeightRule::LogN ? "log_n" : "cube_root_n";
    else j["weights"] = s.weights;
    return j;
}

std::optional<double> eps_last_field(Fields& f) {
    if (!f.has("eps_last")) return std::nullopt;
    return f.positive("eps_last");
}

SampleCmd parse_sample(Fields& f, const fs::path& base) {
    SampleCmd c;
    c.target = parse_target(f.object("target"), base);
    c.schedule = schedule_field(f, c.schedule);
    c.method = parse_method_at(f.at("method"), f.text("method"));
    c.steps = f.count("steps");
    c.chains = f.count("chains", c.chains);
    c.eps_last = eps_last_field(f);
    c.w2 = f.flag("w2", c.w2);
    c.oracle = parse_oracle(f, base);
    check_oracle_methods(f, c.oracle, {c.method});
    check_w2_size(f, c.w2, c.chains);
    return c;
}

SweepCmd parse_sweep(Fields& f, const fs::path& base) {
    SweepCmd c;
    c.target = parse_target(f.object("target"), base);
    c.schedule = schedule_field(f, c.schedule);
    c.methods = parse_methods(f, "methods");
    c.steps = f.counts("steps");
    c.chains = f.count("chains", c.chains);
    c.eps_last = eps_last_field(f);
    c.w2 = f.flag("w2", c.w2);
    c.oracle = parse_oracle(f, base);
    check_oracle_methods(f, c.oracle, c.methods);
    check_w2_size(f, c.w2, c.chains);
    return c;
}

KlSweepCmd parse_kl_sweep(Fields& f, const fs::path& base) {
    KlSweepCmd c;
    c.target = parse_target(f.object("target"), base);
    if (build_target(c.target).size() != 1)
        f.fail("target", "kl-sweep needs a single Gaussian target (the exact pushforward is affine-only)");
    c.schedule = schedule_field(f, c.schedule);
    c.methods = parse_methods(f, "methods");
    c.steps = f.counts("steps");
    c.eps_last = eps_last_field(f);
    c.floor_factor = f.count("floor_factor", c.floor_factor);
    if (c.floor_factor < 2) f.fail("floor_factor", "must be >= 2");
    return c;
}

DataSpec parse_data(Fields f, const fs::path& base, std::uint64_t seed) {
    DataSpec d;
    const std::string source = f.text("source");
    if (source == "target") {
        d.source = DataSpec::Source::Target;
        d.samples = f.count("samples", d.samples);
        d.seed = f.u64("seed", derive_seed(seed, kDataTag));
    } else if (source == "builtin") {
        d.source = DataSpec::Source::Builtin;
        d.name = f.text("name");
        const auto& names = builtin_dataset_names();
        if (std::find(names.begin(), names.end(), d.name) == names.end())
            f.fail("name", "unknown built-in dataset '" + d.name + "'");
    } else if (source == "csv") {
        d.source = DataSpec::Source::Csv;
        d.path = resolve_file(f, "path", base);
    } else {
        f.fail("source", "expected target, builtin or csv, got '" + source + "'");
    }
    f.finish();
    return d;
}

Json data_json(const DataSpec& d) {
    Json j;
    switch (d.source) {
        case DataSpec::Source::Target:
            j["source"] = "target";
            j["samples"] = d.samples;
            j["seed"] = d.seed;
            break;
        case DataSpec::Source::Builtin:
            j["source"] = "builtin";
            j["name"] = d.name;
            break;
        case DataSpec::Source::Csv:
            j["source"] = "csv";
            j["path"] = d.path;
            break;
    }
    return j;
}

ModelSpec parse_model(Fields& parent, std::uint64_t seed) {
    ModelSpec m;
    m.init_seed = derive_seed(seed, kInitTag);
    if (!parent.has("model")) return m;
    Fields f = parent.object("model");
    if (f.has("hidden")) m.hidden = f.counts("hidden");
    m.t_features = f.count("t_features", m.t_features);
    m.lambda_features = f.count("lambda_features", m.lambda_features);
    if (m.t_features % 2 != 0) f.fail("t_features", "must be even");
    if (m.lambda_features % 2 != 0) f.fail("lambda_features", "must be even");
    m.init_seed = f.u64("init_seed", m.init_seed);
    f.finish();
    return m;
}

Json model_json(const ModelSpec& m) {
    Json j;
    j["hidden"] = m.hidden;
    j["t_features"] = m.t_features;
    j["lambda_features"] = m.lambda_features;
    j["init_seed"] = m.init_seed;
    return j;
}

void parse_train(Fields f, TrainPmCmd& c) {
    c.batch_size = f.count("batch_size", c.batch_size);
    c.learning_rate = f.positive("learning_rate", c.learning_rate);
    c.momentum = f.number("momentum", c.momentum);
    if (!(c.momentum >= 0.0 && c.momentum < 1.0)) f.fail("momentum", "must lie in [0, 1)");
    const auto& phases = f.array("phases");
    for (std::size_t i = 0; i < phases.size(); ++i) {
        Fields p(phases[i], f.at("phases") + "[" + std::to_string(i) + "]");
        TrainPhase ph;
        const std::string loss = p.text("loss");
        if (loss == "l1") ph.loss = LossKind::L1;
        else if (loss == "pm") ph.loss = LossKind::PM;
        else p.fail("loss", "expected l1 or pm, got '" + loss + "'");
        if (ph.loss == LossKind::PM) ph.zeta = p.positive("zeta");
        else ph.zeta = 0.0;
        ph.iterations = p.count("iterations");
        if (p.has("learning_rate")) ph.learning_rate = p.positive("learning_rate");
        p.finish();
        c.phases.push_back(ph);
    }
    f.finish();
}

Json train_json(const TrainPmCmd& c) {
    Json j;
    j["batch_size"] = c.batch_size;
    j["learning_rate"] = c.learning_rate;
    j["momentum"] = c.momentum;
    Json phases = Json::array();
    for (const auto& p : c.phases) {
        Json pj;
        pj["loss"] = p.loss == LossKind::L1 ? "l1" : "pm";
        if (p.loss == LossKind::PM) pj["zeta"] = p.zeta;
        pj["iterations"] = p.iterations;
        if (p.learning_rate > 0.0) pj["learning_rate"] = p.learning_rate;
        phases.push_back(pj);
    }
    j["phases"] = phases;
    return j;
}

TrainPmCmd parse_train_pm(Fields& f, const fs::path& base, std::uint64_t seed) {
    TrainPmCmd c;
    c.data = parse_data(f.object("data"), base, seed);
    if (f.has("target")) c.target = parse_target(f.object("target"), base);
    if (c.data.source == DataSpec::Source::Target && !c.target)
        f.fail("target", "is required when data.source is target");
    c.schedule = schedule_field(f, c.schedule);
    c.model = parse_model(f, seed);
    parse_train(f.object("train"), c);
    c.scheme = parse_scheme(f);
    at_path(f.at("scheme"), [&] { return build_scheme(c.scheme, c.schedule); });
    c.eval_probes = f.count("eval_probes", c.eval_probes);
    return c;
}

EvalPmCmd parse_eval_pm(Fields& f, const fs::path& base) {
    EvalPmCmd c;
    c.checkpoint = resolve_file(f, "checkpoint", base);
    c.target = parse_target(f.object("target"), base);
    c.schedule = schedule_field(f, c.schedule);
    c.scheme = parse_scheme(f);
    at_path(f.at("scheme"), [&] { return build_scheme(c.scheme, c.schedule); });
    c.probes = f.count("probes", c.probes);
    if (f.has("sampling")) {
        Fields s = f.object("sampling");
        SamplingCompare sc;
        sc.method = parse_method_at(s.at("method"), s.text("method", std::string(method_name(sc.method))));
        if (!learned_compatible(sc.method))
            s.fail("method", "a learned prox cannot drive " + std::string(method_name(sc.method)));
        sc.steps = s.count("steps", sc.steps);
        sc.chains = s.count("chains", sc.chains);
        check_w2_size(s, true, sc.chains);
        s.finish();
        c.sampling = sc;
    }
    return c;
}

CheckTheoryCmd parse_check_theory(Fields& f) {
    CheckTheoryCmd c;
    if (f.has("fixtures")) {
        c.fixtures = f.texts("fixtures");
        const auto& names = builtin_fixture_names();
        for (const auto& n : c.fixtures)
            if (std::find(names.begin(), names.end(), n) == names.end())
                f.fail("fixtures", "unknown fixture '" + n + "' (expected stationary, shifted or gmm8)");
    }
    c.probes = f.count("probes", c.probes);
    if (f.has("h")) c.h = f.positive("h");
    return c;
}

// ---- running ----

class OutputDir {
  public:
    explicit OutputDir(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

    void emit(const std::string& name, const std::string& bytes) {
        const auto path = dir_ / name;
        std::ofstream os(path, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("cannot write " + path.string());
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!os) throw std::runtime_error("write failed for " + path.string());
        artifacts_.push_back({name, git_blob_sha1(bytes), bytes.size()});
    }

    const fs::path& dir() const { return dir_; }
    const std::vector<Artifact>& artifacts() const { return artifacts_; }

  private:
    fs::path dir_;
    std::vector<Artifact> artifacts_;
};

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw ConfigError("cannot read " + p.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::string csv_quote(const std::string& s) {
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

OracleHandle make_oracle(const OracleSpec& spec, const GaussianMixture& target, const ScheduleSpec& schedule,
                         Method method) {
    if (spec.learned) {
        const auto model = load_checkpoint(spec.checkpoint);
        if (model.dim() != target.dim())
            throw ConfigError("config.oracle.checkpoint: model dimension " + std::to_string(model.dim()) +
                              " does not match the target dimension " + std::to_string(target.dim()));
        return learned_oracle(model);
    }
    if (method == Method::VeProx) return OracleHandle::exact_ve(target);
    return OracleHandle::exact(target, schedule);
}

struct CellSpec {
    const GaussianMixture* target;
    ScheduleSpec schedule;
    Method method;
    std::size_t steps;
    std::size_t chains;
    std::optional<double> eps_last;
    bool w2;
};

// Samples one (method, N) cell and appends its summary rows.
Matrix run_cell(const CellSpec& c, const OracleHandle& oracle, std::uint64_t seed, std::size_t threads,
                std::ostream& rows) {
    SamplerConfig sc(c.method, c.schedule, make_uniform_grid(c.schedule.horizon(), c.steps), c.chains, seed,
                     c.eps_last);
    sc.threads = threads;
    const auto trace = run_sampler(sc, oracle, c.target->dim());
    const Matrix& out = trace.output();
    if (!out.allFinite())
        throw NumericError(std::string(method_name(c.method)) + " N=" + std::to_string(c.steps) +
                           ": non-finite samples");
    const std::string name(method_name(c.method));
    const double h = c.schedule.horizon() / static_cast<double>(c.steps);
    const auto mom = empirical_moments(out);
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        write_result_row(rows, {name, c.steps, h, "mean_x" + std::to_string(j), mom.mean[j]});
    for (Eigen::Index j = 0; j < out.cols(); ++j)
        write_result_row(rows, {name, c.steps, h, "var_x" + std::to_string(j), mom.var[j]});
    if (c.w2) {
        const Matrix ref = sample_target(*c.target, c.chains, derive_seed(seed, kReferenceTag));
        write_result_row(rows, {name, c.steps, h, "w2", wasserstein2(out, ref).value});
    }
    return out;
}

void run_sample(const RunConfig& cfg, const SampleCmd& c, OutputDir& dir) {
    const auto target = build_target(c.target);
    const auto oracle = make_oracle(c.oracle, target, c.schedule, c.method);
    std::ostringstream rows;
    write_results_header(rows);
    const Matrix out =
        run_cell({&target, c.schedule, c.method, c.steps, c.chains, c.eps_last, c.w2}, oracle, cfg.seed,
                 cfg.threads, rows);
    std::ostringstream samples;
    write_matrix_csv(samples, out, coordinate_header(out.cols()));
    dir.emit("samples.csv", samples.str());
    dir.emit("summary.csv", rows.str());
}

void write_failure(std::ostream& os, Method m, std::size_t n, const char* kind, const std::string& msg) {
    os << method_name(m) << ',' << n << ',' << kind << ',' << csv_quote(msg) << '\n';
}

void run_sweep(const RunConfig& cfg, const SweepCmd& c, OutputDir& dir) {
    const auto target = build_target(c.target);
    std::ostringstream rows, failures;
    write_results_header(rows);
    failures << "method,N,kind,message\n";
    for (auto m : c.methods) {
        const auto oracle = make_oracle(c.oracle, target, c.schedule, m);
        for (auto n : c.steps) {
            std::ostringstream cell;
            try {
                run_cell({&target, c.schedule, m, n, c.chains, c.eps_last, c.w2}, oracle, cfg.seed, cfg.threads,
                         cell);
                rows << cell.str();
            } catch (const ConfigError& e) {
                write_failure(failures, m, n, "config", e.what());
            } catch (const NumericError& e) {
                write_failure(failures, m, n, "numeric", e.what());
            }
        }
    }
    dir.emit("results.csv", rows.str());
    dir.emit("failures.csv", failures.str());
}

void run_kl_sweep(const KlSweepCmd& c, OutputDir& dir) {
    const auto target = build_target(c.target);
    const auto d = target.dim();
    const AffineGaussianState p0{target.mean(0), target.variance(0)};
    const double T = c.schedule.horizon();
    const std::size_t n_fine = c.floor_factor * *std::max_element(c.steps.begin(), c.steps.end());

    std::ostringstream rows, slopes, failures;
    write_results_header(rows);
    slopes << "method,slope,intercept,r2,floor,status\n";
    failures << "method,N,kind,message\n";
    for (auto m : c.methods) {
        const std::string name(method_name(m));
        auto kl_at = [&](std::size_t n) {
            const auto q = pushforward_exact(m, c.schedule, make_uniform_grid(T, n), target, c.eps_last);
            return gaussian_kl(p0, q, d);
        };
        std::vector<std::pair<double, double>> points;
        for (auto n : c.steps) {
            const double h = T / static_cast<double>(n);
            try {
                const double kl = kl_at(n);
                write_result_row(rows, {name, n, h, "kl", kl});
                points.emplace_back(h, kl);
            } catch (const ConfigError& e) {
                write_failure(failures, m, n, "config", e.what());
            }
        }
        double floor = 0.0;
        try {
            floor = kl_at(n_fine);
            write_result_row(rows, {name, n_fine, T / static_cast<double>(n_fine), "kl_floor", floor});
        } catch (const ConfigError& e) {
            write_failure(failures, m, n_fine, "config", e.what());
        }
        slopes << name << ',';
        const bool fixed_point =
            !points.empty() && std::all_of(points.begin(), points.end(), [](auto& p) { return p.second <= 1e-12; });
        if (fixed_point) {
            slopes << ",,," << format_double(floor) << ",fixed_point\n";
            continue;
        }
        try {
            const auto fit = fit_convergence(points, floor);
            slopes << format_double(fit.slope) << ',' << format_double(fit.intercept) << ','
                   << format_double(fit.r2) << ',' << format_double(floor) << ",ok\n";
        } catch (const ConfigError&) {
            slopes << ",,," << format_double(floor) << ",insufficient_points\n";
        }
    }
    dir.emit("kl.csv", rows.str());
    dir.emit("slopes.csv", slopes.str());
    dir.emit("failures.csv", failures.str());
}

void write_oracle_error_header(std::ostream& os) { os << "model,probes,solver_failures,mean_error,max_error\n"; }

void write_oracle_error(std::ostream& os, const std::string& model, const OracleErrorReport& r) {
    os << model << ',' << r.probes << ',' << r.solver_failures << ',' << format_double(r.mean_error) << ','
       << format_double(r.max_error) << '\n';
}

Matrix load_training_data(const TrainPmCmd& c) {
    switch (c.data.source) {
        case DataSpec::Source::Target: return sample_target(build_target(*c.target), c.data.samples, c.data.seed);
        case DataSpec::Source::Builtin: return builtin_point_cloud(c.data.name);
        case DataSpec::Source::Csv: break;
    }
    return at_path("config.data.path", [&] { return read_matrix_csv(c.data.path); });
}

void run_train_pm(const RunConfig& cfg, const TrainPmCmd& c, OutputDir& dir) {
    const Matrix data = load_training_data(c);
    std::optional<GaussianMixture> target;
    if (c.target) {
        target = build_target(*c.target);
        if (target->dim() != data.cols())
            throw ConfigError("config.target: dimension " + std::to_string(target->dim()) +
                              " does not match the data dimension " + std::to_string(data.cols()));
    }
    PMModel model(data.cols(), c.model.hidden, FeatureSpec{c.model.t_features, c.model.lambda_features},
                  c.model.init_seed);
    const PMModel untrained = model;
    TrainConfig tc;
    tc.phases = c.phases;
    tc.batch_size = c.batch_size;
    tc.learning_rate = c.learning_rate;
    tc.momentum = c.momentum;
    tc.seed = cfg.seed;
    tc.validate();
    const auto scheme = build_scheme(c.scheme, c.schedule);
    const auto result = train(model, data, tc, scheme);

    std::ostringstream ckpt(std::ios::binary), curve;
    write_checkpoint(ckpt, model);
    write_loss_curve_csv(curve, result.curve);
    dir.emit("checkpoint.pdmm", ckpt.str());
    dir.emit("loss_curve.csv", curve.str());
    if (target) {
        const auto eval_seed = derive_seed(cfg.seed, kEvalTag);
        std::ostringstream err;
        write_oracle_error_header(err);
        write_oracle_error(err, "untrained", eval_against_oracle(untrained, *target, scheme, c.eval_probes, eval_seed));
        write_oracle_error(err, "trained", eval_against_oracle(model, *target, scheme, c.eval_probes, eval_seed));
        dir.emit("oracle_error.csv", err.str());
    }
}

void run_eval_pm(const RunConfig& cfg, const EvalPmCmd& c, OutputDir& dir) {
    const auto model = at_path("config.checkpoint", [&] { return load_checkpoint(c.checkpoint); });
    const auto target = build_target(c.target);
    if (model.dim() != target.dim())
        throw ConfigError("config.checkpoint: model dimension " + std::to_string(model.dim()) +
                          " does not match the target dimension " + std::to_string(target.dim()));
    const auto scheme = build_scheme(c.scheme, c.schedule);
    std::ostringstream err;
    write_oracle_error_header(err);
    write_oracle_error(err, "checkpoint",
                       eval_against_oracle(model, target, scheme, c.probes, derive_seed(cfg.seed, kEvalTag)));
    dir.emit("oracle_error.csv", err.str());

    if (c.sampling) {
        const auto& s = *c.sampling;
        const Matrix ref = sample_target(target, s.chains, derive_seed(cfg.seed, kReferenceTag));
        const double h = c.schedule.horizon() / static_cast<double>(s.steps);
        std::ostringstream rows;
        rows << "oracle,method,N,h,w2\n";
        for (bool learned : {true, false}) {
            SamplerConfig sc(s.method, c.schedule, make_uniform_grid(c.schedule.horizon(), s.steps), s.chains,
                             cfg.seed);
            sc.threads = cfg.threads;
            const auto oracle = learned ? learned_oracle(model) : OracleHandle::exact(target, c.schedule);
            const auto trace = run_sampler(sc, oracle, target.dim());
            rows << (learned ? "learned" : "exact") << ',' << method_name(s.method) << ',' << s.steps << ','
                 << format_double(h) << ',' << format_double(wasserstein2(trace.output(), ref).value) << '\n';
        }
        dir.emit("sampling.csv", rows.str());
    }
}

bool run_check_theory(const RunConfig& cfg, const CheckTheoryCmd& c, OutputDir& dir) {
    std::vector<CheckResult> all;
    for (const auto& name : c.fixtures) {
        const auto fx = make_builtin_fixture(name, cfg.seed, c.probes, c.h);
        auto rows = run_all_checks(fx, static_cast<unsigned>(cfg.threads));
        all.insert(all.end(), rows.begin(), rows.end());
    }
    std::ostringstream os;
    write_check_csv(os, all);
    dir.emit("theory_checks.csv", os.str());
    return std::any_of(all.begin(), all.end(), [](const CheckResult& r) { return r.status == CheckStatus::Fail; });
}

// Referenced input files whose contents feed the run.
std::vector<std::string> input_files(const RunConfig& cfg) {
    std::vector<std::string> files;
    auto add_target = [&](const TargetSpec& t) {
        if (!t.path.empty()) files.push_back(t.path);
    };
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SampleCmd> || std::is_same_v<T, SweepCmd>) {
                add_target(c.target);
                if (c.oracle.learned) files.push_back(c.oracle.checkpoint);
            } else if constexpr (std::is_same_v<T, KlSweepCmd>) {
                add_target(c.target);
            } else if constexpr (std::is_same_v<T, TrainPmCmd>) {
                if (c.target) add_target(*c.target);
                if (!c.data.path.empty()) files.push_back(c.data.path);
            } else if constexpr (std::is_same_v<T, EvalPmCmd>) {
                files.push_back(c.checkpoint);
                add_target(c.target);
            }
        },
        cfg.body);
    return files;
}

}  // namespace

std::string_view command_name(Command c) {
    switch (c) {
        case Command::Sample: return "sample";
        case Command::Sweep: return "sweep";
        case Command::KlSweep: return "kl-sweep";
        case Command::TrainPm: return "train-pm";
        case Command::EvalPm: return "eval-pm";
        case Command::CheckTheory: return "check-theory";
    }
    return "unknown";
}

Command parse_command(std::string_view name) {
    for (auto c : {Command::Sample, Command::Sweep, Command::KlSweep, Command::TrainPm, Command::EvalPm,
                   Command::CheckTheory})
        if (command_name(c) == name) return c;
    throw ConfigError("unknown command '" + std::string(name) + "'");
}

GaussianMixture build_target(const TargetSpec& t) {
    switch (t.kind) {
        case TargetSpec::Kind::Gaussian: {
            Vector m(static_cast<Eigen::Index>(t.mean.size()));
            for (std::size_t i = 0; i < t.mean.size(); ++i) m[static_cast<Eigen::Index>(i)] = t.mean[i];
            return GaussianMixture::gaussian(m, t.variance);
        }
        case TargetSpec::Kind::Mixture: {
            const auto k = t.means.size();
            const auto d = t.means.empty() ? 0 : t.means.front().size();
            Matrix means(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(k));
            for (std::size_t i = 0; i < k; ++i) {
                if (t.means[i].size() != d) throw ConfigError("mixture means must all have the same dimension");
                for (std::size_t j = 0; j < d; ++j)
                    means(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = t.means[i][j];
            }
            return GaussianMixture(t.weights, means, t.variances);
        }
        case TargetSpec::Kind::Ring: return GaussianMixture::ring(t.modes, t.radius, t.variance);
        case TargetSpec::Kind::PointCloud: {
            const Matrix pts = t.dataset.empty() ? read_matrix_csv(t.path) : builtin_point_cloud(t.dataset);
            return GaussianMixture::point_cloud(pts, t.variance);
        }
    }
    throw ConfigError("unknown target kind");
}

TLambdaScheme build_scheme(const SchemeSpec& s, const ScheduleSpec& schedule) {
    if (s.rule) return TLambdaScheme(schedule, s.kind, s.candidates, *s.rule);
    return TLambdaScheme(schedule, s.kind, s.candidates, s.weights);
}

RunConfig parse_run_config(const json& doc, Command command, const fs::path& base_dir,
                           std::optional<std::uint64_t> seed_override) {
    Fields f(doc, "config");
    if (f.has("command")) {
        const auto named = f.text("command");
        if (named != command_name(command))
            f.fail("command", "config is for '" + named + "' but the command is '" +
                                  std::string(command_name(command)) + "'");
    }
    RunConfig cfg;
    cfg.command = command;
    cfg.seed = f.u64("seed", 0);
    if (seed_override) cfg.seed = *seed_override;
    cfg.threads = f.count("threads", 1);
    const fs::path base = fs::absolute(base_dir);
    switch (command) {
        case Command::Sample: cfg.body = parse_sample(f, base); break;
        case Command::Sweep: cfg.body = parse_sweep(f, base); break;
        case Command::KlSweep: cfg.body = parse_kl_sweep(f, base); break;
        case Command::TrainPm: cfg.body = parse_train_pm(f, base, cfg.seed); break;
        case Command::EvalPm: cfg.body = parse_eval_pm(f, base); break;
        case Command::CheckTheory: cfg.body = parse_check_theory(f); break;
    }
    f.finish();
    return cfg;
}

RunConfig load_run_config(const fs::path& file, Command command, std::optional<std::uint64_t> seed_override) {
    if (!fs::is_regular_file(file)) throw ConfigError("config file not found: " + file.string());
    const std::string text = read_bytes(file);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: invalid JSON in " + file.string() + ": " + e.what());
    }
    return parse_run_config(doc, command, fs::absolute(file).parent_path(), seed_override);
}

Json config_to_json(const RunConfig& cfg) {
    Json j;
    j["command"] = std::string(command_name(cfg.command));
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SampleCmd>) {
                j["target"] = target_json(c.target);
                j["schedule"] = schedule_json(c.schedule);
                j["method"] = std::string(method_name(c.method));
                j["steps"] = c.steps;
                j["chains"] = c.chains;
                if (c.eps_last) j["eps_last"] = *c.eps_last;
                j["w2"] = c.w2;
                j["oracle"] = oracle_json(c.oracle);
            } else if constexpr (std::is_same_v<T, SweepCmd>) {
                j["target"] = target_json(c.target);
                j["schedule"] = schedule_json(c.schedule);
                j["methods"] = methods_json(c.methods);
                j["steps"] = c.steps;
                j["chains"] = c.chains;
                if (c.eps_last) j["eps_last"] = *c.eps_last;
                j["w2"] = c.w2;
                j["oracle"] = oracle_json(c.oracle);
            } else if constexpr (std::is_same_v<T, KlSweepCmd>) {
                j["target"] = target_json(c.target);
                j["schedule"] = schedule_json(c.schedule);
                j["methods"] = methods_json(c.methods);
                j["steps"] = c.steps;
                if (c.eps_last) j["eps_last"] = *c.eps_last;
                j["floor_factor"] = c.floor_factor;
            } else if constexpr (std::is_same_v<T, TrainPmCmd>) {
                j["data"] = data_json(c.data);
                if (c.target) j["target"] = target_json(*c.target);
                j["schedule"] = schedule_json(c.schedule);
                j["model"] = model_json(c.model);
                j["train"] = train_json(c);
                j["scheme"] = scheme_json(c.scheme);
                j["eval_probes"] = c.eval_probes;
            } else if constexpr (std::is_same_v<T, EvalPmCmd>) {
                j["checkpoint"] = c.checkpoint;
                j["target"] = target_json(c.target);
                j["schedule"] = schedule_json(c.schedule);
                j["scheme"] = scheme_json(c.scheme);
                j["probes"] = c.probes;
                if (c.sampling) {
                    Json s;
                    s["method"] = std::string(method_name(c.sampling->method));
                    s["steps"] = c.sampling->steps;
                    s["chains"] = c.sampling->chains;
                    j["sampling"] = s;
                }
            } else {
                j["fixtures"] = c.fixtures;
                j["probes"] = c.probes;
                if (c.h) j["h"] = *c.h;
            }
        },
        cfg.body);
    return j;
}

std::string git_blob_sha1(std::string_view bytes) {
    const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr) throw std::runtime_error("sha1: cannot allocate digest context");
    const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                    EVP_DigestUpdate(ctx, header.data(), header.size()) == 1 &&
                    EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) == 1 &&
                    EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok) throw std::runtime_error("sha1: digest failed");
    std::ostringstream os;
    os << std::hex << std::setfill('0');
    for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(md[i]);
    return os.str();
}

ResultsBundle run_command(const RunConfig& cfg, const fs::path& out_dir) {
    ResultsBundle bundle;
    bundle.config = config_to_json(cfg);
    const std::string echo = bundle.config.dump(2) + "\n";

    Json inputs = Json::array();
    std::string digest_lines;
    auto add_input = [&](const std::string& name, const std::string& sha) {
        inputs.push_back(Json{{"name", name}, {"sha1", sha}});
        digest_lines += sha + " " + name + "\n";
    };
    add_input("config", git_blob_sha1(echo));
    for (const auto& f : input_files(cfg)) add_input(f, git_blob_sha1(read_bytes(f)));
    bundle.input_hash = git_blob_sha1(digest_lines);
    bundle.run_id = std::string(command_name(cfg.command)) + "-" + bundle.input_hash.substr(0, 12);

    OutputDir dir(out_dir);
    std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, SampleCmd>) run_sample(cfg, c, dir);
            else if constexpr (std::is_same_v<T, SweepCmd>) run_sweep(cfg, c, dir);
            else if constexpr (std::is_same_v<T, KlSweepCmd>) run_kl_sweep(c, dir);
            else if constexpr (std::is_same_v<T, TrainPmCmd>) run_train_pm(cfg, c, dir);
            else if constexpr (std::is_same_v<T, EvalPmCmd>) run_eval_pm(cfg, c, dir);
            else bundle.checks_failed = run_check_theory(cfg, c, dir);
        },
        cfg.body);
    dir.emit("config_echo.json", echo);
    bundle.artifacts = dir.artifacts();

    Json manifest;
    manifest["run_id"] = bundle.run_id;
    manifest["command"] = std::string(command_name(cfg.command));
    manifest["input_hash"] = bundle.input_hash;
    manifest["inputs"] = inputs;
    manifest["config"] = bundle.config;
    Json arts = Json::array();
    for (const auto& a : bundle.artifacts) arts.push_back(Json{{"path", a.path}, {"sha1", a.sha1}, {"bytes", a.bytes}});
    manifest["artifacts"] = arts;
    const std::string text = manifest.dump(2) + "\n";
    std::ofstream os(dir.dir() / "manifest.json", std::ios::binary | std::ios::trunc);
    os << text;
    if (!os) throw std::runtime_error("cannot write " + (dir.dir() / "manifest.json").string());
    return bundle;
}

int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Proximal diffusion samplers with closed-form oracles"};
    app.name("proxdm");
    std::string command;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    app.add_option("command", command, "sample | sweep | kl-sweep | train-pm | eval-pm | check-theory")
        ->required()
        ->check(CLI::IsMember({"sample", "sweep", "kl-sweep", "train-pm", "eval-pm", "check-theory"}));
    app.add_option("--config", config, "JSON config file")->required();
    app.add_option("--seed", seed, "Override the config seed");
    app.add_option("--out", out_dir, "Output directory");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "proxdm: " << e.what() << "\n";
        return 2;
    }

    try {
        const auto cfg = load_run_config(config, parse_command(command), seed);
        const auto bundle = run_command(cfg, out_dir);
        out << "run " << bundle.run_id << "\n";
        for (const auto& a : bundle.artifacts) out << "  " << (fs::path(out_dir) / a.path).string() << "\n";
        out << "  " << (fs::path(out_dir) / "manifest.json").string() << "\n";
        if (bundle.checks_failed) {
            err << "proxdm: one or more theory checks failed\n";
            return 3;
        }
        return 0;
    } catch (const NumericError& e) {
        err << "proxdm: numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        err << "proxdm: config error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        err << "proxdm: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::logic_error& e) {
        err << "proxdm: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "proxdm: failure: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace proxdm::cli
