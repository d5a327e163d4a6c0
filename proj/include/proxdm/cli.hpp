#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "proxdm/gaussian_mixture.hpp"
#include "proxdm/prox_match.hpp"
#include "proxdm/samplers.hpp"
#include "proxdm/schedule.hpp"

namespace proxdm::cli {

using Json = nlohmann::ordered_json;

enum class Command { Sample, Sweep, KlSweep, TrainPm, EvalPm, CheckTheory };

std::string_view command_name(Command c);
/// Throws ConfigError for an unknown name.
Command parse_command(std::string_view name);

/// Target distribution as written in a config file.
struct TargetSpec {
    enum class Kind { Gaussian, Mixture, Ring, PointCloud };
    Kind kind = Kind::Gaussian;
    std::vector<double> mean;                 // gaussian
    std::vector<double> weights;              // mixture
    std::vector<std::vector<double>> means;   // mixture, one row per component
    std::vector<double> variances;            // mixture
    std::size_t modes = 8;                    // ring
    double radius = 2.0;                      // ring
    double variance = 1.0;                    // gaussian, ring, point_cloud
    std::string dataset;                      // point_cloud: built-in name, or
    std::string path;                         // point_cloud: absolute CSV path

    bool operator==(const TargetSpec&) const = default;
};

GaussianMixture build_target(const TargetSpec& spec);

struct OracleSpec {
    bool learned = false;
    std::string checkpoint;  // absolute path when learned

    bool operator==(const OracleSpec&) const = default;
};

struct SchemeSpec {
    TLambdaScheme::Kind kind = TLambdaScheme::Kind::Hybrid;
    std::vector<std::size_t> candidates{5, 10, 20, 50, 100, 1000};
    std::optional<TLambdaScheme::WeightRule> rule = TLambdaScheme::WeightRule::LogN;
    std::vector<double> weights;  // used when rule is empty

    bool operator==(const SchemeSpec&) const = default;
};

TLambdaScheme build_scheme(const SchemeSpec& spec, const ScheduleSpec& schedule);

struct SampleCmd {
    TargetSpec target;
    ScheduleSpec schedule = ScheduleSpec::linear(0.1, 20.0, 1.0);
    Method method = Method::PdaHybrid;
    std::size_t steps = 10;
    std::size_t chains = 1000;
    std::optional<double> eps_last;
    bool w2 = true;
    OracleSpec oracle;

    bool operator==(const SampleCmd&) const = default;
};

struct SweepCmd {
    TargetSpec target;
    ScheduleSpec schedule = ScheduleSpec::linear(0.1, 20.0, 1.0);
    std::vector<Method> methods;
    std::vector<std::size_t> steps;
    std::size_t chains = 1000;
    std::optional<double> eps_last;
    bool w2 = true;
    OracleSpec oracle;

    bool operator==(const SweepCmd&) const = default;
};

struct KlSweepCmd {
    TargetSpec target;
    ScheduleSpec schedule = ScheduleSpec::constant(2.0, 5.0);
    std::vector<Method> methods;
    std::vector<std::size_t> steps;
    std::optional<double> eps_last;
    std::size_t floor_factor = 16;

    bool operator==(const KlSweepCmd&) const = default;
};

struct DataSpec {
    enum class Source { Target, Builtin, Csv };
    Source source = Source::Target;
    std::size_t samples = 10000;  // target
    std::uint64_t seed = 0;       // target
    std::string name;             // builtin
    std::string path;             // csv, absolute

    bool operator==(const DataSpec&) const = default;
};

struct ModelSpec {
    std::vector<std::size_t> hidden{128, 128, 128};
    std::size_t t_features = 8;
    std::size_t lambda_features = 8;
    std::uint64_t init_seed = 0;

    bool operator==(const ModelSpec&) const = default;
};

struct TrainPmCmd {
    DataSpec data;
    std::optional<TargetSpec> target;
    ScheduleSpec schedule = ScheduleSpec::linear(0.1, 20.0, 1.0);
    ModelSpec model;
    std::vector<TrainPhase> phases;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    SchemeSpec scheme;
    std::size_t eval_probes = 1000;

    bool operator==(const TrainPmCmd&) const = default;
};

struct SamplingCompare {
    Method method = Method::PdaHybrid;
    std::size_t steps = 10;
    std::size_t chains = 1000;

    bool operator==(const SamplingCompare&) const = default;
};

struct EvalPmCmd {
    std::string checkpoint;  // absolute
    TargetSpec target;
    ScheduleSpec schedule = ScheduleSpec::linear(0.1, 20.0, 1.0);
    SchemeSpec scheme;
    std::size_t probes = 1000;
    std::optional<SamplingCompare> sampling;

    bool operator==(const EvalPmCmd&) const = default;
};

struct CheckTheoryCmd {
    std::vector<std::string> fixtures{"stationary", "shifted", "gmm8"};
    std::size_t probes = 10000;
    std::optional<double> h;

    bool operator==(const CheckTheoryCmd&) const = default;
};

using CommandBody = std::variant<SampleCmd, SweepCmd, KlSweepCmd, TrainPmCmd, EvalPmCmd, CheckTheoryCmd>;

struct RunConfig {
    Command command = Command::Sample;
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    CommandBody body;

    bool operator==(const RunConfig&) const = default;
};

/// Validates `doc` for `command`. Unknown keys, wrong types and out-of-range
/// values throw ConfigError naming the field path (e.g. config.schedule.T).
/// Relative file paths resolve against `base_dir` and must exist.
RunConfig parse_run_config(const nlohmann::json& doc, Command command, const std::filesystem::path& base_dir,
                           std::optional<std::uint64_t> seed_override = std::nullopt);

RunConfig load_run_config(const std::filesystem::path& file, Command command,
                          std::optional<std::uint64_t> seed_override = std::nullopt);

/// Fully explicit form of a config: every default filled in, paths absolute.
/// Parsing the echo yields an equal RunConfig.
Json config_to_json(const RunConfig& cfg);

/// Git blob object id: SHA-1 of "blob <size>\0" followed by the bytes.
std::string git_blob_sha1(std::string_view bytes);

struct Artifact {
    std::string path;  // relative to the output directory
    std::string sha1;
    std::size_t bytes = 0;
};

struct ResultsBundle {
    std::string run_id;
    std::string input_hash;
    Json config;
    std::vector<Artifact> artifacts;  // every emitted file except manifest.json
    bool checks_failed = false;       // check-theory only
};

/// Runs the command and writes its artifacts, config_echo.json and
/// manifest.json into `out_dir` (created if missing).
ResultsBundle run_command(const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Process entry point; returns the exit code (0 ok, 2 config, 3 numeric).
int run_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace proxdm::cli
