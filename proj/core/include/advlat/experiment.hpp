#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "advlat/baselines.hpp"
#include "advlat/generator.hpp"

namespace advlat {

/// Invalid or inconsistent experiment configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Source of examples. Exactly one of `synthetic`, `path` or the citation
/// graph pair is set.
struct DataSpec {
  std::string synthetic;  // blobs, rings, images, tokens, sbm-graph
  nlohmann::json params = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::string path;
  std::string content;  // citation graph files
  std::string cites;
  std::uint64_t split_seed = 0;
  SplitReading reading = SplitReading::of_all;
};

struct TargetSetup {
  std::string checkpoint;  // load instead of training when set
  TargetSpec spec;
  TrainConfig train;
  std::string save;  // optional checkpoint output after training
};

struct AttackSpec {
  std::string method = "gen-vae";  // gen-vae, gen-ae, pgd, fgsm
  GeneratorConfig generator;
  PgdConfig pgd;
  GraphAttack graph_mode = GraphAttack::direct;
  std::size_t influencers = 5;
  std::uint64_t mask_seed = 0;
  std::string checkpoint;  // pretrained attacker
  std::string save;

  bool generative() const { return method == "gen-vae" || method == "gen-ae"; }
};

struct EvalSpec {
  std::vector<Split> splits = {Split::train, Split::test};
  std::size_t resample = 0;
  std::vector<std::uint64_t> seeds = {0};
  bool retrain_per_seed = false;  // re-seed attacker training too, not only sampling
  std::size_t workers = 1;
  bool store_tensors = true;  // keep inputs and perturbations in the json records
};

struct OutputSpec {
  std::string json;
  std::string csv;
  std::string markdown;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Domain domain = Domain::vector;
  DataSpec data;
  TargetSetup target;
  AttackSpec attack;
  EvalSpec eval;
  OutputSpec output;
  std::string source_text;  // exact bytes the config was parsed from

  void validate() const;
  nlohmann::json to_json() const;
  /// Relative paths resolve against `base_dir`.
  static ExperimentConfig parse(const std::string& text, const std::string& base_dir = {});
  static ExperimentConfig load(const std::string& path);
};

/// Dataset and trained target an experiment runs against. Heap-held so
/// problems can keep references while the context moves.
struct ExperimentContext {
  std::unique_ptr<AnyDataset> data;
  std::unique_ptr<TargetModel> target;
  std::unique_ptr<AttackProblem> problem;
};

AnyDataset prepare_data(const DataSpec& spec);
TargetModel prepare_target(const TargetSetup& setup, const AnyDataset& data);
/// Builds the domain adapter and problem for `config`, checking domain agreement.
std::unique_ptr<AttackProblem> make_problem(const ExperimentConfig& config, const AnyDataset& data, const TargetModel& target);
ExperimentContext prepare_context(const ExperimentConfig& config);

struct Stat {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation; 0 for a single value
  bool operator==(const Stat&) const = default;
};
Stat mean_std(const std::vector<double>& values);

struct SplitSummary {
  Split split = Split::test;
  std::size_t examples = 0;
  double success_rate = 0.0;
  double mean_distance = 0.0;
  double median_distance = 0.0;
  double mean_samples = 0.0;
  double token_change_rate = 0.0;
  bool operator==(const SplitSummary&) const = default;
};
/// Aggregates over the records of one split.
SplitSummary summarize(const std::vector<AdversarialRecord>& records, Split split);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<AdversarialRecord> records;
  std::vector<SplitSummary> summaries;
  bool operator==(const SeedRun&) const = default;
};

struct AggregateSummary {
  Split split = Split::test;
  Stat success_rate, mean_distance, median_distance, mean_samples, token_change_rate;
  bool operator==(const AggregateSummary&) const = default;
};

struct AttackReport {
  std::string name;
  std::string method;
  Domain domain = Domain::vector;
  std::size_t resample = 0;
  std::string config_echo;
  nlohmann::json target_accuracy = nlohmann::json::object();
  nlohmann::json attacker = nlohmann::json::object();  // training summary
  std::vector<SeedRun> runs;
  std::vector<AggregateSummary> aggregates;
  double wall_time_seconds = 0.0;  // excluded from determinism comparisons

  nlohmann::json to_json() const;
  static AttackReport from_json(const nlohmann::json& j);
  bool operator==(const AttackReport&) const = default;
};

/// Fills per-seed summaries and cross-seed aggregates from the records.
void summarize_report(AttackReport& report, const std::vector<Split>& splits);
/// Throws std::logic_error when stored aggregates differ from the records.
void check_aggregates(const AttackReport& report);

AttackReport run_experiment(const ExperimentConfig& config);

struct ResampleSeries {
  Split split = Split::test;
  std::vector<std::size_t> budgets;
  std::vector<std::vector<double>> per_seed;  // [seed][budget] success rate
  std::vector<Stat> success_rate;             // per budget
  std::vector<Stat> mean_samples;
};
struct ResampleSweep {
  std::vector<std::uint64_t> seeds;
  std::vector<ResampleSeries> series;
  nlohmann::json to_json() const;
};
/// One evaluation at the largest budget per seed; smaller budgets reuse the
/// cached first successes, so each series is non-decreasing.
ResampleSweep resample_sweep(const ExperimentConfig& config, const std::vector<std::size_t>& budgets);

struct LambdaPoint {
  double lambda = 0.0;
  Split split = Split::test;
  Stat success_rate, mean_distance, token_change_rate;
  std::vector<double> per_seed_success;
  std::vector<double> per_seed_distance;
};
struct LambdaSweep {
  std::vector<LambdaPoint> points;  // lambda-major, then split
  nlohmann::json to_json() const;
};
/// Trains one attacker per lambda with the configured generator seed, or one
/// per lambda and seed when eval.retrain_per_seed is set.
LambdaSweep lambda_sweep(const ExperimentConfig& config, const std::vector<double>& lambdas);

enum class ReportFormat { json, csv, markdown };
ReportFormat report_format_from_string(const std::string& s);
std::string render_report(const AttackReport& report, ReportFormat format);
/// Checks aggregates, then writes the rendered report.
void emit_report(const AttackReport& report, ReportFormat format, const std::string& path);
std::string render_sweep_csv(const ResampleSweep& sweep);
std::string render_sweep_csv(const LambdaSweep& sweep);

/// Reads a whole file; throws IoError.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace advlat
