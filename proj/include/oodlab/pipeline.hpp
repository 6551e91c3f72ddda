#pragma once

// Experiment orchestration: run configuration, the run directory with its
// stage markers, and the generate -> train -> attack -> evaluate -> report
// stages behind the command-line tool.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "oodlab/attacks.hpp"
#include "oodlab/data.hpp"
#include "oodlab/eval.hpp"
#include "oodlab/json_util.hpp"
#include "oodlab/models.hpp"
#include "oodlab/training.hpp"

namespace oodlab {

/// Model zoo entries accepted in RunConfig::models.
const std::vector<std::string>& known_models();

struct RunConfig {
  TaskSpec task;
  ArchSpec arch;
  TrainSpec clean_train;        // standard models, oracles, surrogate and alignment tails
  TrainSpec robust_train;       // odd-one-out fusion (fusion_only)
  TrainSpec baseline_train;     // gated / lel robust baselines
  TrainSpec adversarial_train;  // end-to-end adversarial training
  AttackSpec attack;            // evaluation attack; modality is ignored
  std::vector<std::string> attack_kinds = {"adaptive", "transfer"};
  std::vector<std::string> models = known_models();
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::string output_dir = "runs/reference";
  int jobs = 1;
  std::size_t eval_batch = 250;

  void validate() const;
};

/// The reference task and schedules used by `reproduce` when no config is given.
RunConfig reference_config();

Json to_json(const RunConfig& config);
/// Strict: unknown keys rejected at every level; absent keys take reference defaults.
RunConfig run_config_from_json(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

bool operator==(const RunConfig& a, const RunConfig& b);

/// SHA-256 of the canonical config JSON without output_dir and jobs (neither
/// affects results).
std::string config_hash(const RunConfig& config);

/// Runs inside one output directory. Stages skip work whose done-marker
/// verifies, and throw StageError naming the stage if a marker or any file
/// it covers is corrupt.
class Pipeline {
 public:
  explicit Pipeline(RunConfig config);

  const RunConfig& config() const noexcept { return config_; }
  const std::filesystem::path& root() const noexcept { return root_; }

  void generate_data();
  void train();
  void attack();
  void evaluate();
  ReportFiles report();
  /// All stages in order; returns the report files.
  ReportFiles reproduce();

  std::filesystem::path seed_dir(std::uint64_t seed) const;

 private:
  using Outputs = std::vector<std::filesystem::path>;

  void write_snapshot();
  /// True if the stage's marker verifies, false if absent; StageError if corrupt.
  bool stage_done(const std::string& name) const;
  /// StageError unless the stage has completed.
  void require(const std::string& name) const;
  /// Runs `body` unless the marker verifies. The body returns the files it produced.
  void stage(const std::string& name, const std::function<Outputs()>& body);
  DatasetPair load_data(std::uint64_t seed) const;
  std::vector<std::string> training_order() const;
  Outputs train_model(const std::string& name, std::uint64_t seed, const DatasetPair& data);
  SeedResult evaluate_seed(std::uint64_t seed);
  void record_time(const std::string& stage, double seconds);

  RunConfig config_;
  std::filesystem::path root_;
  std::string hash_;
};

}  // namespace oodlab
