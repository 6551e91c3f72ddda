#pragma once

// Report quantities: clean and single-source robust accuracy, detection
// confusion, oracle bounds and the derived delta rows.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "oodlab/attacks.hpp"
#include "oodlab/data.hpp"
#include "oodlab/json_util.hpp"
#include "oodlab/models.hpp"

namespace oodlab {

enum class AttackKind { adaptive, transfer, feature, targeted };

const char* attack_kind_name(AttackKind kind) noexcept;
AttackKind parse_attack_kind(std::string_view name);

struct EvalOptions {
  std::size_t batch_size = 250;
  /// Worker threads over batches; results are reduced in batch order.
  int jobs = 1;
};

/// Fraction of rows whose argmax equals the label.
double accuracy(const Tensor& logits, std::span<const int> labels);

double evaluate_clean(const MultimodalModel& model, const Dataset& test, const EvalOptions& options = {});

/// Adaptive attack on `modality` of every test sample; batch results are
/// concatenated in row order. Robust models also get detector verdicts.
AttackResult attack_test_set(const MultimodalModel& model, const Dataset& test, const AttackSpec& attack,
                             int modality, const EvalOptions& options = {});

/// Accuracy of `model` on `test` with the attacked modality replaced by the payload.
double attacked_accuracy(const MultimodalModel& model, const Dataset& test, const AttackResult& result,
                         const EvalOptions& options = {});

/// Accuracy after attacking modality i on every test sample, for each i.
/// `attack.modality` is ignored; batch b uses seed mix_seed(attack.seed, b).
std::vector<double> evaluate_robust(const MultimodalModel& model, const Dataset& test,
                                    const AttackSpec& attack, const EvalOptions& options = {});

/// Perturbations crafted on surrogates[i] (trained on modality i) and scored on `target`.
std::vector<double> evaluate_transfer(const std::vector<UnimodalModel>& surrogates,
                                      const MultimodalModel& target, const Dataset& test,
                                      const AttackSpec& attack, const EvalOptions& options = {});

std::vector<double> evaluate_feature(const MultimodalModel& model, const Dataset& test,
                                     const AttackSpec& attack, const EvalOptions& options = {});

struct TargetedEval {
  std::vector<double> accuracy;      // per attacked modality
  std::vector<double> success_rate;  // prediction equals the sampled target
};

TargetedEval evaluate_targeted(const MultimodalModel& model, const Dataset& test,
                               const AttackSpec& attack, const EvalOptions& options = {});

/// Conditions 0..k-1 are perturbed-i, condition k is clean; arms follow the
/// same numbering.
struct DetectionResult {
  int k = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [condition][arm]
  std::vector<double> rates;                        // diagonal / row sum
  double pooled = 0.0;                              // mean of rates

  static DetectionResult from_confusion(std::vector<std::vector<std::size_t>> confusion);
};

/// Arm predictions of the robust model's detector on clean and adaptively
/// perturbed test data.
DetectionResult detection_rate(const MultimodalModel& robust, const Dataset& test,
                               const AttackSpec& attack, const EvalOptions& options = {});

/// Same confusion from stored attack results (one per modality, with verdicts).
DetectionResult detection_from_results(const MultimodalModel& robust, const Dataset& test,
                                       const std::vector<AttackResult>& results,
                                       const EvalOptions& options = {});

/// Entry i: accuracy of oracles[i] (which ignores modality i) under attack on i.
std::vector<double> oracle_bound(const std::vector<MultimodalModel>& oracles, const Dataset& test,
                                 const AttackSpec& attack, const EvalOptions& options = {});

// ---------------------------------------------------------------------------
// Report assembly

enum class ModelRole { standard, robust_baseline, robust, reference };

const char* model_role_name(ModelRole role) noexcept;

/// Everything measured for one model under one seed.
struct ModelResult {
  std::string name;
  ModelRole role = ModelRole::reference;
  double clean = 0.0;
  /// attack kind -> per-modality accuracy
  std::map<AttackKind, std::vector<double>> robust;
  std::optional<DetectionResult> detection;
};

struct SeedResult {
  std::uint64_t seed = 0;
  std::vector<ModelResult> models;
};

Json to_json(const SeedResult& result);
SeedResult seed_result_from_json(const Json& j);

struct SummaryStat {
  double mean = 0.0;
  double std = 0.0;  // population std over seeds
  std::size_t n = 0;
};

struct EvalReport {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
  std::vector<SeedResult> runs;
  /// cell -> stat, per model name. Cells: "clean", "<kind>/<modality>" (1-based),
  /// "detection/<condition>", "detection/pooled".
  std::map<std::string, std::map<std::string, SummaryStat>> summary;
  /// Same cell keys; nullopt when the robust model or competitors are missing.
  std::map<std::string, std::optional<double>> delta_clean;
  std::map<std::string, std::optional<double>> delta_robust;
};

/// Aggregates per-seed results. Throws ValidationError on an empty model set
/// or inconsistent model lists across seeds.
EvalReport build_report(std::vector<SeedResult> runs, const std::string& config_hash);

/// Canonical key-sorted JSON text.
std::string report_json_text(const EvalReport& report);
/// One row per model x modality x attack kind x metric.
std::string report_csv_text(const EvalReport& report);

EvalReport report_from_json(const Json& j);

struct ReportFiles {
  std::filesystem::path json;
  std::filesystem::path csv;
  std::string json_sha256;
};

ReportFiles write_report(const EvalReport& report, const std::filesystem::path& dir);

}  // namespace oodlab
