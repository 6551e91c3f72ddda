#pragma once

// Single-source perturbations: l-infinity PGD on one modality while the
// other k - 1 stay clean.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodlab/data.hpp"
#include "oodlab/json_util.hpp"
#include "oodlab/models.hpp"
#include "oodlab/tensor.hpp"

namespace oodlab {

enum class Objective { untargeted, targeted };
enum class AttackLevel { input, feature };

struct AttackSpec {
  int modality = 0;  // 0-based
  double epsilon = 1.0;
  int steps = 10;
  /// Defaults to 2.5 * epsilon / steps when unset.
  std::optional<double> step_size;
  bool random_start = true;
  Objective objective = Objective::untargeted;
  AttackLevel level = AttackLevel::input;
  bool keep_best = true;
  /// Optional box constraint on the perturbed payload (image-like data). Off by default.
  std::optional<std::pair<double, double>> clip;
  std::uint64_t seed = 0;

  double effective_step_size() const;
  void validate() const;
};

Json to_json(const AttackSpec& spec);
AttackSpec attack_spec_from_json(const Json& j);

struct AttackResult {
  int modality = 0;
  AttackLevel level = AttackLevel::input;
  Tensor origin;                 // clean payload [B x d]
  Tensor payload;                // perturbed payload, same shape
  std::vector<double> initial_loss;   // objective loss at the clean payload, per row
  std::vector<double> achieved_loss;  // objective loss at the returned payload, per row
  std::vector<int> targets;      // targeted attacks only
  int iterations = 0;
  std::vector<int> detector_verdict;  // filled by evaluation

  /// Largest |payload - origin| entry.
  double linf_distance() const;
};

/// Called with the starting delta (step 0) and after each projected step.
using PgdObserver = std::function<void(int step, const Tensor& delta)>;

struct PgdHooks {
  PgdObserver observer;
  /// Payload to start from instead of the clean point or a random start (it
  /// is projected into the ball and counted as an evaluated iterate).
  std::optional<Tensor> warm_start;
};

/// Logits of the attacked model as a function of the perturbed payload.
using LogitsFn = std::function<Var(Graph&, Var payload)>;

/// Core projected sign-gradient loop. For untargeted objectives it ascends
/// CE(labels); for targeted ones it descends CE(labels) where labels are the
/// targets. With keep_best the returned iterate is the best evaluated one per
/// row, the clean payload included.
AttackResult run_pgd(const Tensor& origin, const LogitsFn& logits, std::span<const int> labels,
                     const AttackSpec& spec, const PgdHooks& hooks = {});

/// White-box attack on raw input x_i of `model` (adaptive: gradients flow
/// through every part of the model, detector included).
AttackResult pgd_single_source(const MultimodalModel& model, const Batch& batch,
                               const AttackSpec& spec, const PgdHooks& hooks = {});

/// Perturbation computed on `surrogate` alone, then scored on `target`.
AttackResult transfer_attack(const UnimodalModel& surrogate, const MultimodalModel& target,
                             const Batch& batch, const AttackSpec& spec);

/// Perturbs z_i after extraction, before fusion.
AttackResult feature_attack(const MultimodalModel& model, const Batch& batch, const AttackSpec& spec);

/// Minimizes -log P(target) with the same projection. `targets` pairs with batch rows.
AttackResult targeted_attack(const MultimodalModel& model, const Batch& batch,
                             std::span<const int> targets, const AttackSpec& spec);

/// Uniform target classes, never equal to the true label.
std::vector<int> sample_targets(std::span<const int> labels, int classes, std::uint64_t seed);

/// Copy of `batch` with modality i replaced by the attack payload.
Batch apply_attack(const Batch& batch, const AttackResult& result);

/// Logits of `model` on a batch whose feature block i is replaced by the payload.
Tensor predict_with_features(const MultimodalModel& model, const Batch& batch,
                             const AttackResult& feature_result);

/// "OOLATK01" file: JSON header (modality, level, shape, iterations), then
/// origin, payload, losses, targets and detector verdicts.
std::vector<char> encode_attack_result(const AttackResult& result);
AttackResult decode_attack_result(std::vector<char> bytes);
void save_attack_result(const AttackResult& result, const std::filesystem::path& path);
AttackResult load_attack_result(const std::filesystem::path& path);

}  // namespace oodlab
