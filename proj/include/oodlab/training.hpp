#pragma once

#include <cstdint>
#include <vector>

#include "oodlab/attacks.hpp"
#include "oodlab/data.hpp"
#include "oodlab/json_util.hpp"
#include "oodlab/models.hpp"
#include "oodlab/optim.hpp"

namespace oodlab {

enum class TrainScope { all, fusion_only };
/// alternating: one condition per batch, clean then each modality in turn.
/// joint: clean plus every single-source view in each batch.
/// adversarial: every single-source view, no clean term.
enum class Schedule { alternating, joint, adversarial };

const char* schedule_name(Schedule schedule) noexcept;

struct TrainSpec {
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  int epochs = 20;
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  AttackSpec attack;  // inner attack for robust variants; modality is overridden per term
  TrainScope scope = TrainScope::all;
  Schedule schedule = Schedule::alternating;

  void validate() const;
  SgdOptions sgd() const { return {lr, momentum, weight_decay}; }
};

Json to_json(const TrainSpec& spec);
TrainSpec train_spec_from_json(const Json& j);

struct TrainCurves {
  std::vector<double> loss;               // mean total loss per epoch
  std::vector<double> l_odd;              // robust training only
  std::vector<double> l_task;             // robust training only
  std::vector<double> detector_accuracy;  // robust training: arm accuracy on the epoch's quadruples
};

struct LossBreakdown {
  double l_odd = 0.0;
  double l_task = 0.0;
  double total = 0.0;
  int odd_terms = 0;
  int task_terms = 0;
  /// Detector arm hits / trials over the batch's 1 + k conditions.
  std::size_t detector_hits = 0;
  std::size_t detector_trials = 0;
};

/// Extractor parameters copied from `source` into a fresh head of `kind`.
MultimodalModel derive_model(HeadKind kind, const MultimodalModel& source, const TaskSpec& task,
                             std::uint64_t seed, DetectorMode mode = DetectorMode::unaligned);

/// Flags requires_grad on the parameters the scope may update, clears it
/// elsewhere, and returns the trainable list.
std::vector<Tensor*> select_trainable(MultimodalModel& model, TrainScope scope);

/// Mini-batch SGD on clean cross-entropy. Mean fusion trains each unimodal
/// branch on its own loss. Throws NumericError naming the epoch on divergence.
TrainCurves train_clean(MultimodalModel& model, const Dataset& train, const TrainSpec& spec);

/// Clean training of a unimodal model; scope fusion_only trains its tail only.
TrainCurves train_unimodal(UnimodalModel& model, const Dataset& train, const TrainSpec& spec);

/// Clean training of the aligned detector's unimodal tails on frozen features.
void train_alignment_tails(MultimodalModel& model, const Dataset& train, const TrainSpec& spec);

/// Per-modality perturbed features z_i* = g_i(x_i + delta_i), one per modality.
struct RobustTerms {
  std::vector<Tensor> clean_features;
  std::vector<Tensor> perturbed_features;  // entry i replaces block i
  std::vector<int> labels;
};

/// Generates the k adaptive perturbations of one robust-training step.
RobustTerms make_robust_terms(const MultimodalModel& model, const Batch& batch,
                              const AttackSpec& attack, std::uint64_t step_seed);

struct RobustLoss {
  Var l_odd;
  Var l_task;
  Var total;
  int odd_terms = 0;
  int task_terms = 0;
  std::vector<Var> detector_logits;  // condition order: clean, perturbed-0..k-1
};

/// Builds the odd-one-out + task loss on `graph` from fixed (replayed) terms.
RobustLoss build_robust_loss(const MultimodalModel& model, Graph& graph, const RobustTerms& terms);

/// One step of the robust training procedure on a batch: regenerates the k
/// adaptive perturbations against the current model, then a single SGD step
/// on detector, experts and tail. Throws InvariantError if any extractor
/// parameter changed.
LossBreakdown robust_gradient_update(MultimodalModel& model, const Batch& batch, const TrainSpec& spec,
                                     Sgd& optimizer, std::uint64_t step_index);

/// Epochs of robust_gradient_update over shuffled batches.
TrainCurves train_robust(MultimodalModel& model, const Dataset& train, const TrainSpec& spec);

/// Condition of batch `index` under the alternating schedule: -1 for clean,
/// otherwise the perturbed modality (round-robin).
int alternating_condition(std::size_t index, int k);

TrainCurves train_baseline_robust(MultimodalModel& model, const Dataset& train, const TrainSpec& spec);

/// Every parameter trainable; the schedule comes from `spec`.
TrainCurves train_end_to_end_adversarial(MultimodalModel& model, const Dataset& train,
                                         const TrainSpec& spec);

}  // namespace oodlab
