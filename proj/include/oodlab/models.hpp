#pragma once

// Model zoo: per-modality extractors, fusion heads, the odd-one-out detector
// and the expert ensemble that it weights.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oodlab/data.hpp"
#include "oodlab/json_util.hpp"
#include "oodlab/tensor.hpp"

namespace oodlab {

/// x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;
};

/// Fully connected stack, rectified-linear between layers, linear output.
class Mlp {
 public:
  Mlp() = default;
  /// widths = {in, hidden..., out}; Kaiming-uniform fan-in weights, zero biases.
  Mlp(std::span<const std::size_t> widths, std::mt19937_64& rng);

  Var forward(Graph& graph, Var x) const;

  bool empty() const noexcept { return layers.empty(); }
  std::size_t in_dim() const;
  std::size_t out_dim() const;
  void set_zero();

  std::vector<Linear> layers;
};

enum class HeadKind { concat, mean, early, gated, lel, robust, oracle };
enum class DetectorMode { unaligned, aligned };

const char* head_kind_name(HeadKind kind) noexcept;
HeadKind parse_head_kind(std::string_view name);
const char* detector_mode_name(DetectorMode mode) noexcept;

struct ArchSpec {
  std::size_t feature_dim = 16;                       // m, shared by every extractor
  std::vector<std::size_t> extractor_hidden = {32, 32};
  std::size_t tail_hidden = 32;                       // classifier tails
  std::size_t expert_hidden = 32;                     // e_1..e_{k+1}
  std::size_t fused_dim = 16;                         // expert output width
  std::size_t detector_hidden = 64;
  std::size_t gate_hidden = 0;                        // 0: linear gate

  void validate() const;
  bool operator==(const ArchSpec&) const = default;
};

Json to_json(const ArchSpec& arch);
ArchSpec arch_spec_from_json(const Json& j);

enum class ParamGroup { all, extractors, alignment, fusion };

struct MultimodalModel {
  HeadKind head = HeadKind::concat;
  DetectorMode detector_mode = DetectorMode::unaligned;
  int k = 0;
  int classes = 0;
  std::vector<std::size_t> input_dims;
  ArchSpec arch;
  std::uint64_t seed = 0;
  int excluded = -1;  // oracle(-i): the ignored modality

  std::vector<Mlp> extractors;      // g_i; empty entry for the oracle's excluded modality
  Mlp trunk;                        // early fusion network on raw concatenation
  Mlp tail;                         // classifier after fusion
  std::vector<Mlp> unimodal_tails;  // mean fusion heads, or aligned detector inputs
  Mlp gate;                         // gated fusion
  std::vector<Mlp> experts;         // k + 1 fusion operations
  Mlp detector;                     // odd-one-out network

  /// Diagnostic: replace the detector output with a one-hot at this arm.
  std::optional<int> forced_arm;

  bool has_features() const noexcept { return head != HeadKind::early; }
  std::string name() const;
};

MultimodalModel make_model(HeadKind head, const TaskSpec& task, const ArchSpec& arch,
                           std::uint64_t seed, int excluded = -1,
                           DetectorMode mode = DetectorMode::unaligned);

/// Visits every parameter with a stable dotted name.
void for_each_parameter(MultimodalModel& model,
                        const std::function<void(const std::string&, Tensor&, ParamGroup)>& fn);
void for_each_parameter(const MultimodalModel& model,
                        const std::function<void(const std::string&, const Tensor&, ParamGroup)>& fn);
std::vector<Tensor*> parameters(MultimodalModel& model, ParamGroup group);
std::size_t parameter_count(const MultimodalModel& model, ParamGroup group);

/// z_i = g_i(x_i). The oracle's excluded modality yields a zero feature block.
std::vector<Var> extract(const MultimodalModel& model, Graph& graph, std::span<const Var> inputs);
std::vector<Tensor> extract_values(const MultimodalModel& model, const Batch& batch);

Var fuse_concat(Graph& graph, const Mlp& tail, std::span<const Var> features);
Var fuse_mean(Graph& graph, std::span<const Var> logits);
Var fuse_early(Graph& graph, const Mlp& trunk, const Mlp& tail, std::span<const Var> inputs);
Var fuse_gated(Graph& graph, const Mlp& gate, const Mlp& tail, std::span<const Var> features);

/// Logits over the k + 1 arms; arm i < k flags modality i, arm k means all clean.
Var odd_one_out_logits(const MultimodalModel& model, Graph& graph, std::span<const Var> features);
/// Softmax of odd_one_out_logits (or the forced one-hot in diagnostic mode).
Var odd_one_out(const MultimodalModel& model, Graph& graph, std::span<const Var> features);

/// e_i(z) for i = 0..k; e_i sees every feature block except z_i, e_k sees all.
std::vector<Var> expert_outputs(const MultimodalModel& model, Graph& graph,
                                std::span<const Var> features);
/// sum_i weights[:, i] * experts[i]. Throws ContractError when a weight row is
/// not on the simplex within 1e-6.
Var robust_fuse(Graph& graph, std::span<const Var> experts, Var weights);

struct HeadOutput {
  Var logits;
  std::optional<Var> detector_logits;
};

/// Fusion head applied to already-extracted features (not valid for early fusion).
HeadOutput head_forward(const MultimodalModel& model, Graph& graph, std::span<const Var> features);

Var predict(const MultimodalModel& model, Graph& graph, std::span<const Var> inputs);
/// Value-only convenience.
Tensor predict(const MultimodalModel& model, const Batch& batch);

struct UnimodalModel {
  int modality = 0;
  int classes = 0;
  Mlp extractor;
  Mlp tail;
};

/// Copies the extractor of `source` for `modality` and attaches a fresh tail.
UnimodalModel make_unimodal(const MultimodalModel& source, int modality, std::uint64_t seed);
Var predict(const UnimodalModel& model, Graph& graph, Var input);
Tensor predict(const UnimodalModel& model, const Tensor& input);
std::vector<Tensor*> tail_parameters(UnimodalModel& model);

void save_model(const MultimodalModel& model, const std::filesystem::path& path);
std::vector<char> encode_model(const MultimodalModel& model);
MultimodalModel load_model(const std::filesystem::path& path);
MultimodalModel decode_model(std::vector<char> bytes);

/// "OOLUNIM1" file: modality and class count, then both layer stacks.
std::vector<char> encode_unimodal(const UnimodalModel& model);
UnimodalModel decode_unimodal(std::vector<char> bytes);
void save_unimodal(const UnimodalModel& model, const std::filesystem::path& path);
UnimodalModel load_unimodal(const std::filesystem::path& path);

bool parameters_equal(const MultimodalModel& a, const MultimodalModel& b, ParamGroup group);

}  // namespace oodlab
