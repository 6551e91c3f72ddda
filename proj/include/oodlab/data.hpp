#pragma once

// Synthetic k-modality classification tasks.
//
// Each class y owns a shared latent mean mu_y and per-modality private means
// nu_{y,i}. A sample draws s = mu_y + N(0, 0.25 I) and u_i = nu_{y,i} + N(0, 0.25 I)
// and observes x_i = A_i (sqrt(rho) s ++ sqrt(1 - rho) u_i) + N(0, sigma^2 I).
// rho is the redundancy knob: at rho = 1 every modality is a noisy view of
// the same latent, at rho = 0 modalities only carry private class evidence.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "oodlab/json_util.hpp"
#include "oodlab/tensor.hpp"

namespace oodlab {

struct TaskSpec {
  int k = 3;
  int classes = 4;
  std::size_t latent_dim = 4;
  std::size_t private_dim = 4;
  std::vector<std::size_t> input_dims = {16, 16, 16};
  double rho = 0.9;
  double noise_sigma = 0.5;
  std::size_t n_train = 4000;
  std::size_t n_test = 1000;
  std::uint64_t seed = 0;

  /// Throws ValidationError on any out-of-range field.
  void validate() const;
  bool operator==(const TaskSpec&) const = default;
};

Json to_json(const TaskSpec& spec);
/// Strict: unknown keys are rejected, absent keys keep their defaults.
TaskSpec task_spec_from_json(const Json& j);

enum class Split { train, test };
const char* split_name(Split s) noexcept;

/// A mini-batch (or whole split) in column layout: one [n x d_i] tensor per modality.
struct Batch {
  std::vector<Tensor> inputs;
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  int modalities() const noexcept { return static_cast<int>(inputs.size()); }
};

class Dataset {
 public:
  Dataset(TaskSpec spec, Split split, std::vector<Tensor> modalities, std::vector<int> labels);

  const TaskSpec& spec() const noexcept { return spec_; }
  Split split() const noexcept { return split_; }
  std::size_t size() const noexcept { return labels_.size(); }
  int modalities() const noexcept { return static_cast<int>(modalities_.size()); }

  const Tensor& modality(int i) const { return modalities_.at(static_cast<std::size_t>(i)); }
  std::span<const int> labels() const noexcept { return labels_; }

  /// Sample `index` as a batch of one.
  Batch sample(std::size_t index) const;
  Batch batch(std::span<const std::size_t> indices) const;
  Batch rows(std::size_t begin, std::size_t end) const;
  Batch all() const { return rows(0, size()); }

  bool operator==(const Dataset& other) const noexcept {
    return spec_ == other.spec_ && split_ == other.split_ && modalities_ == other.modalities_ &&
           labels_ == other.labels_;
  }

 private:
  TaskSpec spec_;
  Split split_;
  std::vector<Tensor> modalities_;
  std::vector<int> labels_;
};

/// The fixed random parameters behind a task: class means and mixing matrices.
struct GenerativeModel {
  TaskSpec spec;
  Tensor shared_means;                // [C x latent_dim]
  std::vector<Tensor> private_means;  // k x [C x private_dim]
  std::vector<Tensor> mixing;         // k x [d_i x (latent_dim + private_dim)]
};

GenerativeModel make_generative_model(const TaskSpec& spec);

/// Draws n stratified samples from `model` using `rng`.
Dataset sample_dataset(const GenerativeModel& model, std::size_t n, Split split,
                       std::mt19937_64& rng);

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Deterministic in spec (including seed).
DatasetPair generate(const TaskSpec& spec);

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
std::vector<char> encode_dataset(const Dataset& ds);
/// Throws FormatError on malformed bytes, ValidationError on header/shape inconsistency.
Dataset load_dataset(const std::filesystem::path& path);
Dataset decode_dataset(std::vector<char> bytes);

}  // namespace oodlab
