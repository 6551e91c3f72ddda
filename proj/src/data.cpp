#include "oodlab/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"

namespace oodlab {

namespace {

constexpr std::string_view kDataMagic = "OOLDATA1";
constexpr double kLatentNoiseStd = 0.5;  // N(0, 0.25 I)

std::mt19937_64 make_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    stream};
  return std::mt19937_64(seq);
}

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

void TaskSpec::validate() const {
  if (k < 2) throw ValidationError("task: k must be at least 2");
  if (classes < 2) throw ValidationError("task: classes must be at least 2");
  if (!(rho >= 0.0 && rho <= 1.0)) throw ValidationError("task: rho must lie in [0, 1]");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) {
    throw ValidationError("task: noise_sigma must be finite and non-negative");
  }
  if (latent_dim < 1 || private_dim < 1) throw ValidationError("task: latent dims must be >= 1");
  if (input_dims.size() != static_cast<std::size_t>(k)) {
    throw ValidationError("task: input_dims has " + std::to_string(input_dims.size()) +
                          " entries for k = " + std::to_string(k));
  }
  for (auto d : input_dims) {
    if (d < 1) throw ValidationError("task: input dims must be >= 1");
  }
  if (n_train < 1 || n_test < 1) throw ValidationError("task: sample counts must be >= 1");
}

Json to_json(const TaskSpec& spec) {
  return Json{{"k", spec.k},
              {"classes", spec.classes},
              {"latent_dim", spec.latent_dim},
              {"private_dim", spec.private_dim},
              {"input_dims", spec.input_dims},
              {"rho", spec.rho},
              {"noise_sigma", spec.noise_sigma},
              {"n_train", spec.n_train},
              {"n_test", spec.n_test},
              {"seed", spec.seed}};
}

TaskSpec task_spec_from_json(const Json& j) {
  constexpr std::string_view where = "task";
  reject_unknown_keys(j,
                      {"k", "classes", "latent_dim", "private_dim", "input_dims", "rho",
                       "noise_sigma", "n_train", "n_test", "seed"},
                      where);
  TaskSpec s;
  s.k = json_get(j, "k", s.k, where);
  s.classes = json_get(j, "classes", s.classes, where);
  s.latent_dim = json_get(j, "latent_dim", s.latent_dim, where);
  s.private_dim = json_get(j, "private_dim", s.private_dim, where);
  if (j.contains("input_dims")) {
    s.input_dims = json_get(j, "input_dims", s.input_dims, where);
  } else if (s.k != static_cast<int>(s.input_dims.size())) {
    s.input_dims.assign(static_cast<std::size_t>(std::max(s.k, 0)), s.input_dims.front());
  }
  s.rho = json_get(j, "rho", s.rho, where);
  s.noise_sigma = json_get(j, "noise_sigma", s.noise_sigma, where);
  s.n_train = json_get(j, "n_train", s.n_train, where);
  s.n_test = json_get(j, "n_test", s.n_test, where);
  s.seed = json_get(j, "seed", s.seed, where);
  s.validate();
  return s;
}

const char* split_name(Split s) noexcept { return s == Split::train ? "train" : "test"; }

Dataset::Dataset(TaskSpec spec, Split split, std::vector<Tensor> modalities,
                 std::vector<int> labels)
    : spec_(std::move(spec)),
      split_(split),
      modalities_(std::move(modalities)),
      labels_(std::move(labels)) {
  if (modalities_.size() != static_cast<std::size_t>(spec_.k)) {
    throw ValidationError("dataset: " + std::to_string(modalities_.size()) +
                          " modality blocks for k = " + std::to_string(spec_.k));
  }
  for (std::size_t i = 0; i < modalities_.size(); ++i) {
    const Tensor& m = modalities_[i];
    if (m.rank() != 2 || m.rows() != labels_.size() || m.cols() != spec_.input_dims[i]) {
      throw ValidationError("dataset: modality " + std::to_string(i) + " has shape " +
                            shape_string(m.shape()) + ", expected [" +
                            std::to_string(labels_.size()) + " x " +
                            std::to_string(spec_.input_dims[i]) + "]");
    }
  }
  for (int y : labels_) {
    if (y < 0 || y >= spec_.classes) {
      throw ValidationError("dataset: label " + std::to_string(y) + " out of range");
    }
  }
}

Batch Dataset::sample(std::size_t index) const { return rows(index, index + 1); }

Batch Dataset::batch(std::span<const std::size_t> indices) const {
  Batch b;
  b.inputs.reserve(modalities_.size());
  for (const Tensor& m : modalities_) b.inputs.push_back(m.gather_rows(indices));
  b.labels.reserve(indices.size());
  for (auto i : indices) b.labels.push_back(labels_.at(i));
  return b;
}

Batch Dataset::rows(std::size_t begin, std::size_t end) const {
  Batch b;
  b.inputs.reserve(modalities_.size());
  for (const Tensor& m : modalities_) b.inputs.push_back(m.slice_rows(begin, end));
  b.labels.assign(labels_.begin() + static_cast<std::ptrdiff_t>(begin),
                  labels_.begin() + static_cast<std::ptrdiff_t>(end));
  return b;
}

GenerativeModel make_generative_model(const TaskSpec& spec) {
  spec.validate();
  auto rng = make_rng(spec.seed, 0);
  GenerativeModel g;
  g.spec = spec;
  const auto classes = static_cast<std::size_t>(spec.classes);
  g.shared_means = gaussian({classes, spec.latent_dim}, 1.0, rng);
  const std::size_t joint = spec.latent_dim + spec.private_dim;
  for (int i = 0; i < spec.k; ++i) {
    g.private_means.push_back(gaussian({classes, spec.private_dim}, 1.0, rng));
    g.mixing.push_back(gaussian({spec.input_dims[static_cast<std::size_t>(i)], joint},
                                1.0 / std::sqrt(static_cast<double>(joint)), rng));
  }
  return g;
}

Dataset sample_dataset(const GenerativeModel& model, std::size_t n, Split split,
                       std::mt19937_64& rng) {
  const TaskSpec& spec = model.spec;
  const auto k = static_cast<std::size_t>(spec.k);
  const std::size_t ld = spec.latent_dim, pd = spec.private_dim, joint = ld + pd;

  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(spec.classes));
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<Tensor> mods;
  for (std::size_t i = 0; i < k; ++i) mods.emplace_back(Shape{n, spec.input_dims[i]});

  const double ws = std::sqrt(spec.rho), wp = std::sqrt(1.0 - spec.rho);
  std::normal_distribution<double> latent_noise(0.0, kLatentNoiseStd);
  std::normal_distribution<double> obs_noise(0.0, 1.0);
  std::vector<double> shared(ld), joint_vec(joint);

  for (std::size_t r = 0; r < n; ++r) {
    const auto y = static_cast<std::size_t>(labels[r]);
    for (std::size_t j = 0; j < ld; ++j) {
      shared[j] = model.shared_means.at(y, j) + latent_noise(rng);
    }
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < ld; ++j) joint_vec[j] = ws * shared[j];
      for (std::size_t j = 0; j < pd; ++j) {
        joint_vec[ld + j] = wp * (model.private_means[i].at(y, j) + latent_noise(rng));
      }
      const Tensor& a = model.mixing[i];
      for (std::size_t row = 0; row < a.rows(); ++row) {
        double acc = 0.0;
        for (std::size_t j = 0; j < joint; ++j) acc += a.at(row, j) * joint_vec[j];
        const double eta = obs_noise(rng);
        mods[i].at(r, row) = acc + spec.noise_sigma * eta;
      }
    }
  }
  return Dataset(spec, split, std::move(mods), std::move(labels));
}

DatasetPair generate(const TaskSpec& spec) {
  const GenerativeModel model = make_generative_model(spec);
  auto train_rng = make_rng(spec.seed, 1);
  auto test_rng = make_rng(spec.seed, 2);
  Dataset train = sample_dataset(model, spec.n_train, Split::train, train_rng);
  Dataset test = sample_dataset(model, spec.n_test, Split::test, test_rng);
  return {std::move(train), std::move(test)};
}

std::vector<char> encode_dataset(const Dataset& ds) {
  Json header{{"spec", to_json(ds.spec())},
              {"split", split_name(ds.split())},
              {"count", ds.size()},
              {"modality_dims", ds.spec().input_dims}};
  ByteWriter w;
  w.bytes(kDataMagic);
  w.text(header.dump());
  std::vector<const double*> rows(static_cast<std::size_t>(ds.modalities()));
  for (std::size_t r = 0; r < ds.size(); ++r) {
    for (int i = 0; i < ds.modalities(); ++i) {
      const Tensor& m = ds.modality(i);
      w.f64s(m.values().subspan(r * m.cols(), m.cols()));
    }
    w.i32(ds.labels()[r]);
  }
  return w.buffer();
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  write_file_atomic(path, encode_dataset(ds));
}

Dataset decode_dataset(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kDataMagic);
  const std::size_t header_at = r.offset();
  Json header;
  try {
    header = Json::parse(r.text());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("dataset header is not valid JSON: ") + e.what(), header_at);
  }
  reject_unknown_keys(header, {"spec", "split", "count", "modality_dims"}, "dataset header");
  const TaskSpec spec = task_spec_from_json(json_require<Json>(header, "spec", "dataset header"));
  const auto split_text = json_require<std::string>(header, "split", "dataset header");
  if (split_text != "train" && split_text != "test") {
    throw ValidationError("dataset header: unknown split '" + split_text + "'");
  }
  const Split split = split_text == "train" ? Split::train : Split::test;
  const auto count = json_require<std::size_t>(header, "count", "dataset header");
  const auto dims = json_require<std::vector<std::size_t>>(header, "modality_dims", "dataset header");
  if (dims.size() != static_cast<std::size_t>(spec.k)) {
    throw ValidationError("dataset header: spec declares k = " + std::to_string(spec.k) +
                          " but " + std::to_string(dims.size()) + " modality blocks follow");
  }
  if (dims != spec.input_dims) {
    throw ValidationError("dataset header: modality dims disagree with spec input_dims");
  }
  const std::size_t expected = split == Split::train ? spec.n_train : spec.n_test;
  if (count != expected) {
    throw ValidationError("dataset header: count " + std::to_string(count) +
                          " disagrees with spec sample count " + std::to_string(expected));
  }

  std::vector<Tensor> mods;
  for (auto d : dims) mods.emplace_back(Shape{count, d});
  std::vector<int> labels(count);
  for (std::size_t row = 0; row < count; ++row) {
    for (std::size_t i = 0; i < dims.size(); ++i) {
      for (std::size_t j = 0; j < dims[i]; ++j) mods[i].at(row, j) = r.f64();
    }
    labels[row] = r.i32();
  }
  r.expect_end();
  return Dataset(spec, split, std::move(mods), std::move(labels));
}

Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(read_file_bytes(path)); }

}  // namespace oodlab
