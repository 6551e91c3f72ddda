#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>

#include "oodlab/binary_io.hpp"
#include "oodlab/data.hpp"
#include "oodlab/errors.hpp"
#include "test_support.hpp"

namespace oodlab {
namespace {

// Nearest-class-mean classifier in plain loops: a linear probe that shares no
// code with the library.
double nearest_mean_probe(const Dataset& train, const Dataset& test, int modality) {
  const Tensor& xtr = train.modality(modality);
  const std::size_t d = xtr.cols();
  const int classes = train.spec().classes;
  std::vector<std::vector<double>> mean(classes, std::vector<double>(d, 0.0));
  std::vector<std::size_t> count(classes, 0);
  for (std::size_t r = 0; r < train.size(); ++r) {
    const int y = train.labels()[r];
    ++count[y];
    for (std::size_t j = 0; j < d; ++j) mean[y][j] += xtr.at(r, j);
  }
  for (int c = 0; c < classes; ++c) {
    for (double& v : mean[c]) v /= static_cast<double>(count[c]);
  }
  const Tensor& xte = test.modality(modality);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < test.size(); ++r) {
    int best = 0;
    double best_dist = 1e300;
    for (int c = 0; c < classes; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += (xte.at(r, j) - mean[c][j]) * (xte.at(r, j) - mean[c][j]);
      if (dist < best_dist) {
        best_dist = dist;
        best = c;
      }
    }
    hits += best == test.labels()[r];
  }
  return static_cast<double>(hits) / static_cast<double>(test.size());
}

TEST(SynthData, SameSeedGivesByteIdenticalDatasets) {
  const TaskSpec spec = testing::small_task(4);
  const DatasetPair a = generate(spec), b = generate(spec);
  EXPECT_EQ(encode_dataset(a.train), encode_dataset(b.train));
  EXPECT_EQ(encode_dataset(a.test), encode_dataset(b.test));
}

TEST(SynthData, DifferentSeedsDiffer) {
  EXPECT_NE(encode_dataset(generate(testing::small_task(1)).train),
            encode_dataset(generate(testing::small_task(2)).train));
}

TEST(SynthData, ShapesFollowTheSpec) {
  TaskSpec spec = testing::small_task();
  spec.input_dims = {3, 5, 7};
  const DatasetPair p = generate(spec);
  ASSERT_EQ(p.train.modalities(), 3);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(p.train.modality(i).rows(), spec.n_train);
    EXPECT_EQ(p.train.modality(i).cols(), spec.input_dims[i]);
    EXPECT_EQ(p.test.modality(i).rows(), spec.n_test);
  }
  EXPECT_EQ(p.train.split(), Split::train);
  EXPECT_EQ(p.test.split(), Split::test);
}

TEST(SynthData, LabelsAreStratified) {
  const TaskSpec spec = testing::small_task(0, 243, 120);
  const DatasetPair p = generate(spec);
  std::vector<int> count(spec.classes, 0);
  for (int y : p.train.labels()) ++count[y];
  for (int c : count) {
    EXPECT_GE(c, 60);
    EXPECT_LE(c, 61);
  }
}

TEST(SynthData, FullRedundancyWithSharedMixingGivesIdenticalViews) {
  TaskSpec spec = testing::small_task();
  spec.k = 2;
  spec.input_dims = {6, 6};
  spec.rho = 1.0;
  spec.noise_sigma = 0.0;
  GenerativeModel gm = make_generative_model(spec);
  gm.mixing[1] = gm.mixing[0];
  std::mt19937_64 rng(8);
  const Dataset ds = sample_dataset(gm, 50, Split::train, rng);
  EXPECT_EQ(ds.modality(0), ds.modality(1));
}

TEST(SynthData, NoRedundancyDecouplesViewsEvenWithSharedMixing) {
  TaskSpec spec = testing::small_task();
  spec.k = 2;
  spec.input_dims = {6, 6};
  spec.rho = 0.0;
  spec.noise_sigma = 0.0;
  GenerativeModel gm = make_generative_model(spec);
  gm.mixing[1] = gm.mixing[0];
  std::mt19937_64 rng(8);
  const Dataset ds = sample_dataset(gm, 50, Split::train, rng);
  EXPECT_NE(ds.modality(0), ds.modality(1));
}

TEST(SynthData, LinearProbeOnEachModalityBeatsChance) {
  TaskSpec spec;  // reference defaults
  spec.seed = 0;
  spec.n_train = 1000;
  spec.n_test = 500;
  const DatasetPair p = generate(spec);
  for (int i = 0; i < spec.k; ++i) {
    const double acc = nearest_mean_probe(p.train, p.test, i);
    RecordProperty("probe_accuracy_m" + std::to_string(i + 1), std::to_string(acc));
    EXPECT_GT(acc, 0.25) << "modality " << i;
  }
}

TEST(SynthData, SaveThenLoadIsEqual) {
  testing::TempDir dir("data");
  const DatasetPair p = generate(testing::small_task(3));
  save_dataset(p.test, dir.path() / "test.oold");
  EXPECT_EQ(load_dataset(dir.path() / "test.oold"), p.test);
}

TEST(SynthData, FileStartsWithMagic) {
  const auto bytes = encode_dataset(generate(testing::small_task()).test);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "OOLDATA1");
}

TEST(SynthData, TruncatedFileIsAFormatError) {
  auto bytes = encode_dataset(generate(testing::small_task()).test);
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() / 2, bytes.size() - 1}) {
    std::vector<char> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_dataset(part), FormatError) << "cut at " << cut;
  }
}

TEST(SynthData, TrailingBytesAreAFormatError) {
  auto bytes = encode_dataset(generate(testing::small_task()).test);
  bytes.push_back('x');
  EXPECT_THROW(decode_dataset(bytes), FormatError);
}

TEST(SynthData, HeaderDeclaringMoreModalitiesThanBlocksIsAValidationError) {
  const TaskSpec spec = testing::small_task();
  const DatasetPair p = generate(spec);
  Json header{{"spec", to_json(spec)},
              {"split", "test"},
              {"count", p.test.size()},
              {"modality_dims", std::vector<std::size_t>{8, 8}}};
  ByteWriter w;
  w.bytes("OOLDATA1");
  w.text(header.dump());
  for (std::size_t r = 0; r < p.test.size(); ++r) {
    for (int i = 0; i < 2; ++i) w.f64s(p.test.modality(i).values().subspan(r * 8, 8));
    w.i32(p.test.labels()[r]);
  }
  EXPECT_THROW(decode_dataset(w.buffer()), ValidationError);
}

TEST(SynthData, InvalidSpecsAreRejected) {
  TaskSpec s;
  s.k = 1;
  s.input_dims = {16};
  EXPECT_THROW(s.validate(), ValidationError);
  s = TaskSpec{};
  s.rho = 1.5;
  EXPECT_THROW(generate(s), ValidationError);
  s = TaskSpec{};
  s.noise_sigma = -1.0;
  EXPECT_THROW(s.validate(), ValidationError);
  s = TaskSpec{};
  s.input_dims = {16, 16};
  EXPECT_THROW(s.validate(), ValidationError);
}

TEST(SynthData, SpecJsonRoundTripsAndRejectsUnknownKeys) {
  TaskSpec s = testing::small_task(77);
  s.rho = 0.3;
  EXPECT_EQ(task_spec_from_json(to_json(s)), s);
  Json j = to_json(s);
  j["bogus"] = 1;
  EXPECT_THROW(task_spec_from_json(j), ValidationError);
}

}  // namespace
}  // namespace oodlab
