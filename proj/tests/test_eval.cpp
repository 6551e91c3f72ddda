#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"
#include "oodlab/eval.hpp"
#include "oodlab/training.hpp"
#include "test_support.hpp"

namespace oodlab {
namespace {

ArchSpec small_arch() {
  ArchSpec a;
  a.feature_dim = 6;
  a.extractor_hidden = {12, 12};
  a.tail_hidden = 12;
  a.expert_hidden = 12;
  a.fused_dim = 6;
  a.detector_hidden = 16;
  return a;
}

AttackSpec attack(double eps, int steps = 5) {
  AttackSpec s;
  s.epsilon = eps;
  s.steps = steps;
  s.seed = 3;
  return s;
}

struct Trained {
  TaskSpec task = testing::small_task(2, 320, 200);
  DatasetPair data = generate(task);
  MultimodalModel concat = [this] {
    MultimodalModel m = make_model(HeadKind::concat, task, small_arch(), 4);
    TrainSpec s;
    s.epochs = 8;
    s.seed = 5;
    train_clean(m, data.train, s);
    return m;
  }();
};

const Trained& trained() {
  static const Trained t;
  return t;
}

TEST(Eval, AccuracyScoresArgmaxAgainstLabels) {
  const Tensor logits({4, 3}, {5, 1, 0, 0, 2, 1, 1, 1, 1, 0, 0, 3});
  const int labels[] = {0, 1, 0, 1};  // row 2 ties, lowest index wins
  EXPECT_DOUBLE_EQ(accuracy(logits, labels), 0.75);
}

TEST(Eval, MemorizedTrainingSetScoresOne) {
  // A model whose tail reads the label straight off a one-hot feature block.
  const Trained& t = trained();
  std::vector<int> labels(t.data.test.labels().begin(), t.data.test.labels().end());
  TaskSpec spec = t.task;
  spec.input_dims = {4, 4, 4};
  std::vector<Tensor> mods;
  for (int i = 0; i < 3; ++i) {
    Tensor x({labels.size(), 4});
    for (std::size_t r = 0; r < labels.size(); ++r) x.at(r, static_cast<std::size_t>(labels[r])) = 1.0;
    mods.push_back(x);
  }
  const Dataset ds(spec, Split::test, mods, labels);
  MultimodalModel m = make_model(HeadKind::early, spec, small_arch(), 6);
  m.trunk.set_zero();
  m.tail.set_zero();
  Tensor& w0 = m.trunk.layers[0].weight;
  for (std::size_t c = 0; c < 4; ++c) w0.at(c, c) = 1.0;
  for (std::size_t l = 1; l < m.trunk.layers.size(); ++l) {
    for (std::size_t c = 0; c < 4; ++c) m.trunk.layers[l].weight.at(c, c) = 1.0;
  }
  for (std::size_t l = 0; l < m.tail.layers.size(); ++l) {
    for (std::size_t c = 0; c < 4; ++c) m.tail.layers[l].weight.at(c, c) = 1.0;
  }
  EXPECT_DOUBLE_EQ(evaluate_clean(m, ds), 1.0);
}

TEST(Eval, ConstantModelScoresTheLowestClassFrequency) {
  const Trained& t = trained();
  MultimodalModel m = make_model(HeadKind::concat, t.task, small_arch(), 7);
  m.tail.set_zero();
  EXPECT_DOUBLE_EQ(evaluate_clean(m, t.data.test), 0.25);
}

TEST(Eval, CleanAccuracyMatchesHandScoredPredictions) {
  const Trained& t = trained();
  const Batch b = t.data.test.rows(0, 20);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < 20; ++r) {
    const Tensor logits = predict(t.concat, t.data.test.sample(r));
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c) {
      if (logits[c] > logits[best]) best = c;
    }
    hits += static_cast<int>(best) == b.labels[r];
  }
  const Dataset head(t.task, Split::test, b.inputs, b.labels);
  EXPECT_DOUBLE_EQ(accuracy(predict(t.concat, b), b.labels), static_cast<double>(hits) / 20.0);
}

TEST(Eval, ZeroBudgetRobustEqualsCleanExactly) {
  const Trained& t = trained();
  for (HeadKind kind : {HeadKind::concat, HeadKind::robust}) {
    const MultimodalModel m = derive_model(kind, t.concat, t.task, 8);
    const double clean = evaluate_clean(m, t.data.test);
    for (double v : evaluate_robust(m, t.data.test, attack(0.0))) EXPECT_EQ(v, clean);
  }
}

TEST(Eval, OracleUnderAttackOnItsExcludedModalityEqualsClean) {
  const Trained& t = trained();
  std::vector<MultimodalModel> oracles;
  for (int i = 0; i < 3; ++i) oracles.push_back(make_model(HeadKind::oracle, t.task, small_arch(), 9 + i, i));
  const auto bound = oracle_bound(oracles, t.data.test, attack(2.0));
  for (int i = 0; i < 3; ++i) EXPECT_EQ(bound[i], evaluate_clean(oracles[i], t.data.test));
  std::swap(oracles[0], oracles[1]);
  EXPECT_THROW(oracle_bound(oracles, t.data.test, attack(2.0)), ValidationError);
}

TEST(Eval, TwoModalityOracleIsAUnimodalClassifier) {
  TaskSpec task = testing::small_task(4);
  task.k = 2;
  task.input_dims = {8, 8};
  const DatasetPair data = generate(task);
  MultimodalModel oracle = make_model(HeadKind::oracle, task, small_arch(), 12, 0);
  TrainSpec s;
  s.epochs = 3;
  train_clean(oracle, data.train, s);
  UnimodalModel u;
  u.modality = 1;
  u.classes = task.classes;
  u.extractor = oracle.extractors[1];
  u.tail = oracle.tail;
  EXPECT_EQ(evaluate_clean(oracle, data.test),
            accuracy(predict(u, data.test.modality(1)), data.test.labels()));
}

TEST(Eval, StandardFusionCollapsesUnderAdaptiveAttack) {
  const Trained& t = trained();
  const double clean = evaluate_clean(t.concat, t.data.test);
  for (double v : evaluate_robust(t.concat, t.data.test, attack(2.0, 10))) EXPECT_LT(v, clean - 0.3);
}

TEST(Eval, TransferDegradesNoMoreThanAdaptive) {
  const Trained& t = trained();
  std::vector<UnimodalModel> surrogates;
  for (int i = 0; i < 3; ++i) {
    UnimodalModel u = make_unimodal(t.concat, i, 13 + i);
    TrainSpec s;
    s.epochs = 5;
    s.scope = TrainScope::fusion_only;
    train_unimodal(u, t.data.train, s);
    surrogates.push_back(u);
  }
  const auto adaptive = evaluate_robust(t.concat, t.data.test, attack(1.5));
  const auto transfer = evaluate_transfer(surrogates, t.concat, t.data.test, attack(1.5));
  for (int i = 0; i < 3; ++i) EXPECT_GE(transfer[i], adaptive[i]);
}

TEST(Eval, TargetedSuccessIsReportedPerModality) {
  const Trained& t = trained();
  const TargetedEval e = evaluate_targeted(t.concat, t.data.test, attack(2.0, 10));
  ASSERT_EQ(e.accuracy.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_GT(e.success_rate[i], 1.0 / 3.0);
    EXPECT_LE(e.accuracy[i] + e.success_rate[i], 1.0 + 1e-12);
  }
}

TEST(Eval, HardWiredCleanArmDetectsCleanOnly) {
  const Trained& t = trained();
  MultimodalModel m = derive_model(HeadKind::robust, t.concat, t.task, 16);
  m.forced_arm = t.task.k;
  const DetectionResult d = detection_rate(m, t.data.test, attack(1.0, 2));
  EXPECT_EQ(d.rates[3], 1.0);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(d.rates[i], 0.0);
  EXPECT_EQ(d.pooled, 0.25);
}

TEST(Eval, ConstantUniformDetectorPoolsToChance) {
  // Ties break toward arm 0, so per-condition rates are 1, 0, 0, 0 and only
  // the pooled rate sits at chance.
  const Trained& t = trained();
  MultimodalModel m = derive_model(HeadKind::robust, t.concat, t.task, 17);
  m.detector.set_zero();
  const DetectionResult d = detection_rate(m, t.data.test, attack(1.0, 2));
  EXPECT_DOUBLE_EQ(d.pooled, 0.25);
  EXPECT_EQ(d.rates[0], 1.0);
}

TEST(Eval, ConfusionRowsSumToConditionCounts) {
  const Trained& t = trained();
  const MultimodalModel m = derive_model(HeadKind::robust, t.concat, t.task, 18);
  const DetectionResult d = detection_rate(m, t.data.test, attack(1.0, 3));
  ASSERT_EQ(d.confusion.size(), 4u);
  double sum = 0.0;
  for (std::size_t c = 0; c < 4; ++c) {
    std::size_t row = 0;
    for (std::size_t v : d.confusion[c]) row += v;
    EXPECT_EQ(row, t.data.test.size());
    EXPECT_DOUBLE_EQ(d.rates[c], static_cast<double>(d.confusion[c][c]) / static_cast<double>(row));
    sum += d.rates[c];
  }
  EXPECT_DOUBLE_EQ(d.pooled, sum / 4.0);
}

TEST(Eval, StoredResultsReproduceDirectDetection) {
  const Trained& t = trained();
  const MultimodalModel m = derive_model(HeadKind::robust, t.concat, t.task, 19);
  std::vector<AttackResult> results;
  for (int i = 0; i < 3; ++i) {
    results.push_back(decode_attack_result(encode_attack_result(attack_test_set(m, t.data.test, attack(1.0, 3), i))));
  }
  EXPECT_EQ(detection_from_results(m, t.data.test, results).confusion,
            detection_rate(m, t.data.test, attack(1.0, 3)).confusion);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(attacked_accuracy(m, t.data.test, results[i]), evaluate_robust(m, t.data.test, attack(1.0, 3))[i]);
  }
}

TEST(Eval, ParallelBatchesMatchSerial) {
  const Trained& t = trained();
  const MultimodalModel m = derive_model(HeadKind::robust, t.concat, t.task, 20);
  EvalOptions serial{50, 1}, parallel{50, 3};
  EXPECT_EQ(evaluate_robust(m, t.data.test, attack(1.0, 3), serial),
            evaluate_robust(m, t.data.test, attack(1.0, 3), parallel));
  EXPECT_EQ(detection_rate(m, t.data.test, attack(1.0, 3), serial).confusion,
            detection_rate(m, t.data.test, attack(1.0, 3), parallel).confusion);
}

TEST(Eval, DoublingTheTestSetMovesRobustAccuracyLittle) {
  TaskSpec task;  // reference task
  task.n_test = 2000;
  const DatasetPair big = generate(task);
  const Batch first = big.test.rows(0, 1000);
  TaskSpec half_spec = task;
  half_spec.n_test = 1000;
  const Dataset half(half_spec, Split::test, first.inputs, first.labels);
  MultimodalModel m = make_model(HeadKind::concat, task, ArchSpec{}, 21);
  TrainSpec s;
  s.epochs = 5;
  train_clean(m, big.train, s);
  const auto a = evaluate_robust(m, half, attack(1.0));
  const auto b = evaluate_robust(m, big.test, attack(1.0));
  for (int i = 0; i < 3; ++i) EXPECT_LT(std::abs(a[i] - b[i]), 0.03);
}

// ---------------------------------------------------------------------------
// Report assembly

ModelResult result(const std::string& name, ModelRole role, double clean, std::vector<double> adaptive) {
  ModelResult r;
  r.name = name;
  r.role = role;
  r.clean = clean;
  r.robust[AttackKind::adaptive] = std::move(adaptive);
  return r;
}

std::vector<SeedResult> fixture_runs() {
  std::vector<SeedResult> runs;
  for (std::uint64_t seed : {0u, 1u}) {
    const double j = 0.01 * static_cast<double>(seed);
    SeedResult s;
    s.seed = seed;
    s.models.push_back(result("concat", ModelRole::standard, 0.99 - j, {0.10 + j, 0.20, 0.15}));
    s.models.push_back(result("mean", ModelRole::standard, 0.97, {0.30, 0.05 + j, 0.25}));
    s.models.push_back(result("gated", ModelRole::robust_baseline, 0.98, {0.70, 0.65 - j, 0.80}));
    ModelResult robust = result("robust", ModelRole::robust, 0.96 + j, {0.90, 0.85, 0.88 - j});
    robust.robust[AttackKind::transfer] = {0.95, 0.96, 0.97};
    robust.detection =
        DetectionResult::from_confusion({{80, 10, 5, 5}, {10, 75, 10, 5}, {5, 5, 85, 5}, {2, 3, 5, 90}});
    s.models.push_back(robust);
    s.models.push_back(result("oracle", ModelRole::reference, 0.985, {0.98, 0.97, 0.99}));
    runs.push_back(s);
  }
  return runs;
}

TEST(Report, EmptyModelSetIsRejected) {
  EXPECT_THROW(build_report({}, "h"), ValidationError);
  SeedResult empty;
  EXPECT_THROW(build_report({empty}, "h"), ValidationError);
}

TEST(Report, InconsistentModelListsAreRejected) {
  auto runs = fixture_runs();
  runs[1].models.pop_back();
  EXPECT_THROW(build_report(runs, "h"), ValidationError);
}

TEST(Report, OutOfRangeAccuracyBreaksAnInvariant) {
  auto runs = fixture_runs();
  runs[0].models[0].clean = 1.2;
  EXPECT_THROW(build_report(runs, "h"), InvariantError);
}

TEST(Report, SingleModelHasNullDeltas) {
  SeedResult s;
  s.seed = 0;
  s.models.push_back(result("concat", ModelRole::standard, 0.9, {0.1, 0.2, 0.3}));
  const EvalReport r = build_report({s}, "h");
  ASSERT_FALSE(r.delta_clean.empty());
  for (const auto& [cell, v] : r.delta_clean) EXPECT_FALSE(v.has_value()) << cell;
  for (const auto& [cell, v] : r.delta_robust) EXPECT_FALSE(v.has_value()) << cell;
  const Json j = Json::parse(report_json_text(r));
  EXPECT_TRUE(j.at("delta_clean").at("clean").is_null());
}

TEST(Report, DeltasCompareAgainstTheBestCompetitorPerCell) {
  const EvalReport r = build_report(fixture_runs(), "h");
  // robust clean mean 0.965; best standard clean is concat at 0.985
  EXPECT_NEAR(*r.delta_clean.at("clean"), 0.965 - 0.985, 1e-12);
  // modality 1: robust 0.90 vs best standard mean 0.30
  EXPECT_NEAR(*r.delta_clean.at("adaptive/1"), 0.90 - 0.30, 1e-12);
  // modality 2: robust 0.85 vs gated mean 0.645
  EXPECT_NEAR(*r.delta_robust.at("adaptive/2"), 0.85 - 0.645, 1e-12);
  EXPECT_FALSE(r.delta_robust.at("transfer/1").has_value());
}

TEST(Report, SummaryUsesPopulationStd) {
  const EvalReport r = build_report(fixture_runs(), "h");
  const SummaryStat& s = r.summary.at("concat").at("clean");
  EXPECT_NEAR(s.mean, 0.985, 1e-12);
  EXPECT_NEAR(s.std, 0.005, 1e-12);
  EXPECT_EQ(s.n, 2u);
  EXPECT_NEAR(r.summary.at("robust").at("detection/pooled").mean, (0.8 + 0.75 + 0.85 + 0.9) / 4.0, 1e-12);
  EXPECT_NEAR(r.summary.at("robust").at("detection/clean").mean, 0.9, 1e-12);
}

TEST(Report, JsonRoundTripsAndIsDeterministic) {
  const EvalReport r = build_report(fixture_runs(), "abc");
  const std::string text = report_json_text(r);
  EXPECT_EQ(report_json_text(build_report(fixture_runs(), "abc")), text);
  EXPECT_EQ(report_json_text(report_from_json(Json::parse(text))), text);
  EXPECT_NE(report_json_text(build_report(fixture_runs(), "abd")), text);
}

TEST(Report, CsvHasOneRowPerCell) {
  const std::string csv = report_csv_text(build_report(fixture_runs(), "h"));
  std::istringstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "model,modality,attack,metric,mean,std,n");
  EXPECT_NE(csv.find("concat,1,adaptive,accuracy,"), std::string::npos);
  EXPECT_NE(csv.find("robust,clean,none,accuracy,"), std::string::npos);
  EXPECT_NE(csv.find("delta-robust,2,adaptive,accuracy,"), std::string::npos);
}

TEST(Report, MatchesTheGoldenFile) {
  const std::filesystem::path golden = std::filesystem::path(OODLAB_TEST_DATA_DIR) / "report_golden.json";
  const std::string text = report_json_text(build_report(fixture_runs(), "golden-fixture"));
  if (std::getenv("OODLAB_UPDATE_GOLDEN") != nullptr) write_file_atomic(golden, text);
  const auto bytes = read_file_bytes(golden);
  EXPECT_EQ(std::string(bytes.begin(), bytes.end()), text);
}

TEST(Report, WrittenFilesCarryTheJsonHash) {
  testing::TempDir dir("report");
  const ReportFiles f = write_report(build_report(fixture_runs(), "h"), dir.path());
  const auto bytes = read_file_bytes(f.json);
  EXPECT_EQ(sha256_hex(std::string(bytes.begin(), bytes.end())), f.json_sha256);
  EXPECT_TRUE(std::filesystem::exists(f.csv));
}

}  // namespace
}  // namespace oodlab
