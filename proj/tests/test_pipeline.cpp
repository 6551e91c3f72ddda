#include <gtest/gtest.h>

#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"
#include "oodlab/pipeline.hpp"
#include "test_support.hpp"

namespace oodlab {
namespace {

namespace fs = std::filesystem;

const bool quiet_logs = [] {
  spdlog::set_level(spdlog::level::warn);
  return true;
}();

RunConfig tiny_config(const fs::path& dir, std::vector<std::string> models = {"concat", "robust"}) {
  RunConfig c = reference_config();
  c.task = testing::small_task(0, 160, 80);
  c.arch.feature_dim = 6;
  c.arch.extractor_hidden = {12, 12};
  c.arch.tail_hidden = 12;
  c.arch.expert_hidden = 12;
  c.arch.fused_dim = 6;
  c.arch.detector_hidden = 16;
  c.attack.steps = 2;
  for (TrainSpec* t : {&c.clean_train, &c.robust_train, &c.baseline_train, &c.adversarial_train}) {
    t->epochs = 2;
    t->attack = c.attack;
  }
  c.models = std::move(models);
  c.attack_kinds = {"adaptive"};
  c.seeds = {0};
  c.output_dir = dir.string();
  c.eval_batch = 40;
  return c;
}

std::string slurp(const fs::path& p) {
  const auto bytes = read_file_bytes(p);
  return {bytes.begin(), bytes.end()};
}

void overwrite(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary | std::ios::trunc) << text;
}

TEST(Config, JsonRoundTripIsEqual) {
  RunConfig c = tiny_config("runs/x", {"concat", "gated", "oracle"});
  c.attack_kinds = {"adaptive", "feature", "targeted"};
  c.seeds = {4, 9};
  c.jobs = 3;
  EXPECT_EQ(run_config_from_json(to_json(c)), c);
  EXPECT_EQ(run_config_from_json(to_json(reference_config())), reference_config());
}

TEST(Config, AbsentKeysTakeReferenceDefaults) {
  const RunConfig c = run_config_from_json(Json::parse(R"({"seeds": [5], "attack": {"epsilon": 0.5}})"));
  EXPECT_EQ(c.seeds, std::vector<std::uint64_t>{5});
  EXPECT_EQ(c.attack.epsilon, 0.5);
  EXPECT_EQ(c.robust_train.attack.epsilon, 0.5);  // train-time attacks follow the evaluation attack
  EXPECT_EQ(c.task, reference_config().task);
  EXPECT_EQ(c.models, known_models());
}

TEST(Config, UnknownKeysAreRejectedAtEveryLevel) {
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"sedes": [1]})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"task": {"rh0": 0.5}})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"robust_train": {"attack": {"eps": 1}}})")), ValidationError);
}

TEST(Config, InvalidSettingsAreRejected) {
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"models": ["concat", "transformer"]})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"models": ["concat", "concat"]})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"attack_kinds": ["transfer"]})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"robust_train": {"scope": "all"}})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"seeds": []})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"jobs": 0})")), ValidationError);
  EXPECT_THROW(run_config_from_json(Json::parse(R"({"task": {"k": 3, "input_dims": [4, 4]}})")), ValidationError);
}

TEST(Config, FileWithCommentsLoads) {
  testing::TempDir dir("config");
  overwrite(dir.path() / "c.json", "{\n  // three seeds\n  \"seeds\": [0, 1, 2],\n  \"jobs\": 2\n}\n");
  const RunConfig c = load_run_config(dir.path() / "c.json");
  EXPECT_EQ(c.jobs, 2);
  overwrite(dir.path() / "bad.json", "{\"seeds\": [0,");
  EXPECT_THROW(load_run_config(dir.path() / "bad.json"), ValidationError);
}

TEST(Config, HashIgnoresOutputDirAndJobsOnly) {
  RunConfig a = reference_config(), b = reference_config();
  b.output_dir = "elsewhere";
  b.jobs = 4;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.attack.epsilon = 1.5;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(Pipeline, StagesRefuseToRunBeforeTheirInputs) {
  testing::TempDir dir("pipe");
  const RunConfig c = tiny_config(dir.path() / "run", {"concat"});
  try {
    Pipeline(c).train();
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "generate-data@seed-0");
  }
  Pipeline(c).generate_data();
  try {
    Pipeline(c).attack();
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train-concat@seed-0");
  }
}

TEST(Pipeline, SnapshotReparsesToTheRunConfig) {
  testing::TempDir dir("pipe");
  const RunConfig c = tiny_config(dir.path() / "run");
  Pipeline p(c);
  p.generate_data();
  EXPECT_EQ(load_run_config(dir.path() / "run" / "config.json"), c);
  EXPECT_TRUE(fs::exists(p.seed_dir(0) / "data" / "train.oold"));
  EXPECT_TRUE(fs::exists(p.seed_dir(0) / "data" / "test.oold"));
  EXPECT_TRUE(fs::exists(p.seed_dir(0) / "data" / "dataset.json"));
}

TEST(Pipeline, RunDirectoryRefusesADifferentConfig) {
  testing::TempDir dir("pipe");
  RunConfig c = tiny_config(dir.path() / "run");
  Pipeline(c).generate_data();
  c.attack.epsilon = 0.5;
  try {
    Pipeline(c).generate_data();
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "config");
  }
  c = tiny_config(dir.path() / "run");
  c.jobs = 2;  // does not change results, so the directory is reusable
  EXPECT_NO_THROW(Pipeline(c).generate_data());
}

TEST(Pipeline, CorruptedMarkerNamesTheStage) {
  testing::TempDir dir("pipe");
  const RunConfig c = tiny_config(dir.path() / "run", {"concat"});
  Pipeline(c).generate_data();
  Pipeline(c).train();
  overwrite(dir.path() / "run" / "stages" / "train-concat@seed-0.done", "{not json");
  try {
    Pipeline(c).train();
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train-concat@seed-0");
  }
}

TEST(Pipeline, CorruptedOutputNamesTheStage) {
  testing::TempDir dir("pipe");
  const RunConfig c = tiny_config(dir.path() / "run", {"concat"});
  Pipeline p(c);
  p.generate_data();
  const fs::path data = p.seed_dir(0) / "data" / "test.oold";
  std::string bytes = slurp(data);
  bytes[bytes.size() / 2] ^= 0x1;
  overwrite(data, bytes);
  try {
    Pipeline(c).train();
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "generate-data@seed-0");
  }
}

TEST(Pipeline, MarkerFromAnotherConfigIsRejected) {
  testing::TempDir dir("pipe");
  const RunConfig c = tiny_config(dir.path() / "run", {"concat"});
  Pipeline(c).generate_data();
  const fs::path marker = dir.path() / "run" / "stages" / "generate-data@seed-0.done";
  Json m = Json::parse(slurp(marker));
  m["config_hash"] = std::string(64, '0');
  overwrite(marker, m.dump());
  EXPECT_THROW(Pipeline(c).generate_data(), StageError);
}

TEST(Pipeline, ResumeSkipsFinishedStages) {
  testing::TempDir dir("pipe");
  const RunConfig c = tiny_config(dir.path() / "run");
  Pipeline(c).generate_data();
  Pipeline(c).train();
  const fs::path marker = dir.path() / "run" / "stages" / "train-robust@seed-0.done";
  const fs::path ckpt = Pipeline(c).seed_dir(0) / "models" / "robust.ckpt";
  const auto marker_time = fs::last_write_time(marker);
  const std::string ckpt_bytes = slurp(ckpt);

  // A later invocation of the remaining stages picks up where the first stopped.
  const ReportFiles first = Pipeline(c).reproduce();
  EXPECT_EQ(fs::last_write_time(marker), marker_time);
  EXPECT_EQ(slurp(ckpt), ckpt_bytes);

  testing::TempDir fresh("pipe");
  RunConfig d = c;
  d.output_dir = (fresh.path() / "run").string();
  const ReportFiles straight = Pipeline(d).reproduce();
  EXPECT_EQ(first.json_sha256, straight.json_sha256);
}

TEST(Pipeline, RerunGivesIdenticalReportHash) {
  testing::TempDir a("pipe"), b("pipe");
  const ReportFiles ra = Pipeline(tiny_config(a.path() / "run")).reproduce();
  const ReportFiles rb = Pipeline(tiny_config(b.path() / "run")).reproduce();
  EXPECT_EQ(ra.json_sha256, rb.json_sha256);
  EXPECT_EQ(slurp(ra.json), slurp(rb.json));
  EXPECT_EQ(slurp(ra.csv), slurp(rb.csv));
  const Json report = Json::parse(slurp(ra.json));
  EXPECT_EQ(report.at("config_hash"), config_hash(tiny_config(a.path() / "run")));
  EXPECT_TRUE(fs::exists(a.path() / "run" / "timing.json"));
  EXPECT_EQ(report.dump().find("seconds"), std::string::npos);
}

TEST(Pipeline, ParallelEvaluationGivesTheSameReport) {
  testing::TempDir a("pipe"), b("pipe");
  RunConfig serial = tiny_config(a.path() / "run"), parallel = tiny_config(b.path() / "run");
  parallel.jobs = 3;
  EXPECT_EQ(Pipeline(serial).reproduce().json_sha256, Pipeline(parallel).reproduce().json_sha256);
}

TEST(Pipeline, FullZooTablesCoverEveryModelAndCell) {
  testing::TempDir dir("pipe");
  RunConfig c = tiny_config(dir.path() / "run", known_models());
  c.attack_kinds = {"adaptive", "transfer", "feature", "targeted"};
  const ReportFiles f = Pipeline(c).reproduce();
  const std::string csv = slurp(f.csv);
  for (const std::string model : {"concat", "mean", "early", "gated", "lel", "robust", "end2end-at", "oracle"}) {
    EXPECT_NE(csv.find(model + ",clean,none,accuracy,"), std::string::npos) << model;
    for (int m = 1; m <= 3; ++m) {
      EXPECT_NE(csv.find(model + "," + std::to_string(m) + ",adaptive,accuracy,"), std::string::npos)
          << model << " modality " << m;
    }
  }
  EXPECT_NE(csv.find("robust,1,transfer,accuracy,"), std::string::npos);
  EXPECT_NE(csv.find("robust,clean,adaptive,detection_rate,"), std::string::npos);
  EXPECT_NE(csv.find("robust-aligned,pooled,adaptive,detection_rate,"), std::string::npos);
  EXPECT_NE(csv.find("delta-robust,1,adaptive,accuracy,"), std::string::npos);

  const fs::path seed = Pipeline(c).seed_dir(0);
  for (const char* file : {"models/oracle-1.ckpt", "models/surrogate-3.ckpt", "curves/robust.csv",
                           "attacks/robust-m2.atk", "results.json"}) {
    EXPECT_TRUE(fs::exists(seed / file)) << file;
  }
}

TEST(Pipeline, UntrainedModelsSitNearChance) {
  testing::TempDir dir("pipe");
  RunConfig c = tiny_config(dir.path() / "run", {"concat", "robust"});
  c.task.n_test = 400;
  for (TrainSpec* t : {&c.clean_train, &c.robust_train, &c.baseline_train, &c.adversarial_train}) t->epochs = 0;
  const ReportFiles f = Pipeline(c).reproduce();
  const EvalReport r = report_from_json(Json::parse(slurp(f.json)));
  // 3-sigma binomial band around 1/4 at n = 400 is about 0.065; random
  // initializations add some bias, so the band is widened.
  EXPECT_NEAR(r.summary.at("concat").at("clean").mean, 0.25, 0.12);
  EXPECT_NEAR(r.summary.at("robust").at("clean").mean, 0.25, 0.12);
  EXPECT_NEAR(r.summary.at("robust").at("detection/pooled").mean, 0.25, 0.12);
}

}  // namespace
}  // namespace oodlab
