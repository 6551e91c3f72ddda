#include "oodlab/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"
#include "oodlab/seeding.hpp"

namespace oodlab {

namespace fs = std::filesystem;

const std::vector<std::string>& known_models() {
  static const std::vector<std::string> names = {"concat", "mean",           "early",      "gated", "lel",
                                                 "robust", "robust-aligned", "end2end-at", "oracle"};
  return names;
}

namespace {

bool is_known(const std::string& name) {
  const auto& names = known_models();
  return std::find(names.begin(), names.end(), name) != names.end();
}

ModelRole role_of(const std::string& name) {
  if (name == "concat" || name == "mean") return ModelRole::standard;
  if (name == "gated" || name == "lel") return ModelRole::robust_baseline;
  if (name == "robust") return ModelRole::robust;
  return ModelRole::reference;
}

// Stable per-model salt for seeds.
std::uint64_t salt_of(const std::string& name) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ull;
  return h;
}

}  // namespace

void RunConfig::validate() const {
  task.validate();
  arch.validate();
  clean_train.validate();
  robust_train.validate();
  baseline_train.validate();
  adversarial_train.validate();
  attack.validate();
  if (robust_train.scope != TrainScope::fusion_only) {
    throw ValidationError("config.robust_train.scope: robust fusion training keeps extractors frozen (fusion_only)");
  }
  if (attack.objective != Objective::untargeted || attack.level != AttackLevel::input) {
    throw ValidationError("config.attack: the evaluation attack is untargeted at input level; use attack_kinds");
  }
  if (attack_kinds.empty()) throw ValidationError("config.attack_kinds: at least one kind required");
  std::set<std::string> kinds;
  for (const auto& k : attack_kinds) {
    parse_attack_kind(k);
    if (!kinds.insert(k).second) throw ValidationError("config.attack_kinds: duplicate '" + k + "'");
  }
  if (std::find(attack_kinds.begin(), attack_kinds.end(), "adaptive") == attack_kinds.end()) {
    throw ValidationError("config.attack_kinds: 'adaptive' is required");
  }
  if (models.empty()) throw ValidationError("config.models: empty model set");
  std::set<std::string> seen;
  for (const auto& m : models) {
    if (!is_known(m)) throw ValidationError("config.models: unknown model '" + m + "'");
    if (!seen.insert(m).second) throw ValidationError("config.models: duplicate '" + m + "'");
  }
  if (seeds.empty()) throw ValidationError("config.seeds: at least one seed required");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw ValidationError("config.seeds: duplicate seed");
  }
  if (output_dir.empty()) throw ValidationError("config.output_dir: empty");
  if (jobs < 1) throw ValidationError("config.jobs: must be at least 1");
  if (eval_batch < 1) throw ValidationError("config.eval_batch: must be positive");
}

RunConfig reference_config() {
  RunConfig c;
  c.attack.epsilon = 2.5;
  c.attack.steps = 10;
  c.attack.seed = 7;

  c.clean_train.epochs = 20;
  c.clean_train.seed = 1;

  c.robust_train = c.clean_train;
  c.robust_train.epochs = 40;
  c.robust_train.seed = 2;
  c.robust_train.scope = TrainScope::fusion_only;
  c.robust_train.attack = c.attack;

  c.baseline_train = c.robust_train;
  c.baseline_train.seed = 3;
  c.baseline_train.schedule = Schedule::alternating;

  c.adversarial_train = c.robust_train;
  c.adversarial_train.seed = 4;
  c.adversarial_train.scope = TrainScope::all;
  c.adversarial_train.schedule = Schedule::joint;
  return c;
}

Json to_json(const RunConfig& c) {
  return Json{{"task", to_json(c.task)},
              {"arch", to_json(c.arch)},
              {"clean_train", to_json(c.clean_train)},
              {"robust_train", to_json(c.robust_train)},
              {"baseline_train", to_json(c.baseline_train)},
              {"adversarial_train", to_json(c.adversarial_train)},
              {"attack", to_json(c.attack)},
              {"attack_kinds", c.attack_kinds},
              {"models", c.models},
              {"seeds", c.seeds},
              {"output_dir", c.output_dir},
              {"jobs", c.jobs},
              {"eval_batch", c.eval_batch}};
}

RunConfig run_config_from_json(const Json& j) {
  constexpr std::string_view where = "config";
  if (!j.is_object()) throw ValidationError("config: expected an object");
  reject_unknown_keys(j,
                      {"task", "arch", "clean_train", "robust_train", "baseline_train", "adversarial_train",
                       "attack", "attack_kinds", "models", "seeds", "output_dir", "jobs", "eval_batch"},
                      where);
  RunConfig c = reference_config();
  // Nested sections overlay the reference defaults key by key.
  auto overlay = [&](const char* key, const Json& defaults) {
    Json merged = defaults;
    if (j.contains(key)) {
      if (!j.at(key).is_object()) throw ValidationError(std::string("config.") + key + ": expected an object");
      for (const auto& [k, v] : j.at(key).items()) {
        if (v.is_object() && merged.contains(k) && merged.at(k).is_object()) {
          for (const auto& [k2, v2] : v.items()) merged[k][k2] = v2;
        } else {
          merged[k] = v;
        }
      }
    }
    return merged;
  };
  auto with_context = [](const char* section, auto&& parse) {
    try {
      return parse();
    } catch (const ValidationError& e) {
      throw ValidationError(std::string("config.") + section + ": " + e.what());
    }
  };
  c.task = with_context("task", [&] { return task_spec_from_json(overlay("task", to_json(c.task))); });
  c.arch = with_context("arch", [&] { return arch_spec_from_json(overlay("arch", to_json(c.arch))); });
  c.attack = with_context("attack", [&] { return attack_spec_from_json(overlay("attack", to_json(c.attack))); });
  // Inner training attacks default to the evaluation attack.
  for (TrainSpec* t : {&c.robust_train, &c.baseline_train, &c.adversarial_train}) t->attack = c.attack;
  c.clean_train = with_context("clean_train", [&] {
    return train_spec_from_json(overlay("clean_train", to_json(c.clean_train)));
  });
  c.robust_train = with_context("robust_train", [&] {
    return train_spec_from_json(overlay("robust_train", to_json(c.robust_train)));
  });
  c.baseline_train = with_context("baseline_train", [&] {
    return train_spec_from_json(overlay("baseline_train", to_json(c.baseline_train)));
  });
  c.adversarial_train = with_context("adversarial_train", [&] {
    return train_spec_from_json(overlay("adversarial_train", to_json(c.adversarial_train)));
  });
  c.attack_kinds = json_get(j, "attack_kinds", c.attack_kinds, where);
  c.models = json_get(j, "models", c.models, where);
  c.seeds = json_get(j, "seeds", c.seeds, where);
  c.output_dir = json_get(j, "output_dir", c.output_dir, where);
  c.jobs = json_get(j, "jobs", c.jobs, where);
  c.eval_batch = json_get(j, "eval_batch", c.eval_batch, where);
  c.validate();
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read config " + path.string());
  Json j;
  try {
    j = Json::parse(in, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json(a) == to_json(b); }

std::string config_hash(const RunConfig& config) {
  Json j = to_json(config);
  j.erase("output_dir");
  j.erase("jobs");
  return sha256_hex(j.dump());
}

// ---------------------------------------------------------------------------

namespace {

using Clock = std::chrono::steady_clock;

std::string seed_tag(std::uint64_t seed) { return "seed-" + std::to_string(seed); }

std::string file_hash(const fs::path& p) { return sha256_hex(read_file_bytes(p)); }

void write_curves(const TrainCurves& c, const fs::path& path) {
  std::ostringstream out;
  out.precision(17);
  out << "epoch,loss,l_odd,l_task,detector_accuracy\n";
  for (std::size_t e = 0; e < c.loss.size(); ++e) {
    out << e << ',' << c.loss[e];
    for (const auto* v : {&c.l_odd, &c.l_task, &c.detector_accuracy}) {
      out << ',';
      if (e < v->size()) out << (*v)[e];
    }
    out << '\n';
  }
  write_file_atomic(path, out.str());
}

// Per-seed copies of the train and attack specs.
TrainSpec seeded(const TrainSpec& spec, std::uint64_t seed) {
  TrainSpec s = spec;
  s.seed = mix_seed(spec.seed, seed);
  s.attack.seed = mix_seed(spec.attack.seed, seed);
  return s;
}

bool has_kind(const RunConfig& c, const char* kind) {
  return std::find(c.attack_kinds.begin(), c.attack_kinds.end(), kind) != c.attack_kinds.end();
}

bool selected(const RunConfig& c, const std::string& name) {
  return std::find(c.models.begin(), c.models.end(), name) != c.models.end();
}

}  // namespace

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  root_ = config_.output_dir;
  hash_ = config_hash(config_);
}

fs::path Pipeline::seed_dir(std::uint64_t seed) const { return root_ / seed_tag(seed); }

void Pipeline::write_snapshot() {
  fs::create_directories(root_ / "stages");
  const fs::path snapshot = root_ / "config.json";
  if (fs::exists(snapshot)) {
    RunConfig previous;
    try {
      previous = load_run_config(snapshot);
    } catch (const Error& e) {
      throw StageError("config", std::string("unreadable snapshot: ") + e.what());
    }
    if (config_hash(previous) != hash_) {
      throw StageError("config", "run directory " + root_.string() + " holds a different configuration");
    }
  }
  write_file_atomic(snapshot, to_json(config_).dump(2) + "\n");
}

bool Pipeline::stage_done(const std::string& name) const {
  const fs::path marker = root_ / "stages" / (name + ".done");
  if (!fs::exists(marker)) return false;
  Json m;
  try {
    const auto bytes = read_file_bytes(marker);
    m = Json::parse(std::string(bytes.begin(), bytes.end()));
  } catch (const std::exception& e) {
    throw StageError(name, std::string("corrupt done-marker: ") + e.what());
  }
  const bool shaped = m.is_object() && m.contains("config_hash") && m.at("config_hash").is_string() &&
                      m.contains("files") && m.at("files").is_object();
  if (!shaped) throw StageError(name, "malformed done-marker");
  if (m.at("config_hash").get<std::string>() != hash_) {
    throw StageError(name, "done-marker does not belong to this configuration");
  }
  for (const auto& [rel, digest] : m.at("files").items()) {
    const fs::path p = root_ / rel;
    if (!digest.is_string()) throw StageError(name, "malformed done-marker entry " + rel);
    if (!fs::exists(p)) throw StageError(name, "missing output " + rel);
    if (file_hash(p) != digest.get<std::string>()) throw StageError(name, "corrupted output " + rel);
  }
  return true;
}

void Pipeline::require(const std::string& name) const {
  if (!stage_done(name)) throw StageError(name, "has not run yet");
}

void Pipeline::stage(const std::string& name, const std::function<Outputs()>& body) {
  write_snapshot();
  if (stage_done(name)) {
    spdlog::debug("stage {}: up to date", name);
    return;
  }
  spdlog::info("stage {}: running", name);
  const auto start = Clock::now();
  const Outputs outputs = body();
  Json files = Json::object();
  for (const fs::path& p : outputs) files[fs::relative(p, root_).generic_string()] = file_hash(p);
  write_file_atomic(root_ / "stages" / (name + ".done"),
                    Json{{"stage", name}, {"config_hash", hash_}, {"files", files}}.dump(2) + "\n");
  record_time(name, std::chrono::duration<double>(Clock::now() - start).count());
}

void Pipeline::record_time(const std::string& name, double seconds) {
  const fs::path path = root_ / "timing.json";
  Json t = Json::object();
  if (fs::exists(path)) {
    try {
      const auto bytes = read_file_bytes(path);
      t = Json::parse(std::string(bytes.begin(), bytes.end()));
    } catch (const std::exception&) {
      t = Json::object();  // timing is informational only
    }
  }
  t[name] = seconds;
  write_file_atomic(path, t.dump(2) + "\n");
}

void Pipeline::generate_data() {
  for (std::uint64_t seed : config_.seeds) {
    stage("generate-data@" + seed_tag(seed), [&] {
      TaskSpec spec = config_.task;
      spec.seed = mix_seed(config_.task.seed, seed);
      const DatasetPair data = generate(spec);
      const fs::path dir = seed_dir(seed) / "data";
      fs::create_directories(dir);
      save_dataset(data.train, dir / "train.oold");
      save_dataset(data.test, dir / "test.oold");
      const Json info{{"task", to_json(spec)},
                      {"train_sha256", file_hash(dir / "train.oold")},
                      {"test_sha256", file_hash(dir / "test.oold")}};
      write_file_atomic(dir / "dataset.json", info.dump(2) + "\n");
      return Outputs{dir / "train.oold", dir / "test.oold", dir / "dataset.json"};
    });
  }
}

DatasetPair Pipeline::load_data(std::uint64_t seed) const {
  require("generate-data@" + seed_tag(seed));
  const fs::path dir = seed_dir(seed) / "data";
  return {load_dataset(dir / "train.oold"), load_dataset(dir / "test.oold")};
}

std::vector<std::string> Pipeline::training_order() const {
  // concat supplies the extractors of the fusion-only variants and surrogates.
  std::vector<std::string> order;
  const bool needs_concat = has_kind(config_, "transfer") ||
                            std::any_of(config_.models.begin(), config_.models.end(), [](const std::string& m) {
                              return m == "concat" || m == "gated" || m == "lel" || m == "robust" ||
                                     m == "robust-aligned";
                            });
  if (needs_concat) order.push_back("concat");
  for (const std::string& m : known_models()) {
    if (m != "concat" && selected(config_, m)) order.push_back(m);
  }
  if (has_kind(config_, "transfer")) order.push_back("surrogates");
  return order;
}

Pipeline::Outputs Pipeline::train_model(const std::string& name, std::uint64_t seed, const DatasetPair& data) {
  const fs::path models = seed_dir(seed) / "models";
  const fs::path curves = seed_dir(seed) / "curves";
  fs::create_directories(models);
  fs::create_directories(curves);
  const TaskSpec& task = data.train.spec();
  const std::uint64_t init = mix_seed(seed, salt_of(name));
  const TrainSpec clean = seeded(config_.clean_train, seed);

  auto finish = [&](const MultimodalModel& m, const TrainCurves& c, const std::string& file) {
    save_model(m, models / (file + ".ckpt"));
    write_curves(c, curves / (file + ".csv"));
    return Outputs{models / (file + ".ckpt"), curves / (file + ".csv")};
  };
  auto concat = [&] { return load_model(models / "concat.ckpt"); };

  if (name == "concat" || name == "mean" || name == "early") {
    MultimodalModel m = make_model(parse_head_kind(name), task, config_.arch, init);
    const TrainCurves c = train_clean(m, data.train, clean);
    return finish(m, c, name);
  }
  if (name == "gated" || name == "lel") {
    MultimodalModel m = derive_model(parse_head_kind(name), concat(), task, init);
    const TrainCurves c = train_baseline_robust(m, data.train, seeded(config_.baseline_train, seed));
    return finish(m, c, name);
  }
  if (name == "robust" || name == "robust-aligned") {
    const DetectorMode mode = name == "robust" ? DetectorMode::unaligned : DetectorMode::aligned;
    MultimodalModel m = derive_model(HeadKind::robust, concat(), task, init, mode);
    if (mode == DetectorMode::aligned) train_alignment_tails(m, data.train, clean);
    const TrainCurves c = train_robust(m, data.train, seeded(config_.robust_train, seed));
    return finish(m, c, name);
  }
  if (name == "end2end-at") {
    MultimodalModel m = make_model(HeadKind::concat, task, config_.arch, init);
    const TrainCurves c = train_end_to_end_adversarial(m, data.train, seeded(config_.adversarial_train, seed));
    return finish(m, c, name);
  }
  if (name == "oracle") {
    Outputs out;
    for (int i = 0; i < task.k; ++i) {
      MultimodalModel m =
          make_model(HeadKind::oracle, task, config_.arch, mix_seed(init, static_cast<std::uint64_t>(i)), i);
      const TrainCurves c = train_clean(m, data.train, clean);
      const Outputs o = finish(m, c, "oracle-" + std::to_string(i + 1));
      out.insert(out.end(), o.begin(), o.end());
    }
    return out;
  }
  if (name == "surrogates") {
    Outputs out;
    const MultimodalModel source = concat();
    TrainSpec spec = clean;
    spec.scope = TrainScope::fusion_only;
    for (int i = 0; i < task.k; ++i) {
      UnimodalModel u = make_unimodal(source, i, mix_seed(init, static_cast<std::uint64_t>(i)));
      const TrainCurves c = train_unimodal(u, data.train, spec);
      const std::string file = "surrogate-" + std::to_string(i + 1);
      save_unimodal(u, models / (file + ".ckpt"));
      write_curves(c, curves / (file + ".csv"));
      out.push_back(models / (file + ".ckpt"));
      out.push_back(curves / (file + ".csv"));
    }
    return out;
  }
  throw ValidationError("train: unknown model '" + name + "'");
}

void Pipeline::train() {
  for (std::uint64_t seed : config_.seeds) {
    const DatasetPair data = load_data(seed);
    for (const std::string& name : training_order()) {
      stage("train-" + name + "@" + seed_tag(seed), [&] { return train_model(name, seed, data); });
    }
  }
}

namespace {

// Evaluated models of a seed: the oracle entry expands into its k members.
struct Zoo {
  std::vector<std::pair<std::string, MultimodalModel>> models;
  std::vector<MultimodalModel> oracles;
  std::vector<UnimodalModel> surrogates;
};

Zoo load_zoo(const RunConfig& config, const fs::path& dir, int k) {
  Zoo zoo;
  for (const std::string& name : config.models) {
    if (name == "oracle") {
      for (int i = 0; i < k; ++i) zoo.oracles.push_back(load_model(dir / ("oracle-" + std::to_string(i + 1) + ".ckpt")));
    } else {
      zoo.models.emplace_back(name, load_model(dir / (name + ".ckpt")));
    }
  }
  if (has_kind(config, "transfer")) {
    for (int i = 0; i < k; ++i) {
      zoo.surrogates.push_back(load_unimodal(dir / ("surrogate-" + std::to_string(i + 1) + ".ckpt")));
    }
  }
  return zoo;
}

fs::path attack_file(const fs::path& dir, const std::string& model, int modality) {
  return dir / (model + "-m" + std::to_string(modality + 1) + ".atk");
}

}  // namespace

void Pipeline::attack() {
  const EvalOptions options{config_.eval_batch, config_.jobs};
  for (std::uint64_t seed : config_.seeds) {
    stage("attack@" + seed_tag(seed), [&] {
      const DatasetPair data = load_data(seed);
      for (const std::string& name : training_order()) require("train-" + name + "@" + seed_tag(seed));
      const int k = data.test.modalities();
      const Zoo zoo = load_zoo(config_, seed_dir(seed) / "models", k);
      const fs::path dir = seed_dir(seed) / "attacks";
      fs::create_directories(dir);
      AttackSpec spec = config_.attack;
      spec.seed = mix_seed(config_.attack.seed, seed);
      Outputs out;
      for (const auto& [name, model] : zoo.models) {
        for (int i = 0; i < k; ++i) {
          save_attack_result(attack_test_set(model, data.test, spec, i, options), attack_file(dir, name, i));
          out.push_back(attack_file(dir, name, i));
        }
      }
      for (int i = 0; i < static_cast<int>(zoo.oracles.size()); ++i) {
        save_attack_result(attack_test_set(zoo.oracles[static_cast<std::size_t>(i)], data.test, spec, i, options),
                           attack_file(dir, "oracle", i));
        out.push_back(attack_file(dir, "oracle", i));
      }
      return out;
    });
  }
}

SeedResult Pipeline::evaluate_seed(std::uint64_t seed) {
  const EvalOptions options{config_.eval_batch, config_.jobs};
  const DatasetPair data = load_data(seed);
  require("attack@" + seed_tag(seed));
  for (const std::string& name : training_order()) require("train-" + name + "@" + seed_tag(seed));
  const Dataset& test = data.test;
  const int k = test.modalities();
  const Zoo zoo = load_zoo(config_, seed_dir(seed) / "models", k);
  const fs::path dir = seed_dir(seed) / "attacks";
  AttackSpec spec = config_.attack;
  spec.seed = mix_seed(config_.attack.seed, seed);

  SeedResult result;
  result.seed = seed;
  for (const auto& [name, model] : zoo.models) {
    spdlog::debug("evaluate {} @ seed {}", name, seed);
    ModelResult r;
    r.name = name;
    r.role = role_of(name);
    r.clean = evaluate_clean(model, test, options);
    std::vector<AttackResult> adaptive;
    for (int i = 0; i < k; ++i) {
      adaptive.push_back(load_attack_result(attack_file(dir, name, i)));
      r.robust[AttackKind::adaptive].push_back(attacked_accuracy(model, test, adaptive.back(), options));
    }
    if (has_kind(config_, "transfer")) {
      r.robust[AttackKind::transfer] = evaluate_transfer(zoo.surrogates, model, test, spec, options);
    }
    if (has_kind(config_, "feature") && model.has_features()) {
      r.robust[AttackKind::feature] = evaluate_feature(model, test, spec, options);
    }
    if (has_kind(config_, "targeted")) {
      r.robust[AttackKind::targeted] = evaluate_targeted(model, test, spec, options).accuracy;
    }
    if (model.head == HeadKind::robust) r.detection = detection_from_results(model, test, adaptive, options);
    result.models.push_back(std::move(r));
  }
  if (!zoo.oracles.empty()) {
    ModelResult r;
    r.name = "oracle";
    r.role = ModelRole::reference;
    double clean_sum = 0.0;
    for (int i = 0; i < k; ++i) {
      const MultimodalModel& oracle = zoo.oracles[static_cast<std::size_t>(i)];
      const double clean = evaluate_clean(oracle, test, options);
      const double attacked = attacked_accuracy(oracle, test, load_attack_result(attack_file(dir, "oracle", i)), options);
      // The oracle never reads the attacked modality.
      if (attacked != clean) {
        throw InvariantError("oracle(-" + std::to_string(i + 1) + ") accuracy moved under attack on its ignored modality");
      }
      clean_sum += clean;
      r.robust[AttackKind::adaptive].push_back(attacked);
      if (has_kind(config_, "transfer")) {
        r.robust[AttackKind::transfer].push_back(
            evaluate_transfer(zoo.surrogates, oracle, test, spec, options)[static_cast<std::size_t>(i)]);
      }
      if (has_kind(config_, "targeted")) {
        r.robust[AttackKind::targeted].push_back(
            evaluate_targeted(oracle, test, spec, options).accuracy[static_cast<std::size_t>(i)]);
      }
    }
    r.clean = clean_sum / static_cast<double>(k);
    result.models.push_back(std::move(r));
  }
  return result;
}

void Pipeline::evaluate() {
  for (std::uint64_t seed : config_.seeds) {
    stage("evaluate@" + seed_tag(seed), [&] {
      const fs::path path = seed_dir(seed) / "results.json";
      write_file_atomic(path, to_json(evaluate_seed(seed)).dump(2) + "\n");
      return Outputs{path};
    });
  }
}

ReportFiles Pipeline::report() {
  ReportFiles files{root_ / "report.json", root_ / "tables.csv", {}};
  stage("report", [&] {
    std::vector<SeedResult> runs;
    for (std::uint64_t seed : config_.seeds) {
      require("evaluate@" + seed_tag(seed));
      const fs::path path = seed_dir(seed) / "results.json";
      const auto bytes = read_file_bytes(path);
      Json j;
      try {
        j = Json::parse(std::string(bytes.begin(), bytes.end()));
      } catch (const nlohmann::json::parse_error& e) {
        throw StageError("evaluate@" + seed_tag(seed), std::string("corrupt results: ") + e.what());
      }
      runs.push_back(seed_result_from_json(j));
    }
    write_report(build_report(std::move(runs), hash_), root_);
    return Outputs{files.json, files.csv};
  });
  files.json_sha256 = file_hash(files.json);
  return files;
}

ReportFiles Pipeline::reproduce() {
  generate_data();
  train();
  attack();
  evaluate();
  return report();
}

}  // namespace oodlab
