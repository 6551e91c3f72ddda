#include "oodlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"
#include "oodlab/seeding.hpp"

namespace oodlab {

const char* attack_kind_name(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::adaptive: return "adaptive";
    case AttackKind::transfer: return "transfer";
    case AttackKind::feature: return "feature";
    case AttackKind::targeted: return "targeted";
  }
  return "?";
}

AttackKind parse_attack_kind(std::string_view name) {
  for (AttackKind k : {AttackKind::adaptive, AttackKind::transfer, AttackKind::feature, AttackKind::targeted}) {
    if (name == attack_kind_name(k)) return k;
  }
  throw ValidationError("unknown attack kind '" + std::string(name) + "'");
}

const char* model_role_name(ModelRole role) noexcept {
  switch (role) {
    case ModelRole::standard: return "standard";
    case ModelRole::robust_baseline: return "robust_baseline";
    case ModelRole::robust: return "robust";
    case ModelRole::reference: return "reference";
  }
  return "?";
}

namespace {

ModelRole parse_role(std::string_view name) {
  for (ModelRole r : {ModelRole::standard, ModelRole::robust_baseline, ModelRole::robust, ModelRole::reference}) {
    if (name == model_role_name(r)) return r;
  }
  throw ValidationError("unknown model role '" + std::string(name) + "'");
}

// Runs fn(b, batch) for each batch of `test`, possibly on several threads,
// and returns the results in batch order.
template <typename T>
std::vector<T> over_batches(const Dataset& test, const EvalOptions& options,
                            const std::function<T(std::size_t, const Batch&)>& fn) {
  if (options.batch_size == 0) throw ValidationError("eval: batch_size must be positive");
  if (options.jobs < 1) throw ValidationError("eval: jobs must be at least 1");
  const std::size_t n = test.size();
  const std::size_t count = (n + options.batch_size - 1) / options.batch_size;
  std::vector<T> out(count);
  auto run = [&](std::size_t b) {
    const std::size_t begin = b * options.batch_size;
    out[b] = fn(b, test.rows(begin, std::min(n, begin + options.batch_size)));
  };
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(options.jobs), count);
  if (jobs <= 1) {
    for (std::size_t b = 0; b < count; ++b) run(b);
    return out;
  }
  std::exception_ptr failure;
  std::mutex mutex;
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < jobs; ++w) {
    workers.emplace_back([&, w] {
      for (std::size_t b = w; b < count; b += jobs) {
        try {
          run(b);
        } catch (...) {
          std::lock_guard lock(mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    });
  }
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

struct Hits {
  std::size_t correct = 0;
  std::size_t total = 0;
};

double ratio(const std::vector<Hits>& parts) {
  std::size_t c = 0, t = 0;
  for (const Hits& h : parts) {
    c += h.correct;
    t += h.total;
  }
  return t == 0 ? 0.0 : static_cast<double>(c) / static_cast<double>(t);
}

Hits score(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  Hits h;
  h.total = labels.size();
  for (std::size_t r = 0; r < labels.size(); ++r) h.correct += pred[r] == labels[r] ? 1 : 0;
  return h;
}

AttackSpec per_modality(const AttackSpec& attack, int modality, std::size_t batch_index) {
  AttackSpec s = attack;
  s.modality = modality;
  s.seed = mix_seed(mix_seed(attack.seed, static_cast<std::uint64_t>(modality)), batch_index);
  return s;
}

std::vector<int> detector_arms(const MultimodalModel& model, const Batch& batch) {
  Graph graph(false);
  std::vector<Var> xs;
  for (const Tensor& t : batch.inputs) xs.push_back(graph.constant(t));
  const std::vector<Var> z = extract(model, graph, xs);
  return argmax_rows(graph.value(odd_one_out(model, graph, z)));
}

void check_test(const MultimodalModel& model, const Dataset& test) {
  if (test.modalities() != model.k) throw ValidationError("eval: dataset modality count differs from model");
  if (test.size() == 0) throw ValidationError("eval: empty test set");
}

}  // namespace

double accuracy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rows() != labels.size()) throw ValidationError("accuracy: row count mismatch");
  if (labels.empty()) return 0.0;
  const Hits h = score(logits, labels);
  return static_cast<double>(h.correct) / static_cast<double>(h.total);
}

double evaluate_clean(const MultimodalModel& model, const Dataset& test, const EvalOptions& options) {
  check_test(model, test);
  return ratio(over_batches<Hits>(test, options, [&](std::size_t, const Batch& b) {
    return score(predict(model, b), b.labels);
  }));
}

AttackResult attack_test_set(const MultimodalModel& model, const Dataset& test, const AttackSpec& attack,
                             int modality, const EvalOptions& options) {
  check_test(model, test);
  const auto parts = over_batches<AttackResult>(test, options, [&](std::size_t bi, const Batch& b) {
    AttackResult r = pgd_single_source(model, b, per_modality(attack, modality, bi));
    if (model.head == HeadKind::robust) r.detector_verdict = detector_arms(model, apply_attack(b, r));
    return r;
  });
  AttackResult out;
  out.modality = modality;
  out.level = AttackLevel::input;
  out.iterations = parts.front().iterations;
  std::vector<double> origin, payload;
  for (const AttackResult& r : parts) {
    origin.insert(origin.end(), r.origin.values().begin(), r.origin.values().end());
    payload.insert(payload.end(), r.payload.values().begin(), r.payload.values().end());
    out.initial_loss.insert(out.initial_loss.end(), r.initial_loss.begin(), r.initial_loss.end());
    out.achieved_loss.insert(out.achieved_loss.end(), r.achieved_loss.begin(), r.achieved_loss.end());
    out.detector_verdict.insert(out.detector_verdict.end(), r.detector_verdict.begin(), r.detector_verdict.end());
  }
  const std::size_t cols = test.modality(modality).cols();
  out.origin = Tensor({test.size(), cols}, std::move(origin));
  out.payload = Tensor({test.size(), cols}, std::move(payload));
  return out;
}

double attacked_accuracy(const MultimodalModel& model, const Dataset& test, const AttackResult& result,
                         const EvalOptions& options) {
  check_test(model, test);
  if (result.level != AttackLevel::input || result.payload.rows() != test.size() || result.modality < 0 ||
      result.modality >= model.k) {
    throw ValidationError("attacked_accuracy: result does not match the test set");
  }
  return ratio(over_batches<Hits>(test, options, [&](std::size_t bi, const Batch& b) {
    Batch view = b;
    const std::size_t begin = bi * options.batch_size;
    view.inputs[static_cast<std::size_t>(result.modality)] = result.payload.slice_rows(begin, begin + b.size());
    return score(predict(model, view), view.labels);
  }));
}

std::vector<double> evaluate_robust(const MultimodalModel& model, const Dataset& test,
                                    const AttackSpec& attack, const EvalOptions& options) {
  check_test(model, test);
  std::vector<double> out;
  for (int i = 0; i < model.k; ++i) {
    out.push_back(attacked_accuracy(model, test, attack_test_set(model, test, attack, i, options), options));
  }
  return out;
}

std::vector<double> evaluate_transfer(const std::vector<UnimodalModel>& surrogates,
                                      const MultimodalModel& target, const Dataset& test,
                                      const AttackSpec& attack, const EvalOptions& options) {
  check_test(target, test);
  if (surrogates.size() != static_cast<std::size_t>(target.k)) {
    throw ValidationError("evaluate_transfer: one surrogate per modality required");
  }
  std::vector<double> out;
  for (int i = 0; i < target.k; ++i) {
    const UnimodalModel& surrogate = surrogates[static_cast<std::size_t>(i)];
    out.push_back(ratio(over_batches<Hits>(test, options, [&](std::size_t bi, const Batch& b) {
      const AttackResult r = transfer_attack(surrogate, target, b, per_modality(attack, i, bi));
      return score(predict(target, apply_attack(b, r)), b.labels);
    })));
  }
  return out;
}

std::vector<double> evaluate_feature(const MultimodalModel& model, const Dataset& test,
                                     const AttackSpec& attack, const EvalOptions& options) {
  check_test(model, test);
  AttackSpec base = attack;
  base.level = AttackLevel::feature;
  std::vector<double> out;
  for (int i = 0; i < model.k; ++i) {
    out.push_back(ratio(over_batches<Hits>(test, options, [&](std::size_t bi, const Batch& b) {
      const AttackResult r = feature_attack(model, b, per_modality(base, i, bi));
      return score(predict_with_features(model, b, r), b.labels);
    })));
  }
  return out;
}

TargetedEval evaluate_targeted(const MultimodalModel& model, const Dataset& test,
                               const AttackSpec& attack, const EvalOptions& options) {
  check_test(model, test);
  TargetedEval out;
  for (int i = 0; i < model.k; ++i) {
    using Pair = std::pair<Hits, Hits>;
    const auto parts = over_batches<Pair>(test, options, [&](std::size_t bi, const Batch& b) {
      const AttackSpec s = per_modality(attack, i, bi);
      const auto targets = sample_targets(b.labels, model.classes, s.seed);
      const Tensor logits = predict(model, apply_attack(b, targeted_attack(model, b, targets, s)));
      return Pair{score(logits, b.labels), score(logits, targets)};
    });
    std::vector<Hits> acc, hit;
    for (const auto& [a, t] : parts) {
      acc.push_back(a);
      hit.push_back(t);
    }
    out.accuracy.push_back(ratio(acc));
    out.success_rate.push_back(ratio(hit));
  }
  return out;
}

DetectionResult DetectionResult::from_confusion(std::vector<std::vector<std::size_t>> confusion) {
  DetectionResult d;
  d.k = static_cast<int>(confusion.size()) - 1;
  if (d.k < 1) throw ValidationError("detection: need at least two conditions");
  for (const auto& row : confusion) {
    if (row.size() != confusion.size()) throw DimensionError("detection: confusion matrix must be square");
  }
  double sum = 0.0;
  for (std::size_t c = 0; c < confusion.size(); ++c) {
    std::size_t total = 0;
    for (std::size_t v : confusion[c]) total += v;
    const double rate = total == 0 ? 0.0 : static_cast<double>(confusion[c][c]) / static_cast<double>(total);
    d.rates.push_back(rate);
    sum += rate;
  }
  d.pooled = sum / static_cast<double>(d.rates.size());
  d.confusion = std::move(confusion);
  return d;
}

DetectionResult detection_from_results(const MultimodalModel& robust, const Dataset& test,
                                       const std::vector<AttackResult>& results, const EvalOptions& options) {
  if (robust.head != HeadKind::robust) throw ValidationError("detection: model has no odd-one-out detector");
  check_test(robust, test);
  if (results.size() != static_cast<std::size_t>(robust.k)) {
    throw ValidationError("detection: one attack result per modality required");
  }
  const auto size = static_cast<std::size_t>(robust.k) + 1;
  std::vector<std::vector<std::size_t>> confusion(size, std::vector<std::size_t>(size, 0));
  const auto clean = over_batches<std::vector<int>>(
      test, options, [&](std::size_t, const Batch& b) { return detector_arms(robust, b); });
  for (const auto& arms : clean) {
    for (int arm : arms) ++confusion[size - 1][static_cast<std::size_t>(arm)];
  }
  for (std::size_t i = 0; i < results.size(); ++i) {
    const AttackResult& r = results[i];
    if (r.modality != static_cast<int>(i) || r.detector_verdict.size() != test.size()) {
      throw ValidationError("detection: attack result " + std::to_string(i) + " lacks detector verdicts");
    }
    for (int arm : r.detector_verdict) ++confusion[i][static_cast<std::size_t>(arm)];
  }
  return DetectionResult::from_confusion(std::move(confusion));
}

DetectionResult detection_rate(const MultimodalModel& robust, const Dataset& test,
                               const AttackSpec& attack, const EvalOptions& options) {
  if (robust.head != HeadKind::robust) throw ValidationError("detection_rate: model has no odd-one-out detector");
  std::vector<AttackResult> results;
  for (int i = 0; i < robust.k; ++i) results.push_back(attack_test_set(robust, test, attack, i, options));
  return detection_from_results(robust, test, results, options);
}

std::vector<double> oracle_bound(const std::vector<MultimodalModel>& oracles, const Dataset& test,
                                 const AttackSpec& attack, const EvalOptions& options) {
  std::vector<double> out;
  for (std::size_t i = 0; i < oracles.size(); ++i) {
    const MultimodalModel& oracle = oracles[i];
    if (oracle.head != HeadKind::oracle || oracle.excluded != static_cast<int>(i)) {
      throw ValidationError("oracle_bound: entry " + std::to_string(i) + " must be oracle(-" +
                            std::to_string(i + 1) + ")");
    }
    check_test(oracle, test);
    out.push_back(ratio(over_batches<Hits>(test, options, [&](std::size_t bi, const Batch& b) {
      const AttackSpec s = per_modality(attack, static_cast<int>(i), bi);
      if (s.epsilon == 0.0) return score(predict(oracle, b), b.labels);
      return score(predict(oracle, apply_attack(b, pgd_single_source(oracle, b, s))), b.labels);
    })));
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string condition_name(std::size_t c, int k) {
  return c == static_cast<std::size_t>(k) ? "clean" : std::to_string(c + 1);
}

// Flattens one model's measurements into summary cells.
std::map<std::string, double> cells_of(const ModelResult& m) {
  std::map<std::string, double> cells;
  cells["clean"] = m.clean;
  for (const auto& [kind, accs] : m.robust) {
    for (std::size_t i = 0; i < accs.size(); ++i) {
      cells[std::string(attack_kind_name(kind)) + "/" + std::to_string(i + 1)] = accs[i];
    }
  }
  if (m.detection) {
    for (std::size_t c = 0; c < m.detection->rates.size(); ++c) {
      cells["detection/" + condition_name(c, m.detection->k)] = m.detection->rates[c];
    }
    cells["detection/pooled"] = m.detection->pooled;
  }
  return cells;
}

bool is_delta_cell(const std::string& cell) {
  return cell == "clean" || cell.rfind("adaptive/", 0) == 0 || cell.rfind("transfer/", 0) == 0 ||
         cell.rfind("feature/", 0) == 0 || cell.rfind("targeted/", 0) == 0;
}

SummaryStat summarize(const std::vector<double>& xs) {
  SummaryStat s;
  s.n = xs.size();
  if (xs.empty()) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(xs.size());
  double sq = 0.0;
  for (double x : xs) sq += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(xs.size()));
  return s;
}

void check_unit(double v, const std::string& what) {
  if (!(v >= 0.0 && v <= 1.0)) throw InvariantError("report: " + what + " outside [0, 1]");
}

}  // namespace

EvalReport build_report(std::vector<SeedResult> runs, const std::string& config_hash) {
  if (runs.empty()) throw ValidationError("build_report: no runs");
  for (const SeedResult& r : runs) {
    if (r.models.empty()) throw ValidationError("build_report: empty model set");
  }
  const auto& reference = runs.front().models;
  for (const SeedResult& r : runs) {
    if (r.models.size() != reference.size()) throw ValidationError("build_report: model sets differ across seeds");
    for (std::size_t i = 0; i < reference.size(); ++i) {
      if (r.models[i].name != reference[i].name || r.models[i].role != reference[i].role) {
        throw ValidationError("build_report: model sets differ across seeds");
      }
    }
  }

  EvalReport report;
  report.config_hash = config_hash;
  std::map<std::string, std::map<std::string, std::vector<double>>> samples;
  for (const SeedResult& r : runs) {
    report.seeds.push_back(r.seed);
    for (const ModelResult& m : r.models) {
      for (const auto& [cell, v] : cells_of(m)) {
        check_unit(v, m.name + " " + cell);
        samples[m.name][cell].push_back(v);
      }
      if (m.detection) {
        const auto& conf = m.detection->confusion;
        std::size_t expected = 0;
        for (std::size_t v : conf.back()) expected += v;
        for (const auto& row : conf) {
          std::size_t s = 0;
          for (std::size_t v : row) s += v;
          if (s != expected) throw InvariantError("report: confusion rows of " + m.name + " differ in count");
        }
      }
    }
  }
  for (const auto& [name, cells] : samples) {
    for (const auto& [cell, xs] : cells) report.summary[name][cell] = summarize(xs);
  }

  // Delta rows: robust model against the best competitor of a role, per cell.
  const ModelResult* robust = nullptr;
  for (const ModelResult& m : reference) {
    if (m.role == ModelRole::robust) {
      robust = &m;
      break;
    }
  }
  std::vector<std::string> all_cells;
  for (const auto& [name, cells] : report.summary) {
    for (const auto& [cell, stat] : cells) {
      if (is_delta_cell(cell) &&
          std::find(all_cells.begin(), all_cells.end(), cell) == all_cells.end()) {
        all_cells.push_back(cell);
      }
    }
  }
  auto delta = [&](ModelRole competitor, const std::string& cell) -> std::optional<double> {
    if (!robust) return std::nullopt;
    const auto& mine = report.summary.at(robust->name);
    auto it = mine.find(cell);
    if (it == mine.end()) return std::nullopt;
    std::optional<double> best;
    for (const ModelResult& m : reference) {
      if (m.role != competitor) continue;
      const auto& theirs = report.summary.at(m.name);
      auto jt = theirs.find(cell);
      if (jt == theirs.end()) continue;
      best = best ? std::max(*best, jt->second.mean) : jt->second.mean;
    }
    if (!best) return std::nullopt;
    return it->second.mean - *best;
  };
  for (const std::string& cell : all_cells) {
    report.delta_clean[cell] = delta(ModelRole::standard, cell);
    report.delta_robust[cell] = delta(ModelRole::robust_baseline, cell);
  }
  report.runs = std::move(runs);
  return report;
}

namespace {

Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

Json to_json(const DetectionResult& d) {
  return Json{{"k", d.k}, {"confusion", d.confusion}, {"rates", d.rates}, {"pooled", d.pooled}};
}

Json to_json(const ModelResult& m) {
  Json robust = Json::object();
  for (const auto& [kind, accs] : m.robust) robust[attack_kind_name(kind)] = accs;
  Json j{{"name", m.name}, {"role", model_role_name(m.role)}, {"clean", m.clean}, {"robust", robust}};
  j["detection"] = m.detection ? to_json(*m.detection) : Json(nullptr);
  return j;
}

}  // namespace

Json to_json(const SeedResult& s) {
  Json models = Json::array();
  for (const ModelResult& m : s.models) models.push_back(to_json(m));
  return Json{{"seed", s.seed}, {"models", models}};
}

SeedResult seed_result_from_json(const Json& s) {
  try {
    SeedResult sr;
    sr.seed = s.at("seed").get<std::uint64_t>();
    for (const Json& m : s.at("models")) {
      ModelResult mr;
      mr.name = m.at("name").get<std::string>();
      mr.role = parse_role(m.at("role").get<std::string>());
      mr.clean = m.at("clean").get<double>();
      for (const auto& [kind, accs] : m.at("robust").items()) {
        mr.robust[parse_attack_kind(kind)] = accs.get<std::vector<double>>();
      }
      if (!m.at("detection").is_null()) {
        mr.detection = DetectionResult::from_confusion(
            m.at("detection").at("confusion").get<std::vector<std::vector<std::size_t>>>());
      }
      sr.models.push_back(std::move(mr));
    }
    return sr;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("seed result: ") + e.what());
  }
}

namespace {

Json report_to_json(const EvalReport& r) {
  Json runs = Json::array();
  for (const SeedResult& s : r.runs) runs.push_back(to_json(s));
  Json summary = Json::object();
  for (const auto& [name, cells] : r.summary) {
    for (const auto& [cell, st] : cells) {
      summary[name][cell] = Json{{"mean", st.mean}, {"std", st.std}, {"n", st.n}};
    }
  }
  Json dc = Json::object(), dr = Json::object();
  for (const auto& [cell, v] : r.delta_clean) dc[cell] = optional_json(v);
  for (const auto& [cell, v] : r.delta_robust) dr[cell] = optional_json(v);
  return Json{{"config_hash", r.config_hash},
              {"seeds", r.seeds},
              {"runs", runs},
              {"summary", summary},
              {"delta_clean", dc},
              {"delta_robust", dr}};
}

std::map<std::string, std::optional<double>> deltas_from_json(const Json& j) {
  std::map<std::string, std::optional<double>> out;
  for (const auto& [cell, v] : j.items()) {
    out[cell] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
  }
  return out;
}

}  // namespace

std::string report_json_text(const EvalReport& report) { return report_to_json(report).dump(2) + "\n"; }

EvalReport report_from_json(const Json& j) {
  try {
    EvalReport r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    for (const Json& s : j.at("runs")) r.runs.push_back(seed_result_from_json(s));
    for (const auto& [name, cells] : j.at("summary").items()) {
      for (const auto& [cell, st] : cells.items()) {
        r.summary[name][cell] = {st.at("mean").get<double>(), st.at("std").get<double>(),
                                 st.at("n").get<std::size_t>()};
      }
    }
    r.delta_clean = deltas_from_json(j.at("delta_clean"));
    r.delta_robust = deltas_from_json(j.at("delta_robust"));
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("report: ") + e.what());
  }
}

std::string report_csv_text(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "model,modality,attack,metric,mean,std,n\n";
  auto row = [&](const std::string& model, const std::string& modality, const std::string& attack,
                 const std::string& metric, const SummaryStat& st) {
    out << model << ',' << modality << ',' << attack << ',' << metric << ',' << st.mean << ',' << st.std << ','
        << st.n << '\n';
  };
  for (const auto& [name, cells] : report.summary) {
    for (const auto& [cell, st] : cells) {
      if (cell == "clean") {
        row(name, "clean", "none", "accuracy", st);
        continue;
      }
      const auto slash = cell.find('/');
      const std::string head = cell.substr(0, slash), tail = cell.substr(slash + 1);
      if (head == "detection") {
        row(name, tail, "adaptive", "detection_rate", st);
      } else {
        row(name, tail, head, "accuracy", st);
      }
    }
  }
  auto delta_rows = [&](const std::map<std::string, std::optional<double>>& deltas, const std::string& metric) {
    for (const auto& [cell, v] : deltas) {
      const auto slash = cell.find('/');
      const std::string modality = slash == std::string::npos ? "clean" : cell.substr(slash + 1);
      const std::string attack = slash == std::string::npos ? "none" : cell.substr(0, slash);
      out << metric << ',' << modality << ',' << attack << ",accuracy,";
      if (v) {
        out << *v;
      } else {
        out << "null";
      }
      out << ",,\n";
    }
  };
  delta_rows(report.delta_clean, "delta-clean");
  delta_rows(report.delta_robust, "delta-robust");
  return out.str();
}

ReportFiles write_report(const EvalReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  ReportFiles files{dir / "report.json", dir / "tables.csv", {}};
  const std::string text = report_json_text(report);
  write_file_atomic(files.json, text);
  write_file_atomic(files.csv, report_csv_text(report));
  files.json_sha256 = sha256_hex(text);
  return files;
}

}  // namespace oodlab
