#include "oodlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"

namespace oodlab {

double AttackSpec::effective_step_size() const {
  if (step_size) return *step_size;
  return steps > 0 ? 2.5 * epsilon / static_cast<double>(steps) : 0.0;
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) {
    throw ValidationError("attack: epsilon must be finite and non-negative");
  }
  if (steps < 1) throw ValidationError("attack: steps must be at least 1");
  if (step_size && !(*step_size > 0.0)) throw ValidationError("attack: step_size must be positive");
  if (modality < 0) throw ValidationError("attack: modality index must be non-negative");
  if (clip && !(clip->first < clip->second)) throw ValidationError("attack: empty clip range");
}

Json to_json(const AttackSpec& s) {
  Json j{{"modality", s.modality},
         {"epsilon", s.epsilon},
         {"steps", s.steps},
         {"random_start", s.random_start},
         {"objective", s.objective == Objective::untargeted ? "untargeted" : "targeted"},
         {"level", s.level == AttackLevel::input ? "input" : "feature"},
         {"keep_best", s.keep_best},
         {"seed", s.seed}};
  j["step_size"] = s.step_size ? Json(*s.step_size) : Json(nullptr);
  j["clip"] = s.clip ? Json::array({s.clip->first, s.clip->second}) : Json(nullptr);
  return j;
}

AttackSpec attack_spec_from_json(const Json& j) {
  constexpr std::string_view where = "attack";
  reject_unknown_keys(j,
                      {"modality", "epsilon", "steps", "step_size", "random_start", "objective",
                       "level", "keep_best", "clip", "seed"},
                      where);
  AttackSpec s;
  s.modality = json_get(j, "modality", s.modality, where);
  s.epsilon = json_get(j, "epsilon", s.epsilon, where);
  s.steps = json_get(j, "steps", s.steps, where);
  if (j.contains("step_size") && !j.at("step_size").is_null()) {
    s.step_size = json_require<double>(j, "step_size", where);
  }
  s.random_start = json_get(j, "random_start", s.random_start, where);
  const auto objective = json_get<std::string>(j, "objective", "untargeted", where);
  if (objective != "untargeted" && objective != "targeted") {
    throw ValidationError("attack.objective: expected untargeted|targeted");
  }
  s.objective = objective == "targeted" ? Objective::targeted : Objective::untargeted;
  const auto level = json_get<std::string>(j, "level", "input", where);
  if (level != "input" && level != "feature") throw ValidationError("attack.level: expected input|feature");
  s.level = level == "feature" ? AttackLevel::feature : AttackLevel::input;
  s.keep_best = json_get(j, "keep_best", s.keep_best, where);
  if (j.contains("clip") && !j.at("clip").is_null()) {
    const auto c = json_require<std::vector<double>>(j, "clip", where);
    if (c.size() != 2) throw ValidationError("attack.clip: expected [lo, hi]");
    s.clip = std::make_pair(c[0], c[1]);
  }
  s.seed = json_get(j, "seed", s.seed, where);
  s.validate();
  return s;
}

double AttackResult::linf_distance() const {
  double worst = 0.0;
  for (std::size_t i = 0; i < payload.size(); ++i) {
    worst = std::max(worst, std::abs(payload[i] - origin[i]));
  }
  return worst;
}

namespace {

struct Evaluation {
  std::vector<double> loss;  // CE against labels, per row
  std::vector<double> grad;  // d sum(loss) / d payload; empty when not requested
};

Evaluation evaluate(const Tensor& payload, const LogitsFn& logits_fn, std::span<const int> labels,
                    bool with_grad) {
  Graph graph(false);
  Var x = graph.input(payload, with_grad);
  Var logits = logits_fn(graph, x);
  Evaluation e;
  e.loss = cross_entropy_rows(graph.value(logits), labels);
  if (with_grad) {
    Var total = graph.scale(cross_entropy(graph, logits, labels), static_cast<double>(labels.size()));
    graph.backward(total);
    e.grad = graph.grad(x);
  }
  return e;
}

void check_finite(const std::vector<double>& loss, int step) {
  for (double v : loss) {
    if (!std::isfinite(v)) {
      throw NumericError("pgd: non-finite loss at step " + std::to_string(step));
    }
  }
}

void project(Tensor& delta, const Tensor& origin, const AttackSpec& spec) {
  for (std::size_t j = 0; j < delta.size(); ++j) {
    double d = std::clamp(delta[j], -spec.epsilon, spec.epsilon);
    if (spec.clip) {
      const double x = std::clamp(origin[j] + d, spec.clip->first, spec.clip->second);
      d = std::clamp(x - origin[j], -spec.epsilon, spec.epsilon);
    }
    delta[j] = d;
  }
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

// Greater is better for the attacker.
bool improves(double candidate, double incumbent, Objective objective) {
  return objective == Objective::untargeted ? candidate > incumbent : candidate < incumbent;
}

}  // namespace

AttackResult run_pgd(const Tensor& origin, const LogitsFn& logits_fn, std::span<const int> labels,
                     const AttackSpec& spec, const PgdHooks& hooks) {
  spec.validate();
  if (labels.size() != origin.rows()) throw ValidationError("pgd: label count mismatch");
  const std::size_t rows = origin.rows(), cols = origin.cols();

  AttackResult result;
  result.modality = spec.modality;
  result.level = spec.level;
  result.origin = origin;
  if (spec.objective == Objective::targeted) result.targets.assign(labels.begin(), labels.end());

  const bool starts_clean = !spec.random_start && !hooks.warm_start;
  Evaluation clean = evaluate(origin, logits_fn, labels, spec.epsilon > 0.0 && starts_clean);
  check_finite(clean.loss, 0);
  result.initial_loss = clean.loss;
  if (spec.epsilon == 0.0) {
    result.payload = origin;
    result.achieved_loss = clean.loss;
    return result;
  }

  Tensor best = origin;
  std::vector<double> best_loss = clean.loss;
  auto keep = [&](const Tensor& payload, const std::vector<double>& loss) {
    for (std::size_t r = 0; r < rows; ++r) {
      if (improves(loss[r], best_loss[r], spec.objective)) {
        best_loss[r] = loss[r];
        std::copy_n(payload.values().begin() + static_cast<std::ptrdiff_t>(r * cols), cols,
                    best.values().begin() + static_cast<std::ptrdiff_t>(r * cols));
      }
    }
  };

  Tensor delta(origin.shape(), 0.0);
  std::optional<Evaluation> current;
  if (hooks.warm_start) {
    if (hooks.warm_start->shape() != origin.shape()) throw DimensionError("pgd: warm start shape mismatch");
    for (std::size_t j = 0; j < delta.size(); ++j) delta[j] = (*hooks.warm_start)[j] - origin[j];
    project(delta, origin, spec);
  } else if (spec.random_start) {
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(spec.modality), 0x5067u};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> dist(-spec.epsilon, spec.epsilon);
    for (double& d : delta.values()) d = dist(rng);
    project(delta, origin, spec);
  } else {
    current = std::move(clean);
  }
  if (hooks.observer) hooks.observer(0, delta);

  const double alpha = spec.effective_step_size();
  const double direction = spec.objective == Objective::untargeted ? 1.0 : -1.0;
  for (int step = 0; step < spec.steps; ++step) {
    Tensor payload = add(origin, delta);
    if (!current) {
      current = evaluate(payload, logits_fn, labels, true);
      check_finite(current->loss, step);
      keep(payload, current->loss);
    }
    const std::vector<double>& g = current->grad;
    for (std::size_t j = 0; j < delta.size(); ++j) {
      const double s = g[j] > 0.0 ? 1.0 : (g[j] < 0.0 ? -1.0 : 0.0);
      delta[j] += direction * alpha * s;
    }
    project(delta, origin, spec);
    if (hooks.observer) hooks.observer(step + 1, delta);
    current.reset();
  }

  Tensor final_payload = add(origin, delta);
  Evaluation last = evaluate(final_payload, logits_fn, labels, false);
  check_finite(last.loss, spec.steps);
  keep(final_payload, last.loss);
  result.iterations = spec.steps;

  if (spec.keep_best) {
    result.payload = std::move(best);
    result.achieved_loss = std::move(best_loss);
  } else {
    result.payload = std::move(final_payload);
    result.achieved_loss = std::move(last.loss);
  }
  return result;
}

namespace {

void check_modality(const MultimodalModel& model, const AttackSpec& spec) {
  if (spec.modality >= model.k) {
    throw ValidationError("attack: modality " + std::to_string(spec.modality) + " out of range for k = " +
                          std::to_string(model.k));
  }
}

// Logits of `model` with input x_i replaced by the graph variable, other
// modalities fixed. Clean feature blocks are computed once up front.
LogitsFn input_logits_fn(const MultimodalModel& model, const Batch& batch, int modality) {
  const auto i = static_cast<std::size_t>(modality);
  if (!model.has_features()) {
    return [&model, &batch, i](Graph& g, Var x) {
      std::vector<Var> xs;
      for (std::size_t j = 0; j < batch.inputs.size(); ++j) {
        xs.push_back(j == i ? x : g.constant(batch.inputs[j]));
      }
      return predict(model, g, xs);
    };
  }
  auto clean = std::make_shared<std::vector<Tensor>>(extract_values(model, batch));
  return [&model, clean, i](Graph& g, Var x) {
    std::vector<Var> z;
    for (std::size_t j = 0; j < clean->size(); ++j) {
      if (j != i) {
        z.push_back(g.constant((*clean)[j]));
      } else if (model.extractors[j].empty()) {
        z.push_back(g.constant((*clean)[j]));
      } else {
        z.push_back(model.extractors[j].forward(g, x));
      }
    }
    return head_forward(model, g, z).logits;
  };
}

}  // namespace

AttackResult pgd_single_source(const MultimodalModel& model, const Batch& batch,
                               const AttackSpec& spec, const PgdHooks& hooks) {
  if (spec.level != AttackLevel::input) throw ValidationError("pgd_single_source: spec.level must be input");
  check_modality(model, spec);
  const LogitsFn fn = input_logits_fn(model, batch, spec.modality);
  if (spec.objective == Objective::targeted) {
    throw ValidationError("pgd_single_source: use targeted_attack for targeted objectives");
  }
  return run_pgd(batch.inputs[static_cast<std::size_t>(spec.modality)], fn, batch.labels, spec, hooks);
}

AttackResult transfer_attack(const UnimodalModel& surrogate, const MultimodalModel& target,
                             const Batch& batch, const AttackSpec& spec) {
  if (spec.level != AttackLevel::input) throw ValidationError("transfer_attack: spec.level must be input");
  check_modality(target, spec);
  if (surrogate.modality != spec.modality) {
    throw ValidationError("transfer_attack: surrogate is trained on a different modality");
  }
  const LogitsFn fn = [&surrogate](Graph& g, Var x) { return predict(surrogate, g, x); };
  AttackResult result =
      run_pgd(batch.inputs[static_cast<std::size_t>(spec.modality)], fn, batch.labels, spec);
  // Losses are reported on the multimodal model the perturbation is transferred to.
  result.initial_loss = cross_entropy_rows(predict(target, batch), batch.labels);
  result.achieved_loss = cross_entropy_rows(predict(target, apply_attack(batch, result)), batch.labels);
  return result;
}

AttackResult feature_attack(const MultimodalModel& model, const Batch& batch, const AttackSpec& spec) {
  if (spec.level != AttackLevel::feature) throw ValidationError("feature_attack: spec.level must be feature");
  if (!model.has_features()) throw ValidationError("feature_attack: early fusion has no feature stage");
  check_modality(model, spec);
  const auto i = static_cast<std::size_t>(spec.modality);
  auto clean = std::make_shared<std::vector<Tensor>>(extract_values(model, batch));
  const LogitsFn fn = [&model, clean, i](Graph& g, Var zi) {
    std::vector<Var> z;
    for (std::size_t j = 0; j < clean->size(); ++j) z.push_back(j == i ? zi : g.constant((*clean)[j]));
    return head_forward(model, g, z).logits;
  };
  std::vector<int> labels = batch.labels;
  return run_pgd((*clean)[i], fn, labels, spec);
}

AttackResult targeted_attack(const MultimodalModel& model, const Batch& batch,
                             std::span<const int> targets, const AttackSpec& spec) {
  if (spec.level != AttackLevel::input) throw ValidationError("targeted_attack: spec.level must be input");
  check_modality(model, spec);
  if (targets.size() != batch.size()) throw ValidationError("targeted_attack: one target per row");
  AttackSpec s = spec;
  s.objective = Objective::targeted;
  const LogitsFn fn = input_logits_fn(model, batch, spec.modality);
  return run_pgd(batch.inputs[static_cast<std::size_t>(spec.modality)], fn, targets, s);
}

std::vector<int> sample_targets(std::span<const int> labels, int classes, std::uint64_t seed) {
  if (classes < 2) throw ValidationError("sample_targets: needs at least two classes");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x7467u};
  std::mt19937_64 rng(seq);
  std::uniform_int_distribution<int> dist(0, classes - 2);
  std::vector<int> out;
  out.reserve(labels.size());
  for (int y : labels) {
    const int t = dist(rng);
    out.push_back(t >= y ? t + 1 : t);
  }
  return out;
}

Batch apply_attack(const Batch& batch, const AttackResult& result) {
  if (result.level != AttackLevel::input) throw ValidationError("apply_attack: feature-level result");
  Batch out = batch;
  out.inputs.at(static_cast<std::size_t>(result.modality)) = result.payload;
  return out;
}

Tensor predict_with_features(const MultimodalModel& model, const Batch& batch,
                             const AttackResult& feature_result) {
  if (feature_result.level != AttackLevel::feature) {
    throw ValidationError("predict_with_features: input-level result");
  }
  std::vector<Tensor> z = extract_values(model, batch);
  z.at(static_cast<std::size_t>(feature_result.modality)) = feature_result.payload;
  Graph graph(false);
  std::vector<Var> vars;
  for (const Tensor& t : z) vars.push_back(graph.constant(t));
  return graph.value(head_forward(model, graph, vars).logits);
}

namespace {

constexpr std::string_view kAttackMagic = "OOLATK01";

template <typename T>
std::vector<T> read_ints(ByteReader& r, std::size_t n) {
  std::vector<T> out(n);
  for (auto& v : out) v = static_cast<T>(r.i32());
  return out;
}

std::vector<double> read_doubles(ByteReader& r, std::size_t n) {
  std::vector<double> out(n);
  for (double& v : out) v = r.f64();
  return out;
}

}  // namespace

std::vector<char> encode_attack_result(const AttackResult& result) {
  if (result.origin.shape() != result.payload.shape() || result.origin.shape().size() != 2) {
    throw DimensionError("encode_attack_result: origin and payload must be matching matrices");
  }
  const std::size_t rows = result.origin.rows();
  if (result.initial_loss.size() != rows || result.achieved_loss.size() != rows) {
    throw DimensionError("encode_attack_result: one loss per row required");
  }
  const Json header{{"modality", result.modality},
                    {"level", result.level == AttackLevel::input ? "input" : "feature"},
                    {"rows", rows},
                    {"cols", result.origin.cols()},
                    {"iterations", result.iterations},
                    {"targets", result.targets.size()},
                    {"verdicts", result.detector_verdict.size()}};
  ByteWriter w;
  w.bytes(kAttackMagic);
  w.text(header.dump());
  w.f64s(result.origin.values());
  w.f64s(result.payload.values());
  w.f64s(result.initial_loss);
  w.f64s(result.achieved_loss);
  for (int t : result.targets) w.i32(t);
  for (int v : result.detector_verdict) w.i32(v);
  return w.buffer();
}

AttackResult decode_attack_result(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kAttackMagic);
  const std::size_t header_at = r.offset();
  Json h;
  try {
    h = Json::parse(r.text());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("attack file: bad header: ") + e.what(), header_at);
  }
  AttackResult out;
  std::size_t rows = 0, cols = 0, targets = 0, verdicts = 0;
  try {
    out.modality = h.at("modality").get<int>();
    out.level = h.at("level").get<std::string>() == "feature" ? AttackLevel::feature : AttackLevel::input;
    rows = h.at("rows").get<std::size_t>();
    cols = h.at("cols").get<std::size_t>();
    out.iterations = h.at("iterations").get<int>();
    targets = h.at("targets").get<std::size_t>();
    verdicts = h.at("verdicts").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("attack file header: ") + e.what());
  }
  if ((targets != 0 && targets != rows) || (verdicts != 0 && verdicts != rows)) {
    throw ValidationError("attack file header: targets/verdicts must be empty or one per row");
  }
  out.origin = Tensor({rows, cols}, read_doubles(r, rows * cols));
  out.payload = Tensor({rows, cols}, read_doubles(r, rows * cols));
  out.initial_loss = read_doubles(r, rows);
  out.achieved_loss = read_doubles(r, rows);
  out.targets = read_ints<int>(r, targets);
  out.detector_verdict = read_ints<int>(r, verdicts);
  r.expect_end();
  return out;
}

void save_attack_result(const AttackResult& result, const std::filesystem::path& path) {
  write_file_atomic(path, encode_attack_result(result));
}

AttackResult load_attack_result(const std::filesystem::path& path) {
  return decode_attack_result(read_file_bytes(path));
}

}  // namespace oodlab
