#include "oodlab/training.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "oodlab/errors.hpp"
#include "oodlab/seeding.hpp"

namespace oodlab {

void TrainSpec::validate() const {
  if (!(lr > 0.0)) throw ValidationError("train: lr must be positive");
  if (momentum < 0.0 || weight_decay < 0.0) {
    throw ValidationError("train: momentum and weight_decay must be non-negative");
  }
  if (epochs < 0) throw ValidationError("train: epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("train: batch_size must be positive");
  attack.validate();
}

Json to_json(const TrainSpec& s) {
  return Json{{"lr", s.lr},
              {"momentum", s.momentum},
              {"weight_decay", s.weight_decay},
              {"epochs", s.epochs},
              {"batch_size", s.batch_size},
              {"seed", s.seed},
              {"attack", to_json(s.attack)},
              {"scope", s.scope == TrainScope::all ? "all" : "fusion_only"},
              {"schedule", schedule_name(s.schedule)}};
}

TrainSpec train_spec_from_json(const Json& j) {
  constexpr std::string_view where = "train";
  reject_unknown_keys(j,
                      {"lr", "momentum", "weight_decay", "epochs", "batch_size", "seed", "attack",
                       "scope", "schedule"},
                      where);
  TrainSpec s;
  s.lr = json_get(j, "lr", s.lr, where);
  s.momentum = json_get(j, "momentum", s.momentum, where);
  s.weight_decay = json_get(j, "weight_decay", s.weight_decay, where);
  s.epochs = json_get(j, "epochs", s.epochs, where);
  s.batch_size = json_get(j, "batch_size", s.batch_size, where);
  s.seed = json_get(j, "seed", s.seed, where);
  if (j.contains("attack")) s.attack = attack_spec_from_json(j.at("attack"));
  const auto scope = json_get<std::string>(j, "scope", "all", where);
  if (scope != "all" && scope != "fusion_only") throw ValidationError("train.scope: expected all|fusion_only");
  s.scope = scope == "all" ? TrainScope::all : TrainScope::fusion_only;
  const auto schedule = json_get<std::string>(j, "schedule", "alternating", where);
  if (schedule == "alternating") {
    s.schedule = Schedule::alternating;
  } else if (schedule == "joint") {
    s.schedule = Schedule::joint;
  } else if (schedule == "adversarial") {
    s.schedule = Schedule::adversarial;
  } else {
    throw ValidationError("train.schedule: expected alternating|joint|adversarial");
  }
  s.validate();
  return s;
}

const char* schedule_name(Schedule schedule) noexcept {
  switch (schedule) {
    case Schedule::alternating: return "alternating";
    case Schedule::joint: return "joint";
    case Schedule::adversarial: return "adversarial";
  }
  return "?";
}

MultimodalModel derive_model(HeadKind kind, const MultimodalModel& source, const TaskSpec& task,
                             std::uint64_t seed, DetectorMode mode) {
  if (kind == HeadKind::early || kind == HeadKind::oracle || !source.has_features()) {
    throw ValidationError("derive_model: needs a feature-based source and target head");
  }
  MultimodalModel m = make_model(kind, task, source.arch, seed, -1, mode);
  m.extractors = source.extractors;
  return m;
}

std::vector<Tensor*> select_trainable(MultimodalModel& model, TrainScope scope) {
  std::vector<Tensor*> out;
  for_each_parameter(model, [&](const std::string&, Tensor& t, ParamGroup g) {
    const bool train = scope == TrainScope::all ? g != ParamGroup::alignment : g == ParamGroup::fusion;
    t.set_requires_grad(train);
    t.clear_grad();
    if (train) out.push_back(&t);
  });
  return out;
}

namespace {

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                     std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

std::vector<std::vector<double>> collect_grads(const Graph& graph, std::span<Tensor* const> params) {
  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor* p : params) grads.push_back(graph.param_grad(*p));
  return grads;
}

std::vector<Var> constants(Graph& graph, const std::vector<Tensor>& ts) {
  std::vector<Var> out;
  out.reserve(ts.size());
  for (const Tensor& t : ts) out.push_back(graph.constant(t));
  return out;
}

// Task logits with gradient flowing into whatever parameters are flagged.
// Frozen extractors are evaluated outside the tape.
Var task_logits(const MultimodalModel& model, Graph& graph, const Batch& batch, TrainScope scope) {
  if (scope == TrainScope::fusion_only && model.has_features()) {
    const std::vector<Var> z = constants(graph, extract_values(model, batch));
    return head_forward(model, graph, z).logits;
  }
  return predict(model, graph, constants(graph, batch.inputs));
}

template <typename Body>
TrainCurves run_epochs(const Dataset& train, const TrainSpec& spec, Body&& body) {
  TrainCurves curves;
  std::uint64_t step = 0;
  for (int epoch = 0; epoch < spec.epochs; ++epoch) {
    double total = 0.0;
    std::size_t seen = 0;
    try {
      for (const auto& idx : epoch_batches(train.size(), spec.batch_size, spec.seed, epoch)) {
        const Batch batch = train.batch(idx);
        total += body(batch, step++, static_cast<std::size_t>(epoch)) * static_cast<double>(batch.size());
        seen += batch.size();
      }
    } catch (const NumericError& e) {
      throw NumericError("training diverged in epoch " + std::to_string(epoch) + ": " + e.what());
    }
    curves.loss.push_back(total / static_cast<double>(seen));
  }
  return curves;
}

}  // namespace

TrainCurves train_clean(MultimodalModel& model, const Dataset& train, const TrainSpec& spec) {
  spec.validate();
  if (spec.scope != TrainScope::all) throw ContractError("train_clean: scope must be all");
  const std::vector<Tensor*> params = select_trainable(model, TrainScope::all);
  Sgd optimizer(spec.sgd());
  return run_epochs(train, spec, [&](const Batch& batch, std::uint64_t, std::size_t) {
    Graph graph;
    const std::vector<Var> xs = constants(graph, batch.inputs);
    Var loss;
    if (model.head == HeadKind::mean) {
      const std::vector<Var> z = extract(model, graph, xs);
      std::optional<Var> acc;
      for (std::size_t i = 0; i < z.size(); ++i) {
        Var li = cross_entropy(graph, model.unimodal_tails[i].forward(graph, z[i]), batch.labels);
        acc = acc ? graph.add(*acc, li) : li;
      }
      loss = *acc;
    } else {
      loss = cross_entropy(graph, predict(model, graph, xs), batch.labels);
    }
    graph.backward(loss);
    optimizer.step(params, collect_grads(graph, params));
    return graph.value(loss).item();
  });
}

TrainCurves train_unimodal(UnimodalModel& model, const Dataset& train, const TrainSpec& spec) {
  spec.validate();
  std::vector<Tensor*> params;
  for (Linear& l : model.extractor.layers) {
    l.weight.set_requires_grad(spec.scope == TrainScope::all);
    l.bias.set_requires_grad(spec.scope == TrainScope::all);
    if (spec.scope == TrainScope::all) {
      params.push_back(&l.weight);
      params.push_back(&l.bias);
    }
  }
  for (Tensor* t : tail_parameters(model)) {
    t->set_requires_grad(true);
    params.push_back(t);
  }
  Sgd optimizer(spec.sgd());
  const auto i = model.modality;
  return run_epochs(train, spec, [&](const Batch& batch, std::uint64_t, std::size_t) {
    Graph graph;
    Var x = graph.constant(batch.inputs[static_cast<std::size_t>(i)]);
    Var loss = cross_entropy(graph, predict(model, graph, x), batch.labels);
    graph.backward(loss);
    optimizer.step(params, collect_grads(graph, params));
    return graph.value(loss).item();
  });
}

void train_alignment_tails(MultimodalModel& model, const Dataset& train, const TrainSpec& spec) {
  spec.validate();
  if (model.unimodal_tails.empty()) throw ContractError("train_alignment_tails: model has no unimodal tails");
  std::vector<Tensor*> params;
  for_each_parameter(model, [&](const std::string&, Tensor& t, ParamGroup g) {
    t.set_requires_grad(g == ParamGroup::alignment);
    if (g == ParamGroup::alignment) params.push_back(&t);
  });
  Sgd optimizer(spec.sgd());
  run_epochs(train, spec, [&](const Batch& batch, std::uint64_t, std::size_t) {
    Graph graph;
    const std::vector<Var> z = constants(graph, extract_values(model, batch));
    std::optional<Var> acc;
    for (std::size_t i = 0; i < z.size(); ++i) {
      Var li = cross_entropy(graph, model.unimodal_tails[i].forward(graph, z[i]), batch.labels);
      acc = acc ? graph.add(*acc, li) : li;
    }
    graph.backward(*acc);
    optimizer.step(params, collect_grads(graph, params));
    return graph.value(*acc).item();
  });
}

RobustTerms make_robust_terms(const MultimodalModel& model, const Batch& batch,
                              const AttackSpec& attack, std::uint64_t step_seed) {
  RobustTerms terms;
  terms.clean_features = extract_values(model, batch);
  terms.labels = batch.labels;
  for (int i = 0; i < model.k; ++i) {
    AttackSpec a = attack;
    a.modality = i;
    a.level = AttackLevel::input;
    a.objective = Objective::untargeted;
    a.seed = mix_seed(step_seed, static_cast<std::uint64_t>(i));
    const AttackResult r = pgd_single_source(model, batch, a);
    Graph graph(false);
    Var zi = model.extractors[static_cast<std::size_t>(i)].forward(graph, graph.constant(r.payload));
    terms.perturbed_features.push_back(graph.value(zi));
  }
  return terms;
}

RobustLoss build_robust_loss(const MultimodalModel& model, Graph& graph, const RobustTerms& terms) {
  if (model.head != HeadKind::robust) throw ContractError("build_robust_loss: model is not robust");
  if (model.forced_arm) throw ContractError("build_robust_loss: detector is forced");
  const auto k = static_cast<std::size_t>(model.k);
  if (terms.perturbed_features.size() != k) throw ContractError("build_robust_loss: need k perturbed terms");

  RobustLoss out;
  std::optional<Var> odd, task;
  const std::size_t rows = terms.labels.size();
  for (int condition = -1; condition < model.k; ++condition) {
    std::vector<Var> z;
    for (std::size_t j = 0; j < k; ++j) {
      const bool swap = condition >= 0 && j == static_cast<std::size_t>(condition);
      z.push_back(graph.constant(swap ? terms.perturbed_features[j] : terms.clean_features[j]));
    }
    const HeadOutput h = head_forward(model, graph, z);
    const int arm = condition < 0 ? model.k : condition;
    const std::vector<int> arms(rows, arm);
    Var lo = cross_entropy(graph, *h.detector_logits, arms);
    Var lt = cross_entropy(graph, h.logits, terms.labels);
    odd = odd ? graph.add(*odd, lo) : lo;
    task = task ? graph.add(*task, lt) : lt;
    ++out.odd_terms;
    ++out.task_terms;
    out.detector_logits.push_back(*h.detector_logits);
  }
  out.l_odd = *odd;
  out.l_task = *task;
  out.total = graph.add(out.l_odd, out.l_task);
  return out;
}

LossBreakdown robust_gradient_update(MultimodalModel& model, const Batch& batch, const TrainSpec& spec,
                                     Sgd& optimizer, std::uint64_t step_index) {
  if (model.head != HeadKind::robust) throw ContractError("robust_gradient_update: model is not robust");
  if (spec.scope != TrainScope::fusion_only) {
    throw ContractError("robust_gradient_update: extractors must be frozen (scope fusion_only)");
  }
  const std::vector<Mlp> frozen = model.extractors;
  const std::vector<Tensor*> params = select_trainable(model, TrainScope::fusion_only);

  const RobustTerms terms =
      make_robust_terms(model, batch, spec.attack, mix_seed(spec.seed ^ spec.attack.seed, step_index));
  Graph graph;
  const RobustLoss loss = build_robust_loss(model, graph, terms);
  graph.backward(loss.total);
  optimizer.step(params, collect_grads(graph, params));

  for (std::size_t i = 0; i < frozen.size(); ++i) {
    for (std::size_t l = 0; l < frozen[i].layers.size(); ++l) {
      if (!(frozen[i].layers[l].weight == model.extractors[i].layers[l].weight) ||
          !(frozen[i].layers[l].bias == model.extractors[i].layers[l].bias)) {
        throw InvariantError("robust_gradient_update: extractor " + std::to_string(i) + " changed");
      }
    }
  }

  LossBreakdown b;
  b.l_odd = graph.value(loss.l_odd).item();
  b.l_task = graph.value(loss.l_task).item();
  b.total = graph.value(loss.total).item();
  b.odd_terms = loss.odd_terms;
  b.task_terms = loss.task_terms;
  for (std::size_t c = 0; c < loss.detector_logits.size(); ++c) {
    const int arm = c == 0 ? model.k : static_cast<int>(c) - 1;
    for (int pred : argmax_rows(graph.value(loss.detector_logits[c]))) {
      b.detector_hits += pred == arm ? 1 : 0;
      ++b.detector_trials;
    }
  }
  return b;
}

TrainCurves train_robust(MultimodalModel& model, const Dataset& train, const TrainSpec& spec) {
  spec.validate();
  Sgd optimizer(spec.sgd());
  std::vector<double> odd, task, hits, trials;
  TrainCurves curves = run_epochs(train, spec, [&](const Batch& batch, std::uint64_t step, std::size_t epoch) {
    const LossBreakdown b = robust_gradient_update(model, batch, spec, optimizer, step);
    const auto n = static_cast<double>(batch.size());
    if (odd.size() <= epoch) {
      odd.resize(epoch + 1, 0.0);
      task.resize(epoch + 1, 0.0);
      hits.resize(epoch + 1, 0.0);
      trials.resize(epoch + 1, 0.0);
    }
    odd[epoch] += b.l_odd * n;
    task[epoch] += b.l_task * n;
    hits[epoch] += static_cast<double>(b.detector_hits);
    trials[epoch] += static_cast<double>(b.detector_trials);
    return b.total;
  });
  const auto n = static_cast<double>(train.size());
  for (std::size_t e = 0; e < odd.size(); ++e) {
    curves.l_odd.push_back(odd[e] / n);
    curves.l_task.push_back(task[e] / n);
    curves.detector_accuracy.push_back(trials[e] > 0 ? hits[e] / trials[e] : 0.0);
  }
  return curves;
}

int alternating_condition(std::size_t index, int k) {
  const auto phase = static_cast<int>(index % static_cast<std::size_t>(k + 1));
  return phase == 0 ? -1 : phase - 1;
}

TrainCurves train_baseline_robust(MultimodalModel& model, const Dataset& train, const TrainSpec& spec) {
  spec.validate();
  if (model.head == HeadKind::robust) throw ContractError("train_baseline_robust: use train_robust");
  const std::vector<Tensor*> params = select_trainable(model, spec.scope);
  Sgd optimizer(spec.sgd());

  auto attacked = [&](const Batch& batch, int modality, std::uint64_t step) {
    AttackSpec a = spec.attack;
    a.modality = modality;
    a.level = AttackLevel::input;
    a.objective = Objective::untargeted;
    a.seed = mix_seed(mix_seed(spec.seed ^ spec.attack.seed, step), static_cast<std::uint64_t>(modality));
    return apply_attack(batch, pgd_single_source(model, batch, a));
  };

  return run_epochs(train, spec, [&](const Batch& batch, std::uint64_t step, std::size_t) {
    std::vector<Batch> views;
    if (spec.schedule == Schedule::alternating) {
      const int condition = alternating_condition(static_cast<std::size_t>(step), model.k);
      views.push_back(condition < 0 ? batch : attacked(batch, condition, step));
    } else {
      if (spec.schedule == Schedule::joint) views.push_back(batch);
      for (int i = 0; i < model.k; ++i) views.push_back(attacked(batch, i, step));
    }
    Graph graph;
    std::optional<Var> loss;
    for (const Batch& view : views) {
      Var l = cross_entropy(graph, task_logits(model, graph, view, spec.scope), view.labels);
      loss = loss ? graph.add(*loss, l) : l;
    }
    graph.backward(*loss);
    optimizer.step(params, collect_grads(graph, params));
    return graph.value(*loss).item();
  });
}

TrainCurves train_end_to_end_adversarial(MultimodalModel& model, const Dataset& train,
                                         const TrainSpec& spec) {
  TrainSpec s = spec;
  s.scope = TrainScope::all;
  return train_baseline_robust(model, train, s);
}

}  // namespace oodlab
