#include "oodlab/models.hpp"

#include <algorithm>
#include <cmath>

#include "oodlab/binary_io.hpp"
#include "oodlab/errors.hpp"

namespace oodlab {

Mlp::Mlp(std::span<const std::size_t> widths, std::mt19937_64& rng) {
  if (widths.size() < 2) throw ValidationError("mlp: needs at least input and output widths");
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    const std::size_t fan_in = widths[l], fan_out = widths[l + 1];
    if (fan_in == 0 || fan_out == 0) throw ValidationError("mlp: zero width");
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Linear layer{Tensor({fan_in, fan_out}), Tensor({fan_out})};
    for (double& w : layer.weight.values()) w = dist(rng);
    layers.push_back(std::move(layer));
  }
}

Var Mlp::forward(Graph& graph, Var x) const {
  if (layers.empty()) throw ContractError("mlp: forward on an empty network");
  Var h = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    h = graph.add(graph.matmul(h, graph.param(layers[l].weight)), graph.param(layers[l].bias));
    if (l + 1 < layers.size()) h = graph.relu(h);
  }
  return h;
}

std::size_t Mlp::in_dim() const { return layers.empty() ? 0 : layers.front().weight.shape()[0]; }
std::size_t Mlp::out_dim() const { return layers.empty() ? 0 : layers.back().weight.shape()[1]; }

void Mlp::set_zero() {
  for (Linear& l : layers) {
    std::fill(l.weight.values().begin(), l.weight.values().end(), 0.0);
    std::fill(l.bias.values().begin(), l.bias.values().end(), 0.0);
  }
}

const char* head_kind_name(HeadKind kind) noexcept {
  switch (kind) {
    case HeadKind::concat: return "concat";
    case HeadKind::mean: return "mean";
    case HeadKind::early: return "early";
    case HeadKind::gated: return "gated";
    case HeadKind::lel: return "lel";
    case HeadKind::robust: return "robust";
    case HeadKind::oracle: return "oracle";
  }
  return "?";
}

HeadKind parse_head_kind(std::string_view name) {
  for (HeadKind k : {HeadKind::concat, HeadKind::mean, HeadKind::early, HeadKind::gated,
                     HeadKind::lel, HeadKind::robust, HeadKind::oracle}) {
    if (name == head_kind_name(k)) return k;
  }
  throw ValidationError("unknown head kind '" + std::string(name) + "'");
}

const char* detector_mode_name(DetectorMode mode) noexcept {
  return mode == DetectorMode::unaligned ? "unaligned" : "aligned";
}

void ArchSpec::validate() const {
  if (feature_dim == 0 || tail_hidden == 0 || expert_hidden == 0 || fused_dim == 0 ||
      detector_hidden == 0) {
    throw ValidationError("arch: widths must be positive");
  }
  if (extractor_hidden.size() != 2) {
    throw ValidationError("arch: extractors have exactly two hidden layers");
  }
  for (auto w : extractor_hidden) {
    if (w == 0) throw ValidationError("arch: widths must be positive");
  }
}

Json to_json(const ArchSpec& a) {
  return Json{{"feature_dim", a.feature_dim},     {"extractor_hidden", a.extractor_hidden},
              {"tail_hidden", a.tail_hidden},     {"expert_hidden", a.expert_hidden},
              {"fused_dim", a.fused_dim},         {"detector_hidden", a.detector_hidden},
              {"gate_hidden", a.gate_hidden}};
}

ArchSpec arch_spec_from_json(const Json& j) {
  constexpr std::string_view where = "model";
  reject_unknown_keys(j,
                      {"feature_dim", "extractor_hidden", "tail_hidden", "expert_hidden",
                       "fused_dim", "detector_hidden", "gate_hidden"},
                      where);
  ArchSpec a;
  a.feature_dim = json_get(j, "feature_dim", a.feature_dim, where);
  a.extractor_hidden = json_get(j, "extractor_hidden", a.extractor_hidden, where);
  a.tail_hidden = json_get(j, "tail_hidden", a.tail_hidden, where);
  a.expert_hidden = json_get(j, "expert_hidden", a.expert_hidden, where);
  a.fused_dim = json_get(j, "fused_dim", a.fused_dim, where);
  a.detector_hidden = json_get(j, "detector_hidden", a.detector_hidden, where);
  a.gate_hidden = json_get(j, "gate_hidden", a.gate_hidden, where);
  a.validate();
  return a;
}

std::string MultimodalModel::name() const {
  std::string n = head_kind_name(head);
  if (head == HeadKind::oracle) n += "-" + std::to_string(excluded + 1);
  if (head == HeadKind::robust && detector_mode == DetectorMode::aligned) n += "-aligned";
  return n;
}

namespace {

Mlp make_mlp(std::initializer_list<std::size_t> widths, std::mt19937_64& rng) {
  std::vector<std::size_t> w(widths);
  return Mlp(w, rng);
}

Mlp make_extractor(std::size_t in, const ArchSpec& a, std::mt19937_64& rng) {
  return make_mlp({in, a.extractor_hidden[0], a.extractor_hidden[1], a.feature_dim}, rng);
}

Mlp make_classifier(std::size_t in, const ArchSpec& a, std::size_t classes, std::mt19937_64& rng) {
  return make_mlp({in, a.tail_hidden, classes}, rng);
}

}  // namespace

MultimodalModel make_model(HeadKind head, const TaskSpec& task, const ArchSpec& arch,
                           std::uint64_t seed, int excluded, DetectorMode mode) {
  task.validate();
  arch.validate();
  MultimodalModel m;
  m.head = head;
  m.detector_mode = mode;
  m.k = task.k;
  m.classes = task.classes;
  m.input_dims = task.input_dims;
  m.arch = arch;
  m.seed = seed;
  const auto k = static_cast<std::size_t>(task.k);
  const auto classes = static_cast<std::size_t>(task.classes);
  const std::size_t fd = arch.feature_dim;

  if (head == HeadKind::oracle) {
    if (excluded < 0 || excluded >= task.k) {
      throw ValidationError("oracle head needs an excluded modality in [0, k)");
    }
    m.excluded = excluded;
  } else if (excluded != -1) {
    throw ValidationError("only the oracle head excludes a modality");
  }

  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(head), static_cast<std::uint32_t>(excluded + 1)};
  std::mt19937_64 rng(seq);

  if (head != HeadKind::early) {
    for (std::size_t i = 0; i < k; ++i) {
      if (static_cast<int>(i) == excluded) {
        m.extractors.emplace_back();
      } else {
        m.extractors.push_back(make_extractor(task.input_dims[i], arch, rng));
      }
    }
  }

  switch (head) {
    case HeadKind::concat:
      m.tail = make_classifier(k * fd, arch, classes, rng);
      break;
    case HeadKind::mean:
      for (std::size_t i = 0; i < k; ++i) m.unimodal_tails.push_back(make_classifier(fd, arch, classes, rng));
      break;
    case HeadKind::early: {
      std::size_t total = 0;
      for (auto d : task.input_dims) total += d;
      m.trunk = make_mlp({total, arch.extractor_hidden[0], arch.extractor_hidden[1], fd}, rng);
      m.tail = make_classifier(fd, arch, classes, rng);
      break;
    }
    case HeadKind::gated:
      m.gate = arch.gate_hidden == 0 ? make_mlp({k * fd, k * fd}, rng)
                                     : make_mlp({k * fd, arch.gate_hidden, k * fd}, rng);
      m.tail = make_classifier(k * fd, arch, classes, rng);
      break;
    case HeadKind::lel:
      m.tail = make_mlp({k * fd, classes}, rng);
      break;
    case HeadKind::robust: {
      for (std::size_t i = 0; i <= k; ++i) {
        const std::size_t in = i < k ? (k - 1) * fd : k * fd;
        m.experts.push_back(make_mlp({in, arch.expert_hidden, arch.fused_dim}, rng));
      }
      const std::size_t det_in = mode == DetectorMode::aligned ? k * classes : k * fd;
      m.detector = make_mlp({det_in, arch.detector_hidden, k + 1}, rng);
      m.tail = make_classifier(arch.fused_dim, arch, classes, rng);
      if (mode == DetectorMode::aligned) {
        for (std::size_t i = 0; i < k; ++i) m.unimodal_tails.push_back(make_classifier(fd, arch, classes, rng));
      }
      break;
    }
    case HeadKind::oracle:
      m.tail = make_classifier((k - 1) * fd, arch, classes, rng);
      break;
  }
  return m;
}

namespace {

template <typename Model, typename Fn>
void visit_parameters(Model& model, Fn&& fn) {
  auto visit_mlp = [&](const std::string& prefix, auto& mlp, ParamGroup group) {
    for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
      const std::string base = prefix + ".layer" + std::to_string(l);
      fn(base + ".weight", mlp.layers[l].weight, group);
      fn(base + ".bias", mlp.layers[l].bias, group);
    }
  };
  for (std::size_t i = 0; i < model.extractors.size(); ++i) {
    visit_mlp("extractor" + std::to_string(i), model.extractors[i], ParamGroup::extractors);
  }
  visit_mlp("trunk", model.trunk, ParamGroup::fusion);
  const ParamGroup uni = model.head == HeadKind::robust ? ParamGroup::alignment : ParamGroup::fusion;
  for (std::size_t i = 0; i < model.unimodal_tails.size(); ++i) {
    visit_mlp("unimodal_tail" + std::to_string(i), model.unimodal_tails[i], uni);
  }
  visit_mlp("gate", model.gate, ParamGroup::fusion);
  for (std::size_t i = 0; i < model.experts.size(); ++i) {
    visit_mlp("expert" + std::to_string(i), model.experts[i], ParamGroup::fusion);
  }
  visit_mlp("detector", model.detector, ParamGroup::fusion);
  visit_mlp("tail", model.tail, ParamGroup::fusion);
}

}  // namespace

void for_each_parameter(MultimodalModel& model,
                        const std::function<void(const std::string&, Tensor&, ParamGroup)>& fn) {
  visit_parameters(model, fn);
}

void for_each_parameter(const MultimodalModel& model,
                        const std::function<void(const std::string&, const Tensor&, ParamGroup)>& fn) {
  visit_parameters(model, fn);
}

std::vector<Tensor*> parameters(MultimodalModel& model, ParamGroup group) {
  std::vector<Tensor*> out;
  for_each_parameter(model, [&](const std::string&, Tensor& t, ParamGroup g) {
    if (group == ParamGroup::all || g == group) out.push_back(&t);
  });
  return out;
}

std::size_t parameter_count(const MultimodalModel& model, ParamGroup group) {
  std::size_t n = 0;
  for_each_parameter(model, [&](const std::string&, const Tensor& t, ParamGroup g) {
    if (group == ParamGroup::all || g == group) n += t.size();
  });
  return n;
}

namespace {

void check_inputs(const MultimodalModel& model, const Graph& graph, std::span<const Var> inputs) {
  if (inputs.size() != static_cast<std::size_t>(model.k)) {
    throw DimensionError("model expects " + std::to_string(model.k) + " modalities, got " +
                         std::to_string(inputs.size()));
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor& x = graph.value(inputs[i]);
    if (x.cols() != model.input_dims[i]) {
      throw DimensionError("modality " + std::to_string(i) + " has shape " +
                           shape_string(x.shape()) + ", expected feature width " +
                           std::to_string(model.input_dims[i]));
    }
  }
}

Var ones_row(Graph& graph, std::size_t width) { return graph.constant(Tensor({1, width}, 1.0)); }

}  // namespace

std::vector<Var> extract(const MultimodalModel& model, Graph& graph, std::span<const Var> inputs) {
  if (!model.has_features()) throw ContractError("early fusion has no per-modality features");
  check_inputs(model, graph, inputs);
  std::vector<Var> z;
  z.reserve(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (static_cast<int>(i) == model.excluded) {
      z.push_back(graph.constant(Tensor({graph.value(inputs[i]).rows(), model.arch.feature_dim})));
    } else {
      z.push_back(model.extractors[i].forward(graph, inputs[i]));
    }
  }
  return z;
}

std::vector<Tensor> extract_values(const MultimodalModel& model, const Batch& batch) {
  Graph graph(false);
  std::vector<Var> xs;
  for (const Tensor& x : batch.inputs) xs.push_back(graph.constant(x));
  std::vector<Tensor> out;
  for (Var z : extract(model, graph, xs)) out.push_back(graph.value(z));
  return out;
}

Var fuse_concat(Graph& graph, const Mlp& tail, std::span<const Var> features) {
  return tail.forward(graph, graph.concat(features));
}

Var fuse_mean(Graph& graph, std::span<const Var> logits) {
  if (logits.empty()) throw ContractError("fuse_mean: no logits");
  Var total = logits[0];
  for (std::size_t i = 1; i < logits.size(); ++i) total = graph.add(total, logits[i]);
  return graph.scale(total, 1.0 / static_cast<double>(logits.size()));
}

Var fuse_early(Graph& graph, const Mlp& trunk, const Mlp& tail, std::span<const Var> inputs) {
  return tail.forward(graph, trunk.forward(graph, graph.concat(inputs)));
}

Var fuse_gated(Graph& graph, const Mlp& gate, const Mlp& tail, std::span<const Var> features) {
  Var joined = graph.concat(features);
  Var gates = graph.sigmoid(gate.forward(graph, joined));
  return tail.forward(graph, graph.mul(joined, gates));
}

Var odd_one_out_logits(const MultimodalModel& model, Graph& graph, std::span<const Var> features) {
  if (model.head != HeadKind::robust) throw ContractError("odd_one_out: model has no detector");
  if (model.detector_mode == DetectorMode::unaligned) {
    return model.detector.forward(graph, graph.concat(features));
  }
  std::vector<Var> aligned;
  for (std::size_t i = 0; i < features.size(); ++i) {
    aligned.push_back(model.unimodal_tails[i].forward(graph, features[i]));
  }
  return model.detector.forward(graph, graph.concat(aligned));
}

Var odd_one_out(const MultimodalModel& model, Graph& graph, std::span<const Var> features) {
  if (model.forced_arm) {
    const int arm = *model.forced_arm;
    if (arm < 0 || arm > model.k) throw ValidationError("forced detector arm out of range");
    Tensor onehot({graph.value(features[0]).rows(), static_cast<std::size_t>(model.k + 1)});
    for (std::size_t r = 0; r < onehot.rows(); ++r) onehot.at(r, static_cast<std::size_t>(arm)) = 1.0;
    return graph.constant(std::move(onehot));
  }
  return graph.softmax(odd_one_out_logits(model, graph, features));
}

std::vector<Var> expert_outputs(const MultimodalModel& model, Graph& graph,
                                std::span<const Var> features) {
  const auto k = static_cast<std::size_t>(model.k);
  if (features.size() != k) throw DimensionError("expert_outputs: wrong number of feature blocks");
  std::vector<Var> out;
  out.reserve(k + 1);
  std::vector<Var> subset;
  for (std::size_t i = 0; i < k; ++i) {
    subset.clear();
    for (std::size_t j = 0; j < k; ++j) {
      if (j != i) subset.push_back(features[j]);
    }
    out.push_back(model.experts[i].forward(graph, graph.concat(subset)));
  }
  out.push_back(model.experts[k].forward(graph, graph.concat(features)));
  return out;
}

Var robust_fuse(Graph& graph, std::span<const Var> experts, Var weights) {
  const Tensor& w = graph.value(weights);
  if (w.cols() != experts.size()) {
    throw DimensionError("robust_fuse: " + std::to_string(experts.size()) + " experts but " +
                         std::to_string(w.cols()) + " weights per row");
  }
  for (std::size_t r = 0; r < w.rows(); ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < w.cols(); ++c) {
      const double v = w.at(r, c);
      if (v < -1e-6) throw ContractError("robust_fuse: negative expert weight");
      total += v;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("robust_fuse: weight row " + std::to_string(r) + " sums to " +
                          std::to_string(total));
    }
  }
  const std::size_t width = graph.value(experts[0]).cols();
  Var ones = ones_row(graph, width);
  std::optional<Var> total;
  for (std::size_t i = 0; i < experts.size(); ++i) {
    Var column = graph.matmul(graph.slice(weights, i, i + 1), ones);
    Var term = graph.mul(column, experts[i]);
    total = total ? graph.add(*total, term) : term;
  }
  return *total;
}

HeadOutput head_forward(const MultimodalModel& model, Graph& graph, std::span<const Var> features) {
  switch (model.head) {
    case HeadKind::concat:
    case HeadKind::lel:
      return {fuse_concat(graph, model.tail, features), std::nullopt};
    case HeadKind::mean: {
      std::vector<Var> logits;
      for (std::size_t i = 0; i < features.size(); ++i) {
        logits.push_back(model.unimodal_tails[i].forward(graph, features[i]));
      }
      return {fuse_mean(graph, logits), std::nullopt};
    }
    case HeadKind::gated:
      return {fuse_gated(graph, model.gate, model.tail, features), std::nullopt};
    case HeadKind::oracle: {
      std::vector<Var> kept;
      for (std::size_t i = 0; i < features.size(); ++i) {
        if (static_cast<int>(i) != model.excluded) kept.push_back(features[i]);
      }
      return {fuse_concat(graph, model.tail, kept), std::nullopt};
    }
    case HeadKind::robust: {
      std::optional<Var> det_logits;
      Var weights;
      if (model.forced_arm) {
        weights = odd_one_out(model, graph, features);
      } else {
        det_logits = odd_one_out_logits(model, graph, features);
        weights = graph.softmax(*det_logits);
      }
      const std::vector<Var> experts = expert_outputs(model, graph, features);
      Var fused = robust_fuse(graph, experts, weights);
      return {model.tail.forward(graph, fused), det_logits};
    }
    case HeadKind::early:
      break;
  }
  throw ContractError("head_forward: early fusion consumes raw inputs");
}

Var predict(const MultimodalModel& model, Graph& graph, std::span<const Var> inputs) {
  if (model.head == HeadKind::early) {
    check_inputs(model, graph, inputs);
    return fuse_early(graph, model.trunk, model.tail, inputs);
  }
  const std::vector<Var> z = extract(model, graph, inputs);
  return head_forward(model, graph, z).logits;
}

Tensor predict(const MultimodalModel& model, const Batch& batch) {
  Graph graph(false);
  std::vector<Var> xs;
  for (const Tensor& x : batch.inputs) xs.push_back(graph.constant(x));
  return graph.value(predict(model, graph, xs));
}

UnimodalModel make_unimodal(const MultimodalModel& source, int modality, std::uint64_t seed) {
  if (!source.has_features() || modality < 0 || modality >= source.k ||
      source.extractors[static_cast<std::size_t>(modality)].empty()) {
    throw ValidationError("make_unimodal: source has no extractor for modality " +
                          std::to_string(modality));
  }
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(modality), 0x756eu};
  std::mt19937_64 rng(seq);
  UnimodalModel u;
  u.modality = modality;
  u.classes = source.classes;
  u.extractor = source.extractors[static_cast<std::size_t>(modality)];
  u.tail = make_classifier(source.arch.feature_dim, source.arch,
                           static_cast<std::size_t>(source.classes), rng);
  return u;
}

Var predict(const UnimodalModel& model, Graph& graph, Var input) {
  return model.tail.forward(graph, model.extractor.forward(graph, input));
}

Tensor predict(const UnimodalModel& model, const Tensor& input) {
  Graph graph(false);
  return graph.value(predict(model, graph, graph.constant(input)));
}

std::vector<Tensor*> tail_parameters(UnimodalModel& model) {
  std::vector<Tensor*> out;
  for (Linear& l : model.tail.layers) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

namespace {

constexpr std::string_view kModelMagic = "OOLCKPT1";

Json model_header(const MultimodalModel& m) {
  Json h{{"head_kind", head_kind_name(m.head)},
         {"detector_mode", detector_mode_name(m.detector_mode)},
         {"k", m.k},
         {"classes", m.classes},
         {"input_dims", m.input_dims},
         {"arch", to_json(m.arch)},
         {"seed", m.seed},
         {"excluded", m.excluded}};
  return h;
}

}  // namespace

std::vector<char> encode_model(const MultimodalModel& model) {
  ByteWriter w;
  w.bytes(kModelMagic);
  w.text(model_header(model).dump());
  std::vector<std::pair<std::string, const Tensor*>> blobs;
  for_each_parameter(model, [&](const std::string& name, const Tensor& t, ParamGroup) {
    blobs.emplace_back(name, &t);
  });
  w.u32(static_cast<std::uint32_t>(blobs.size()));
  for (const auto& [name, t] : blobs) {
    w.text(name);
    w.u32(static_cast<std::uint32_t>(t->rank()));
    for (auto d : t->shape()) w.u64(d);
    w.f64s(t->values());
  }
  return w.buffer();
}

void save_model(const MultimodalModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_model(model));
}

MultimodalModel decode_model(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kModelMagic);
  const std::size_t header_at = r.offset();
  Json h;
  try {
    h = Json::parse(r.text());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what(), header_at);
  }
  constexpr std::string_view where = "checkpoint header";
  reject_unknown_keys(h, {"head_kind", "detector_mode", "k", "classes", "input_dims", "arch", "seed",
                          "excluded"},
                      where);
  TaskSpec shape_spec;
  shape_spec.k = json_require<int>(h, "k", where);
  shape_spec.classes = json_require<int>(h, "classes", where);
  shape_spec.input_dims = json_require<std::vector<std::size_t>>(h, "input_dims", where);
  const auto mode_text = json_require<std::string>(h, "detector_mode", where);
  if (mode_text != "unaligned" && mode_text != "aligned") {
    throw ValidationError("checkpoint header: unknown detector mode '" + mode_text + "'");
  }
  MultimodalModel m = make_model(parse_head_kind(json_require<std::string>(h, "head_kind", where)),
                                 shape_spec, arch_spec_from_json(json_require<Json>(h, "arch", where)),
                                 json_require<std::uint64_t>(h, "seed", where),
                                 json_require<int>(h, "excluded", where),
                                 mode_text == "aligned" ? DetectorMode::aligned : DetectorMode::unaligned);

  std::vector<std::pair<std::string, Tensor*>> slots;
  for_each_parameter(m, [&](const std::string& name, Tensor& t, ParamGroup) { slots.emplace_back(name, &t); });
  const std::size_t count_at = r.offset();
  const std::uint32_t count = r.u32();
  if (count != slots.size()) {
    throw FormatError("checkpoint has " + std::to_string(count) + " blobs, architecture needs " +
                          std::to_string(slots.size()),
                      count_at);
  }
  for (auto& [name, tensor] : slots) {
    const std::size_t at = r.offset();
    const std::string stored = r.text();
    if (stored != name) throw FormatError("expected blob '" + name + "', found '" + stored + "'", at);
    const std::uint32_t rank = r.u32();
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(r.u64()));
    if (shape != tensor->shape()) {
      throw ValidationError("blob '" + name + "' has shape " + shape_string(shape) + ", expected " +
                            shape_string(tensor->shape()));
    }
    for (double& v : tensor->values()) v = r.f64();
  }
  r.expect_end();
  return m;
}

MultimodalModel load_model(const std::filesystem::path& path) { return decode_model(read_file_bytes(path)); }

namespace {

constexpr std::string_view kUnimodalMagic = "OOLUNIM1";

void write_mlp(ByteWriter& w, const Mlp& mlp) {
  w.u32(static_cast<std::uint32_t>(mlp.layers.size()));
  for (const Linear& l : mlp.layers) {
    w.u64(l.weight.rows());
    w.u64(l.weight.cols());
    w.f64s(l.weight.values());
    w.f64s(l.bias.values());
  }
}

Mlp read_mlp(ByteReader& r) {
  Mlp mlp;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const auto in = static_cast<std::size_t>(r.u64());
    const auto out = static_cast<std::size_t>(r.u64());
    if (in == 0 || out == 0 || in * out > r.remaining() / 8) throw FormatError("implausible layer shape", at);
    if (!mlp.layers.empty() && mlp.layers.back().weight.cols() != in) {
      throw ValidationError("unimodal checkpoint: layer widths do not chain");
    }
    std::vector<double> w(in * out), b(out);
    for (double& v : w) v = r.f64();
    for (double& v : b) v = r.f64();
    mlp.layers.push_back({Tensor({in, out}, std::move(w)), Tensor({out}, std::move(b))});
  }
  return mlp;
}

}  // namespace

std::vector<char> encode_unimodal(const UnimodalModel& model) {
  ByteWriter w;
  w.bytes(kUnimodalMagic);
  w.text(Json{{"modality", model.modality}, {"classes", model.classes}}.dump());
  write_mlp(w, model.extractor);
  write_mlp(w, model.tail);
  return w.buffer();
}

UnimodalModel decode_unimodal(std::vector<char> bytes) {
  ByteReader r(std::move(bytes));
  r.expect_magic(kUnimodalMagic);
  const std::size_t header_at = r.offset();
  Json h;
  try {
    h = Json::parse(r.text());
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(std::string("unimodal header is not valid JSON: ") + e.what(), header_at);
  }
  reject_unknown_keys(h, {"modality", "classes"}, "unimodal header");
  UnimodalModel m;
  m.modality = json_require<int>(h, "modality", "unimodal header");
  m.classes = json_require<int>(h, "classes", "unimodal header");
  m.extractor = read_mlp(r);
  m.tail = read_mlp(r);
  r.expect_end();
  if (m.extractor.empty() || m.tail.empty() || m.extractor.out_dim() != m.tail.in_dim() ||
      m.tail.out_dim() != static_cast<std::size_t>(m.classes)) {
    throw ValidationError("unimodal checkpoint: extractor and tail do not fit together");
  }
  return m;
}

void save_unimodal(const UnimodalModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, encode_unimodal(model));
}

UnimodalModel load_unimodal(const std::filesystem::path& path) { return decode_unimodal(read_file_bytes(path)); }

bool parameters_equal(const MultimodalModel& a, const MultimodalModel& b, ParamGroup group) {
  std::vector<const Tensor*> ta, tb;
  for_each_parameter(a, [&](const std::string&, const Tensor& t, ParamGroup g) {
    if (group == ParamGroup::all || g == group) ta.push_back(&t);
  });
  for_each_parameter(b, [&](const std::string&, const Tensor& t, ParamGroup g) {
    if (group == ParamGroup::all || g == group) tb.push_back(&t);
  });
  if (ta.size() != tb.size()) return false;
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (!(*ta[i] == *tb[i])) return false;
  }
  return true;
}

}  // namespace oodlab
