#include "dpm/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dpm/errors.hpp"
#include "dpm/ops.hpp"

namespace dpm {

void ModelConfig::validate() const {
  if (d_v == 0) throw ConfigError("d_v", "d_v must be positive");
  if (n_heads == 0 || d_v % n_heads != 0) {
    throw ConfigError("n_heads", "d_v (" + std::to_string(d_v) + ") must be divisible by n_heads (" +
                                     std::to_string(n_heads) + ")");
  }
  if (max_len == 0) throw ConfigError("max_len", "max_len must be positive");
  if (vocab_size <= special::kCount) {
    throw ConfigError("vocab_size", "vocab_size must exceed the " + std::to_string(special::kCount) +
                                        " reserved ids");
  }
  if (n_classes < 2) throw ConfigError("n_classes", "n_classes must be at least 2");
}

namespace {

std::string mode_name(EncoderMode m) { return m == EncoderMode::kInteraction ? "interaction" : "representation"; }

EncoderMode parse_mode(const std::string& s) {
  if (s == "interaction") return EncoderMode::kInteraction;
  if (s == "representation") return EncoderMode::kRepresentation;
  throw ConfigError("encoder_mode", "encoder_mode must be \"interaction\" or \"representation\", got \"" + s + "\"");
}

DifferenceSource parse_source(const std::string& s) {
  if (s == "P") return DifferenceSource::kP;
  if (s == "Q") return DifferenceSource::kQ;
  throw ConfigError("difference_aggregates", "difference_aggregates must be \"P\" or \"Q\", got \"" + s + "\"");
}

template <typename T>
T read_field(const nlohmann::json& j, const std::string& key, const std::string& path) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path, "field \"" + path + "\" has the wrong type");
  }
}

}  // namespace

nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"d_v", c.d_v},
      {"n_heads", c.n_heads},
      {"n_layers", c.n_layers},
      {"max_len", c.max_len},
      {"vocab_size", c.vocab_size},
      {"n_classes", c.n_classes},
      {"attn_dim", c.attn_dim},
      {"encoder_mode", mode_name(c.encoder_mode)},
      {"ablation",
       {{"use_dot", c.ablation.use_dot},
        {"use_subtract", c.ablation.use_subtract},
        {"use_internal_fusion", c.ablation.use_internal_fusion},
        {"use_external_fusion", c.ablation.use_external_fusion}}},
      {"difference_aggregates", c.difference_aggregates == DifferenceSource::kP ? "P" : "Q"},
      {"vector_gate", c.vector_gate},
      {"seed", c.seed},
  };
}

const std::vector<std::string>& model_config_keys() {
  static const std::vector<std::string> keys{"d_v",      "n_heads",      "n_layers",     "max_len",
                                             "vocab_size", "n_classes",  "attn_dim",     "encoder_mode",
                                             "ablation", "difference_aggregates", "vector_gate", "seed"};
  return keys;
}

ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig c) {
  if (!j.is_object()) throw ConfigError("config", "model config must be a JSON object");
  auto size_field = [&](const char* key, std::size_t& out) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError(key, std::string("field \"") + key + "\" must be a non-negative integer");
    }
    out = v.get<std::size_t>();
  };
  size_field("d_v", c.d_v);
  size_field("n_heads", c.n_heads);
  size_field("n_layers", c.n_layers);
  size_field("max_len", c.max_len);
  size_field("vocab_size", c.vocab_size);
  size_field("n_classes", c.n_classes);
  size_field("attn_dim", c.attn_dim);
  if (j.contains("seed")) {
    const auto& v = j.at("seed");
    if (!v.is_number_integer() || v.get<long long>() < 0) {
      throw ConfigError("seed", "field \"seed\" must be a non-negative integer");
    }
    c.seed = v.get<std::uint64_t>();
  }
  if (j.contains("encoder_mode")) c.encoder_mode = parse_mode(read_field<std::string>(j, "encoder_mode", "encoder_mode"));
  if (j.contains("difference_aggregates")) {
    c.difference_aggregates =
        parse_source(read_field<std::string>(j, "difference_aggregates", "difference_aggregates"));
  }
  if (j.contains("vector_gate")) c.vector_gate = read_field<bool>(j, "vector_gate", "vector_gate");
  if (j.contains("ablation")) {
    const auto& a = j.at("ablation");
    if (!a.is_object()) throw ConfigError("ablation", "field \"ablation\" must be an object");
    for (const auto& [key, value] : a.items()) {
      const std::string path = "ablation." + key;
      bool* target = key == "use_dot"               ? &c.ablation.use_dot
                     : key == "use_subtract"        ? &c.ablation.use_subtract
                     : key == "use_internal_fusion" ? &c.ablation.use_internal_fusion
                     : key == "use_external_fusion" ? &c.ablation.use_external_fusion
                                                    : nullptr;
      if (!target) throw ConfigError(path, "unknown field \"" + path + "\"");
      if (!value.is_boolean()) throw ConfigError(path, "field \"" + path + "\" must be a boolean");
      *target = value.get<bool>();
    }
  }
  return c;
}

Prediction make_prediction(std::span<const double> logits) {
  Prediction p;
  p.logits.assign(logits.begin(), logits.end());
  const double m = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  p.probabilities.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p.probabilities[i] = std::exp(logits[i] - m);
    total += p.probabilities[i];
  }
  for (double& x : p.probabilities) x /= total;
  p.label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  return p;
}

DpmModel::DpmModel(const ModelConfig& config) : config_(config) {
  config_.validate();
  Rng rng(config_.seed);
  const std::size_t d = config_.d_v;
  const std::size_t da = config_.score_dim();
  encoder_ = TransformerEncoder::create(store_, rng, "encoder", config_.vocab_size, joint_positions(config_.max_len),
                                        d, config_.n_heads, config_.n_layers);
  fusion_ = Linear::create(store_, rng, "fusion", 2 * d, d);
  subtract_ = SubtractAttnParams::create(store_, rng, "subtract", d, da);
  internal_dot_ = InternalAggParams::create(store_, rng, "internal.dot", d, config_.vector_gate);
  internal_subtract_ = InternalAggParams::create(store_, rng, "internal.subtract", d, config_.vector_gate);
  external_ = ExternalAggParams::create(store_, rng, "external", d, da);
  classifier_hidden_ = Linear::create(store_, rng, "classifier.hidden", 2 * d, d);
  classifier_output_ = Linear::create(store_, rng, "classifier.output", d, config_.n_classes);
}

Tensor DpmModel::pool(const Tensor& fused, const Mask& mask) const {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) rows.push_back(i);
  if (rows.empty()) throw DegenerateMaskError("pair has no position valid in both sentences");
  const Tensor valid = gather_rows(fused, rows);
  return concat({mean(valid, 0), max(valid, 0)}, 0);
}

Tensor DpmModel::head(const Tensor& pooled) const {
  return classifier_output_.forward(tanh(classifier_hidden_.forward(pooled)));
}

ExampleTrace DpmModel::trace(const TokenIds& s1, const TokenIds& s2, const ForwardOptions& options) const {
  return trace_encoded(encode_pair(config_.encoder_mode, encoder_, fusion_, s1, s2, config_.max_len), options);
}

ExampleTrace DpmModel::trace_encoded(EncodedPair encoded, const ForwardOptions& options) const {
  ExampleTrace t;
  t.encoded = std::move(encoded);
  const EncodedPair& e = t.encoded;
  if (e.valid_v() == 0) throw DegenerateMaskError("pair has no position valid in both sentences");
  const AblationSwitches& ab = config_.ablation;

  if (ab.use_dot) {
    t.dot = dot_attention(e.q, e.v, e.mask_q, e.mask_v);
    t.internal_dot = internal_aggregate(t.dot.output, e.v, internal_dot_, e.mask_v, ab.use_internal_fusion);
  }
  if (ab.use_subtract) {
    const bool from_p = config_.difference_aggregates == DifferenceSource::kP;
    const Mask key_mask = from_p ? and_masks(e.mask_q, e.mask_p) : e.mask_q;
    t.subtract = subtract_attention(from_p ? e.p : e.q, e.q, e.v, subtract_, key_mask, e.mask_v);
    t.internal_subtract =
        internal_aggregate(t.subtract.output, e.v, internal_subtract_, e.mask_v, ab.use_internal_fusion);
  }

  if (ab.use_dot && ab.use_subtract) {
    const Tensor& hd = t.internal_dot.h;
    const Tensor& hs = t.internal_subtract.h;
    ExternalAggResult fused;
    if (options.path_weights) {
      fused = combine_paths(hd, hs, fixed_path_weights(e.length(), (*options.path_weights)[0], (*options.path_weights)[1]),
                            e.mask_v);
    } else if (ab.use_external_fusion) {
      fused = external_aggregate(hd, hs, e.v, external_, e.mask_v);
    } else {
      fused = combine_paths(hd, hs, fixed_path_weights(e.length(), 0.5, 0.5), e.mask_v);
    }
    t.fused = fused.x;
    t.path_weights = fused.weights;
  } else if (ab.use_dot) {
    t.fused = t.internal_dot.h;
  } else if (ab.use_subtract) {
    t.fused = t.internal_subtract.h;
  } else {
    t.fused = e.v;
  }
  t.pooled = pool(t.fused, e.mask_v);
  t.logits = head(t.pooled);
  return t;
}

Tensor DpmModel::logits(const TokenIds& s1, const TokenIds& s2, const ForwardOptions& options) const {
  return trace(s1, s2, options).logits;
}

std::vector<Prediction> DpmModel::predict(std::span<const Example> batch) const {
  std::vector<Prediction> out;
  out.reserve(batch.size());
  for (const Example& ex : batch) out.push_back(make_prediction(logits(ex.s1, ex.s2).values()));
  return out;
}

std::vector<std::string> DpmModel::active_parameter_names() const {
  Tape tape;
  {
    TapeScope scope(tape);
    const TokenIds probe{special::kUnk};
    (void)trace(probe, probe);
  }
  std::set<const detail::TensorImpl*> used;
  for (std::size_t i = 0; i < tape.size(); ++i)
    for (const auto& in : tape.node(i).inputs) used.insert(in.get());
  std::vector<std::string> names;
  for (const auto& entry : store_.entries())
    if (used.count(entry.tensor.impl())) names.push_back(entry.name);
  return names;
}

std::size_t DpmModel::active_parameter_count() const {
  std::size_t n = 0;
  const auto names = active_parameter_names();
  for (const auto& name : names) n += store_.get(name).numel();
  return n;
}

Tensor cross_entropy(const std::vector<Tensor>& logits, const std::vector<std::size_t>& labels) {
  if (logits.empty()) throw ContractError("cross_entropy on an empty batch");
  if (logits.size() != labels.size()) throw ContractError("cross_entropy: logits and labels differ in count");
  const std::size_t classes = logits.front().numel();
  std::vector<Tensor> rows;
  rows.reserve(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (labels[i] >= classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at batch index " + std::to_string(i) +
                      " is outside [0, " + std::to_string(classes) + ")");
    }
    rows.push_back(reshape(logits[i], {1, classes}));
  }
  const Tensor log_probs = log_softmax(concat(rows, 0), 1);
  return scale(mean(pick_rows(log_probs, labels), 0), -1.0);
}

Adam::Adam(const ParameterStore& store, AdamConfig config) : config_(config) {
  for (const auto& e : store.entries()) {
    m_.emplace_back(e.tensor.numel(), 0.0);
    v_.emplace_back(e.tensor.numel(), 0.0);
  }
}

void Adam::step(ParameterStore& store, double lr) {
  const auto& entries = store.entries();
  if (entries.size() != m_.size()) throw ContractError("Adam state does not match the parameter store");
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor p = entries[k].tensor;
    if (!p.has_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_values();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
    }
  }
}

namespace {

std::size_t count_correct(const std::vector<Tensor>& logits, std::span<const Example> batch) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (make_prediction(logits[i].values()).label == batch[i].label) ++correct;
  }
  return correct;
}

}  // namespace

StepMetrics train_step(DpmModel& model, Adam& optimizer, std::span<const Example> batch, double lr) {
  if (batch.empty()) throw ContractError("train_step on an empty batch");
  ParameterStore& store = model.parameters();
  store.zero_grad();
  Tape tape;
  TapeScope scope(tape);
  std::vector<Tensor> logits;
  std::vector<std::size_t> labels;
  logits.reserve(batch.size());
  for (const Example& ex : batch) {
    logits.push_back(model.logits(ex.s1, ex.s2));
    labels.push_back(ex.label);
  }
  const Tensor loss = cross_entropy(logits, labels);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    std::ostringstream msg;
    msg << "non-finite training loss " << value << " after " << optimizer.steps() << " optimizer steps";
    throw DivergenceError(msg.str());
  }
  tape.backward(loss);
  for (const auto& e : store.entries()) {
    for (double g : e.tensor.grad()) {
      if (!std::isfinite(g)) throw DivergenceError("non-finite gradient in parameter " + e.name);
    }
  }
  optimizer.step(store, lr);
  return {value, static_cast<double>(count_correct(logits, batch)) / static_cast<double>(batch.size())};
}

EvalMetrics evaluate(const DpmModel& model, std::span<const Example> data) {
  EvalMetrics m;
  m.n = data.size();
  if (data.empty()) return m;
  std::vector<Tensor> logits;
  std::vector<std::size_t> labels;
  logits.reserve(data.size());
  for (const Example& ex : data) {
    logits.push_back(model.logits(ex.s1, ex.s2));
    labels.push_back(ex.label);
  }
  m.loss = cross_entropy(logits, labels).item();
  m.accuracy = static_cast<double>(count_correct(logits, data)) / static_cast<double>(data.size());
  return m;
}

}  // namespace dpm
