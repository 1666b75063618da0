#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "dpm/composition.hpp"
#include "dpm/dual_attention.hpp"
#include "dpm/example.hpp"
#include "dpm/layers.hpp"
#include "dpm/pair_encoder.hpp"

namespace dpm {

struct AblationSwitches {
  bool use_dot = true;
  bool use_subtract = true;
  bool use_internal_fusion = true;
  bool use_external_fusion = true;

  bool operator==(const AblationSwitches&) const = default;
};

struct ModelConfig {
  std::size_t d_v = 64;
  std::size_t n_heads = 4;
  std::size_t n_layers = 2;
  std::size_t max_len = 14;  // N, the per-sentence pad length
  std::size_t vocab_size = 128;
  std::size_t n_classes = 2;
  std::size_t attn_dim = 0;  // d_a for the scoring networks; 0 means d_v
  EncoderMode encoder_mode = EncoderMode::kInteraction;
  // Turning both paths off removes dual attention entirely: V is pooled.
  AblationSwitches ablation;
  DifferenceSource difference_aggregates = DifferenceSource::kP;
  bool vector_gate = false;
  std::uint64_t seed = 0;

  std::size_t score_dim() const { return attn_dim == 0 ? d_v : attn_dim; }
  // Throws ConfigError naming the first invalid field.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& config);
// Reads the model fields present in `j`, starting from `base`. Unknown keys
// are ignored here; callers that own the whole document check those.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {});
// Keys accepted by model_config_from_json.
const std::vector<std::string>& model_config_keys();

struct Prediction {
  std::vector<double> logits;
  std::vector<double> probabilities;
  std::size_t label = 0;  // first argmax
};

Prediction make_prediction(std::span<const double> logits);

struct ForwardOptions {
  // Replaces the learned external weights with a constant (a_d, a_s).
  std::optional<std::array<double, 2>> path_weights;
};

// Every intermediate of one forward pass. Members for disabled components
// stay undefined.
struct ExampleTrace {
  EncodedPair encoded;
  AttentionResult dot;
  AttentionResult subtract;
  InternalAggResult internal_dot;
  InternalAggResult internal_subtract;
  Tensor path_weights;  // [N x 2] when both paths are fused
  Tensor fused;         // X, [N x d]
  Tensor pooled;        // [2d]
  Tensor logits;        // [n_classes]
};

class DpmModel {
 public:
  explicit DpmModel(const ModelConfig& config);
  DpmModel(const DpmModel&) = delete;
  DpmModel& operator=(const DpmModel&) = delete;
  DpmModel(DpmModel&&) = default;
  DpmModel& operator=(DpmModel&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  ExampleTrace trace(const TokenIds& s1, const TokenIds& s2, const ForwardOptions& options = {}) const;
  // Everything after the encoder, starting from a given pair encoding.
  ExampleTrace trace_encoded(EncodedPair encoded, const ForwardOptions& options = {}) const;
  Tensor logits(const TokenIds& s1, const TokenIds& s2, const ForwardOptions& options = {}) const;
  // Inference without recording a tape.
  std::vector<Prediction> predict(std::span<const Example> batch) const;

  // Parameters reachable from the loss under the current ablation switches.
  std::vector<std::string> active_parameter_names() const;
  std::size_t active_parameter_count() const;

  const TransformerEncoder& encoder() const { return encoder_; }
  const Linear& fusion() const { return fusion_; }
  const SubtractAttnParams& subtract_params() const { return subtract_; }
  const InternalAggParams& internal_dot_params() const { return internal_dot_; }
  const InternalAggParams& internal_subtract_params() const { return internal_subtract_; }
  const ExternalAggParams& external_params() const { return external_; }
  const Linear& classifier_hidden() const { return classifier_hidden_; }
  const Linear& classifier_output() const { return classifier_output_; }

  // Masked mean-pool concatenated with masked max-pool of X, [2d].
  Tensor pool(const Tensor& fused, const Mask& mask) const;
  // Two-layer tanh MLP on the pooled vector.
  Tensor head(const Tensor& pooled) const;
  Tensor classify(const Tensor& fused, const Mask& mask) const { return head(pool(fused, mask)); }

 private:
  ModelConfig config_;
  ParameterStore store_;
  TransformerEncoder encoder_;
  Linear fusion_;
  SubtractAttnParams subtract_;
  InternalAggParams internal_dot_;
  InternalAggParams internal_subtract_;
  ExternalAggParams external_;
  Linear classifier_hidden_;
  Linear classifier_output_;
};

// Mean negative log-likelihood -(1/B) sum_b log p(y_b) of softmax(logits).
// Throws DataError naming the batch index of an out-of-range label.
Tensor cross_entropy(const std::vector<Tensor>& logits, const std::vector<std::size_t>& labels);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const ParameterStore& store, AdamConfig config = {});
  void step(ParameterStore& store, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::size_t t_ = 0;
};

struct StepMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
};

// forward + loss + backward + Adam update. Throws DivergenceError, leaving
// the parameters untouched, if the loss is not finite.
StepMetrics train_step(DpmModel& model, Adam& optimizer, std::span<const Example> batch, double lr);

struct EvalMetrics {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t n = 0;
};

EvalMetrics evaluate(const DpmModel& model, std::span<const Example> data);

}  // namespace dpm
