#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dpm/grad_check.hpp"
#include "dpm/random.hpp"
#include "dpm/tensor.hpp"

namespace dpm {

// Ordered registry of named trainable tensors. Registration order is the
// initialization order and the checkpoint order.
class ParameterStore {
 public:
  Tensor create(const std::string& name, Shape shape);
  Tensor get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::vector<NamedTensor>& entries() const { return entries_; }
  std::size_t total_numel() const;
  void zero_grad();

 private:
  std::vector<NamedTensor> entries_;
};

void init_glorot_uniform(Tensor& weight, Rng& rng);
void init_normal(Tensor& tensor, Rng& rng, double stddev);
void init_constant(Tensor& tensor, double value);

struct Linear {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out], undefined for bias-free layers

  static Linear create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in,
                       std::size_t out, bool with_bias = true);
  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }
  Tensor forward(const Tensor& x) const;
};

struct LayerNorm {
  static constexpr double kEps = 1e-12;
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(ParameterStore& store, const std::string& name, std::size_t dim);
  Tensor forward(const Tensor& x) const;
};

// Sum of token, absolute position and segment embeddings.
struct Embedding {
  Tensor token;     // [vocab x d]
  Tensor position;  // [positions x d]
  Tensor segment;   // [2 x d]

  static Embedding create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t vocab,
                          std::size_t positions, std::size_t dim);
  std::size_t vocab_size() const { return token.dim(0); }
  std::size_t max_positions() const { return position.dim(0); }
  Tensor forward(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments) const;
};

struct MultiHeadSelfAttention {
  Linear query, key, value, output;
  std::size_t heads = 1;

  static MultiHeadSelfAttention create(ParameterStore& store, Rng& rng, const std::string& name,
                                       std::size_t dim, std::size_t heads);
  // `key_mask[j]` false excludes position j as a key for every query. When
  // `weights` is given, one [L x L] attention matrix per head is appended.
  Tensor forward(const Tensor& x, const Mask& key_mask, std::vector<Tensor>* weights = nullptr) const;
};

struct FeedForward {
  Linear fc1;  // d -> 4d
  Linear fc2;  // 4d -> d

  static FeedForward create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim);
  Tensor forward(const Tensor& x) const;
};

// Post-norm transformer block: x = LN(x + MHSA(x)); x = LN(x + FFN(x)).
struct EncoderBlock {
  MultiHeadSelfAttention attention;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;

  static EncoderBlock create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim,
                             std::size_t heads);
  Tensor forward(const Tensor& x, const Mask& mask, std::vector<Tensor>* weights = nullptr) const;
};

struct TransformerEncoder {
  Embedding embedding;
  std::vector<EncoderBlock> blocks;

  static TransformerEncoder create(ParameterStore& store, Rng& rng, const std::string& name,
                                   std::size_t vocab, std::size_t positions, std::size_t dim,
                                   std::size_t heads, std::size_t layers);
  std::size_t dim() const { return embedding.token.dim(1); }

  // Contextual representations [L x d] for a sequence of L token ids.
  // Throws DataError for ids outside the vocabulary.
  Tensor forward(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments,
                 const Mask& mask, std::vector<Tensor>* weights = nullptr) const;
};

}  // namespace dpm
