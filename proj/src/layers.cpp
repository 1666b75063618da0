#include "dpm/layers.hpp"

#include <algorithm>
#include <cmath>

#include "dpm/errors.hpp"
#include "dpm/ops.hpp"

namespace dpm {

Tensor ParameterStore::create(const std::string& name, Shape shape) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  Tensor t(std::move(shape), 0.0);
  t.set_requires_grad(true);
  entries_.push_back({name, t});
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ContractError("unknown parameter: " + name);
}

bool ParameterStore::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const NamedTensor& e) { return e.name == name; });
}

std::size_t ParameterStore::total_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

void init_glorot_uniform(Tensor& weight, Rng& rng) {
  const double fan_out = static_cast<double>(weight.dim(0));
  const double fan_in = static_cast<double>(weight.numel()) / fan_out;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (double& v : weight.mutable_values()) v = rng.uniform(-limit, limit);
}

void init_normal(Tensor& tensor, Rng& rng, double stddev) {
  for (double& v : tensor.mutable_values()) v = rng.normal(0.0, stddev);
}

void init_constant(Tensor& tensor, double value) {
  for (double& v : tensor.mutable_values()) v = value;
}

Linear Linear::create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t in,
                      std::size_t out, bool with_bias) {
  Linear l;
  l.weight = store.create(name + ".weight", {out, in});
  init_glorot_uniform(l.weight, rng);
  if (with_bias) l.bias = store.create(name + ".bias", {out});
  return l;
}

Tensor Linear::forward(const Tensor& x) const { return linear(x, weight, bias); }

LayerNorm LayerNorm::create(ParameterStore& store, const std::string& name, std::size_t dim) {
  LayerNorm ln;
  ln.gamma = store.create(name + ".gamma", {dim});
  init_constant(ln.gamma, 1.0);
  ln.beta = store.create(name + ".beta", {dim});
  return ln;
}

Tensor LayerNorm::forward(const Tensor& x) const { return add(mul(layer_norm(x, kEps), gamma), beta); }

Embedding Embedding::create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t vocab,
                            std::size_t positions, std::size_t dim) {
  Embedding e;
  e.token = store.create(name + ".token", {vocab, dim});
  init_normal(e.token, rng, 0.02);
  e.position = store.create(name + ".position", {positions, dim});
  init_normal(e.position, rng, 0.02);
  e.segment = store.create(name + ".segment", {2, dim});
  init_normal(e.segment, rng, 0.02);
  return e;
}

Tensor Embedding::forward(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments) const {
  if (segments.size() != ids.size()) {
    throw DimensionError("embedding: " + std::to_string(ids.size()) + " ids but " +
                         std::to_string(segments.size()) + " segment ids");
  }
  if (ids.size() > max_positions()) {
    throw DataError("embedding: sequence of length " + std::to_string(ids.size()) + " exceeds " +
                    std::to_string(max_positions()) + " positions");
  }
  for (std::size_t id : ids) {
    if (id >= vocab_size()) {
      throw DataError("embedding: token id " + std::to_string(id) + " outside vocabulary of size " +
                      std::to_string(vocab_size()));
    }
  }
  for (std::size_t s : segments) {
    if (s > 1) throw DataError("embedding: segment id " + std::to_string(s) + " is not 0 or 1");
  }
  std::vector<std::size_t> positions(ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
  return add(add(gather_rows(token, ids), gather_rows(position, positions)), gather_rows(segment, segments));
}

MultiHeadSelfAttention MultiHeadSelfAttention::create(ParameterStore& store, Rng& rng, const std::string& name,
                                                      std::size_t dim, std::size_t heads) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("n_heads", "model width " + std::to_string(dim) + " is not divisible by " +
                                     std::to_string(heads) + " heads");
  }
  MultiHeadSelfAttention a;
  a.query = Linear::create(store, rng, name + ".query", dim, dim);
  // A key bias shifts every score of a row equally, so softmax ignores it.
  a.key = Linear::create(store, rng, name + ".key", dim, dim, /*with_bias=*/false);
  a.value = Linear::create(store, rng, name + ".value", dim, dim);
  a.output = Linear::create(store, rng, name + ".output", dim, dim);
  a.heads = heads;
  return a;
}

Tensor MultiHeadSelfAttention::forward(const Tensor& x, const Mask& key_mask, std::vector<Tensor>* weights) const {
  const std::size_t dim = query.out_features();
  const std::size_t head_dim = dim / heads;
  const double scale_factor = 1.0 / std::sqrt(static_cast<double>(head_dim));
  const Tensor q = query.forward(x);
  const Tensor k = key.forward(x);
  const Tensor v = value.forward(x);
  std::vector<Tensor> contexts;
  contexts.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t lo = h * head_dim, hi = lo + head_dim;
    const Tensor qh = slice(q, 1, lo, hi);
    const Tensor kh = slice(k, 1, lo, hi);
    const Tensor vh = slice(v, 1, lo, hi);
    const Tensor scores = scale(matmul(qh, transpose(kh)), scale_factor);
    const Tensor attn = softmax(scores, 1, &key_mask);
    if (weights) weights->push_back(attn);
    contexts.push_back(matmul(attn, vh));
  }
  const Tensor joined = heads == 1 ? contexts[0] : concat(contexts, 1);
  return output.forward(joined);
}

FeedForward FeedForward::create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim) {
  FeedForward f;
  f.fc1 = Linear::create(store, rng, name + ".fc1", dim, 4 * dim);
  f.fc2 = Linear::create(store, rng, name + ".fc2", 4 * dim, dim);
  return f;
}

Tensor FeedForward::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

EncoderBlock EncoderBlock::create(ParameterStore& store, Rng& rng, const std::string& name, std::size_t dim,
                                  std::size_t heads) {
  EncoderBlock b;
  b.attention = MultiHeadSelfAttention::create(store, rng, name + ".attn", dim, heads);
  b.norm1 = LayerNorm::create(store, name + ".ln1", dim);
  b.ffn = FeedForward::create(store, rng, name + ".ffn", dim);
  b.norm2 = LayerNorm::create(store, name + ".ln2", dim);
  return b;
}

Tensor EncoderBlock::forward(const Tensor& x, const Mask& mask, std::vector<Tensor>* weights) const {
  const Tensor h = norm1.forward(add(x, attention.forward(x, mask, weights)));
  return norm2.forward(add(h, ffn.forward(h)));
}

TransformerEncoder TransformerEncoder::create(ParameterStore& store, Rng& rng, const std::string& name,
                                              std::size_t vocab, std::size_t positions, std::size_t dim,
                                              std::size_t heads, std::size_t layers) {
  TransformerEncoder enc;
  enc.embedding = Embedding::create(store, rng, name + ".embed", vocab, positions, dim);
  for (std::size_t i = 0; i < layers; ++i) {
    enc.blocks.push_back(EncoderBlock::create(store, rng, name + ".block" + std::to_string(i), dim, heads));
  }
  return enc;
}

Tensor TransformerEncoder::forward(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& segments,
                                   const Mask& mask, std::vector<Tensor>* weights) const {
  if (mask.size() != ids.size()) {
    throw DimensionError("encoder: mask of length " + std::to_string(mask.size()) + " for " +
                         std::to_string(ids.size()) + " tokens");
  }
  Tensor x = embedding.forward(ids, segments);
  for (const auto& block : blocks) x = block.forward(x, mask, weights);
  return x;
}

}  // namespace dpm
