#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabformer/ops.hpp"
#include "tabformer/optim.hpp"
#include "tabformer/rng.hpp"
#include "tabformer/tensor.hpp"

namespace tabformer {

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t hidden_dim = 64;
  std::size_t ffn_dim = 128;
  std::size_t max_positions = 16;
  bool causal = false;
  /// Learned positional embeddings; disabled only in equivariance tests.
  bool positional = true;
  double dropout = 0.0;

  void validate() const;
  nlohmann::json to_json() const;
  static TransformerConfig from_json(const nlohmann::json& j);
};

struct LstmConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  void validate() const;
};

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng);
template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng);

template <typename T>
struct Linear {
  Tensor<T> weight;  // (in, out)
  Tensor<T> bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

template <typename T>
struct LayerNorm {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }
  void collect(const std::string& prefix, NamedParams<T>& out) const;
};

/// Row-major (len x len) mask allowing key k for query q iff k <= q.
std::vector<std::uint8_t> causal_mask(std::size_t len);

/// Scaled dot-product attention. q (..., lq, d), k (..., lk, d),
/// v (..., lk, dv). `allowed` is an optional lq x lk mask shared across
/// leading axes.
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const std::vector<std::uint8_t>* allowed = nullptr);

/// Per-block key/value history for incremental causal decoding.
template <typename T>
struct KvCache {
  std::vector<Tensor<T>> keys;    // per block: (batch, heads, len, head_dim)
  std::vector<Tensor<T>> values;
  std::size_t length = 0;
};

template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t hidden, std::size_t heads, Rng& rng);

  /// x: (batch, len, hidden).
  Tensor<T> forward(const Tensor<T>& x, const std::vector<std::uint8_t>* allowed) const;
  /// One new position x (batch, 1, hidden) attending to the cached keys and
  /// itself; appends to the caches.
  Tensor<T> forward_step(const Tensor<T>& x, Tensor<T>& keys, Tensor<T>& values) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

 private:
  Tensor<T> split_heads(const Tensor<T>& x) const;

  std::size_t hidden_ = 0;
  std::size_t heads_ = 0;
  Linear<T> query_, key_, value_, output_;
};

/// Pre-norm block: x + attn(ln(x)), then x + ffn(ln(x)).
template <typename T>
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(const TransformerConfig& config, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, const std::vector<std::uint8_t>* allowed, Rng* dropout_rng) const;
  Tensor<T> forward_step(const Tensor<T>& x, Tensor<T>& keys, Tensor<T>& values) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

 private:
  double dropout_ = 0.0;
  LayerNorm<T> norm1_, norm2_;
  MultiHeadAttention<T> attention_;
  Linear<T> ffn_in_, ffn_out_;
};

template <typename T>
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(const TransformerConfig& config, Rng& rng);

  /// x: (batch, len, hidden) -> same shape. Adds positional embeddings, runs
  /// the blocks, and applies a final norm when there is at least one block.
  /// Dropout runs only when the config enables it and an rng is supplied.
  Tensor<T> forward(const Tensor<T>& x, Rng* dropout_rng = nullptr) const;
  /// Causal encoders only: output for the next position given the cache.
  /// Matches forward() on the full prefix up to float rounding.
  Tensor<T> forward_step(const Tensor<T>& x, KvCache<T>& cache) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  const TransformerConfig& config() const { return config_; }

 private:
  TransformerConfig config_;
  Tensor<T> positions_;
  std::vector<EncoderBlock<T>> blocks_;
  LayerNorm<T> final_norm_;
};

template <typename T>
struct LstmOutput {
  Tensor<T> final_hidden;              // (batch, hidden)
  Tensor<T> final_cell;                // (batch, hidden)
  std::vector<Tensor<T>> hidden_states;  // per step, (batch, hidden)
};

/// Single-layer LSTM, gate order (input, forget, cell, output).
template <typename T>
class Lstm {
 public:
  Lstm() = default;
  Lstm(const LstmConfig& config, Rng& rng);

  /// sequence: (batch, steps, input_dim).
  LstmOutput<T> forward(const Tensor<T>& sequence) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

  const LstmConfig& config() const { return config_; }
  Tensor<T>& input_weights() { return input_weights_; }
  Tensor<T>& hidden_weights() { return hidden_weights_; }
  Tensor<T>& bias() { return bias_; }

 private:
  LstmConfig config_;
  Tensor<T> input_weights_;   // (input_dim, 4*hidden)
  Tensor<T> hidden_weights_;  // (hidden, 4*hidden)
  Tensor<T> bias_;            // (4*hidden)
};

/// Linear layers with ReLU between them (none after the last).
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::vector<std::size_t>& dims, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x) const;
  void collect(const std::string& prefix, NamedParams<T>& out) const;

 private:
  std::vector<Linear<T>> layers_;
};

}  // namespace tabformer
