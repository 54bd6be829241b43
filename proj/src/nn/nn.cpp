#include "tabformer/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace tabformer {

void TransformerConfig::validate() const {
  if (heads == 0 || hidden_dim == 0 || ffn_dim == 0 || max_positions == 0) {
    throw std::invalid_argument("TransformerConfig: sizes must be positive");
  }
  if (hidden_dim % heads != 0) throw std::invalid_argument("TransformerConfig: hidden_dim must be divisible by heads");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("TransformerConfig: dropout must be in [0, 1)");
}

nlohmann::json TransformerConfig::to_json() const {
  return {{"layers", layers},         {"heads", heads},   {"hidden_dim", hidden_dim},
          {"ffn_dim", ffn_dim},       {"causal", causal}, {"max_positions", max_positions},
          {"positional", positional}, {"dropout", dropout}};
}

TransformerConfig TransformerConfig::from_json(const nlohmann::json& j) {
  TransformerConfig c;
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.ffn_dim = j.at("ffn_dim").get<std::size_t>();
  c.max_positions = j.at("max_positions").get<std::size_t>();
  c.causal = j.at("causal").get<bool>();
  c.positional = j.value("positional", true);
  c.dropout = j.value("dropout", 0.0);
  c.validate();
  return c;
}

void LstmConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0) throw std::invalid_argument("LstmConfig: dims must be positive");
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (T& x : v) x = static_cast<T>(rng.normal(0.0, stddev));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>(std::move(shape), std::move(v), true);
}

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng)
    : weight(uniform_init<T>({in, out}, 1.0 / std::sqrt(double(in)), rng)),
      bias(Tensor<T>::zeros({out}, true)) {}

template <typename T>
void Linear<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim) : gain(Tensor<T>::full({dim}, T(1), true)), bias(Tensor<T>::zeros({dim}, true)) {}

template <typename T>
void LayerNorm<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".gain", gain);
  out.emplace_back(prefix + ".bias", bias);
}

std::vector<std::uint8_t> causal_mask(std::size_t len) {
  std::vector<std::uint8_t> m(len * len, 0);
  for (std::size_t q = 0; q < len; ++q) {
    for (std::size_t k = 0; k <= q; ++k) m[q * len + k] = 1;
  }
  return m;
}

template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const std::vector<std::uint8_t>* allowed) {
  if (q.rank() < 2 || k.rank() != q.rank() || v.rank() != q.rank()) throw ShapeError("attention: rank mismatch");
  if (q.dim(-1) != k.dim(-1)) throw ShapeError("attention: query/key width mismatch");
  if (k.dim(-2) != v.dim(-2)) throw ShapeError("attention: key/value length mismatch");
  const T inv_sqrt = T(1) / std::sqrt(T(q.dim(-1)));
  Tensor<T> scores = scale(matmul(q, transpose(k)), inv_sqrt);
  Tensor<T> weights = allowed ? masked_softmax(scores, *allowed) : softmax(scores, -1);
  return matmul(weights, v);
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t hidden, std::size_t heads, Rng& rng)
    : hidden_(hidden),
      heads_(heads),
      query_(hidden, hidden, rng),
      key_(hidden, hidden, rng),
      value_(hidden, hidden, rng),
      output_(hidden, hidden, rng) {
  if (heads == 0 || hidden % heads != 0) throw std::invalid_argument("MultiHeadAttention: hidden % heads != 0");
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::split_heads(const Tensor<T>& x) const {
  const std::size_t batch = x.dim(0), len = x.dim(1);
  return permute(reshape(x, {batch, len, heads_, hidden_ / heads_}), {0, 2, 1, 3});
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward(const Tensor<T>& x, const std::vector<std::uint8_t>* allowed) const {
  const std::size_t batch = x.dim(0), len = x.dim(1);
  Tensor<T> q = split_heads(query_.forward(x));
  Tensor<T> k = split_heads(key_.forward(x));
  Tensor<T> v = split_heads(value_.forward(x));
  Tensor<T> heads = attention(q, k, v, allowed);  // (batch, heads, len, head_dim)
  Tensor<T> merged = reshape(permute(heads, {0, 2, 1, 3}), {batch, len, hidden_});
  return output_.forward(merged);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::forward_step(const Tensor<T>& x, Tensor<T>& keys, Tensor<T>& values) const {
  const std::size_t batch = x.dim(0);
  if (x.dim(1) != 1) throw ShapeError("MultiHeadAttention::forward_step: expected one position");
  Tensor<T> q = split_heads(query_.forward(x));
  Tensor<T> k = split_heads(key_.forward(x));
  Tensor<T> v = split_heads(value_.forward(x));
  keys = keys.defined() ? concat<T>({keys, k}, 2) : k;
  values = values.defined() ? concat<T>({values, v}, 2) : v;
  Tensor<T> heads = attention(q, keys, values);
  return output_.forward(reshape(permute(heads, {0, 2, 1, 3}), {batch, 1, hidden_}));
}

template <typename T>
void MultiHeadAttention<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  query_.collect(prefix + ".query", out);
  key_.collect(prefix + ".key", out);
  value_.collect(prefix + ".value", out);
  output_.collect(prefix + ".output", out);
}

template <typename T>
EncoderBlock<T>::EncoderBlock(const TransformerConfig& config, Rng& rng)
    : dropout_(config.dropout),
      norm1_(config.hidden_dim),
      norm2_(config.hidden_dim),
      attention_(config.hidden_dim, config.heads, rng),
      ffn_in_(config.hidden_dim, config.ffn_dim, rng),
      ffn_out_(config.ffn_dim, config.hidden_dim, rng) {}

template <typename T>
Tensor<T> EncoderBlock<T>::forward(const Tensor<T>& x, const std::vector<std::uint8_t>* allowed,
                                   Rng* dropout_rng) const {
  auto drop = [&](const Tensor<T>& t) {
    return (dropout_rng && dropout_ > 0.0) ? dropout(t, T(dropout_), *dropout_rng) : t;
  };
  Tensor<T> h = add(x, drop(attention_.forward(norm1_.forward(x), allowed)));
  Tensor<T> f = ffn_out_.forward(gelu(ffn_in_.forward(norm2_.forward(h))));
  return add(h, drop(f));
}

template <typename T>
Tensor<T> EncoderBlock<T>::forward_step(const Tensor<T>& x, Tensor<T>& keys, Tensor<T>& values) const {
  Tensor<T> h = add(x, attention_.forward_step(norm1_.forward(x), keys, values));
  return add(h, ffn_out_.forward(gelu(ffn_in_.forward(norm2_.forward(h)))));
}

template <typename T>
void EncoderBlock<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  norm1_.collect(prefix + ".norm1", out);
  attention_.collect(prefix + ".attention", out);
  norm2_.collect(prefix + ".norm2", out);
  ffn_in_.collect(prefix + ".ffn_in", out);
  ffn_out_.collect(prefix + ".ffn_out", out);
}

template <typename T>
TransformerEncoder<T>::TransformerEncoder(const TransformerConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  if (config_.positional) positions_ = normal_init<T>({config_.max_positions, config_.hidden_dim}, 0.02, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) blocks_.emplace_back(config_, rng);
  final_norm_ = LayerNorm<T>(config_.hidden_dim);
}

template <typename T>
Tensor<T> TransformerEncoder<T>::forward(const Tensor<T>& x, Rng* dropout_rng) const {
  if (x.rank() != 3 || x.dim(2) != config_.hidden_dim) {
    throw ShapeError("TransformerEncoder: expected (batch, len, " + std::to_string(config_.hidden_dim) + "), got " +
                     shape_str(x.shape()));
  }
  const std::size_t len = x.dim(1);
  if (len > config_.max_positions) {
    throw std::invalid_argument("TransformerEncoder: sequence length " + std::to_string(len) + " exceeds max_positions " +
                                std::to_string(config_.max_positions));
  }
  Tensor<T> h = config_.positional ? add(x, slice(positions_, 0, 0, len)) : x;
  if (blocks_.empty()) return h;
  std::vector<std::uint8_t> mask;
  if (config_.causal) mask = causal_mask(len);
  for (const auto& block : blocks_) h = block.forward(h, config_.causal ? &mask : nullptr, dropout_rng);
  return final_norm_.forward(h);
}

template <typename T>
Tensor<T> TransformerEncoder<T>::forward_step(const Tensor<T>& x, KvCache<T>& cache) const {
  if (!config_.causal) throw std::logic_error("TransformerEncoder::forward_step needs a causal encoder");
  if (x.rank() != 3 || x.dim(1) != 1 || x.dim(2) != config_.hidden_dim) {
    throw ShapeError("TransformerEncoder::forward_step: expected (batch, 1, hidden), got " + shape_str(x.shape()));
  }
  const std::size_t pos = cache.length;
  if (pos >= config_.max_positions) {
    throw std::invalid_argument("TransformerEncoder: position " + std::to_string(pos) + " exceeds max_positions");
  }
  cache.keys.resize(blocks_.size());
  cache.values.resize(blocks_.size());
  Tensor<T> h = config_.positional ? add(x, slice(positions_, 0, pos, pos + 1)) : x;
  ++cache.length;
  if (blocks_.empty()) return h;
  for (std::size_t i = 0; i < blocks_.size(); ++i) h = blocks_[i].forward_step(h, cache.keys[i], cache.values[i]);
  return final_norm_.forward(h);
}

template <typename T>
void TransformerEncoder<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  if (config_.positional) out.emplace_back(prefix + ".positions", positions_);
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block" + std::to_string(i), out);
  if (!blocks_.empty()) final_norm_.collect(prefix + ".final_norm", out);
}

template <typename T>
Lstm<T>::Lstm(const LstmConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const double bound = 1.0 / std::sqrt(double(config_.hidden_dim));
  const std::size_t gates = 4 * config_.hidden_dim;
  input_weights_ = uniform_init<T>({config_.input_dim, gates}, bound, rng);
  hidden_weights_ = uniform_init<T>({config_.hidden_dim, gates}, bound, rng);
  std::vector<T> b(gates, T(0));
  // Forget-gate bias starts at 1.
  for (std::size_t i = config_.hidden_dim; i < 2 * config_.hidden_dim; ++i) b[i] = T(1);
  bias_ = Tensor<T>({gates}, std::move(b), true);
}

template <typename T>
LstmOutput<T> Lstm<T>::forward(const Tensor<T>& sequence) const {
  if (sequence.rank() != 3 || sequence.dim(2) != config_.input_dim) {
    throw ShapeError("Lstm: expected (batch, steps, " + std::to_string(config_.input_dim) + "), got " +
                     shape_str(sequence.shape()));
  }
  const std::size_t batch = sequence.dim(0), steps = sequence.dim(1), hd = config_.hidden_dim;
  Tensor<T> projected = add(matmul(sequence, input_weights_), bias_);  // (batch, steps, 4h)
  LstmOutput<T> out;
  Tensor<T> h, c;
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor<T> gates = reshape(slice(projected, 1, t, t + 1), {batch, 4 * hd});
    if (t > 0) gates = add(gates, matmul(h, hidden_weights_));
    Tensor<T> i = sigmoid(slice(gates, 1, 0, hd));
    Tensor<T> f = sigmoid(slice(gates, 1, hd, 2 * hd));
    Tensor<T> g = tanh(slice(gates, 1, 2 * hd, 3 * hd));
    Tensor<T> o = sigmoid(slice(gates, 1, 3 * hd, 4 * hd));
    c = t > 0 ? add(mul(f, c), mul(i, g)) : mul(i, g);
    h = mul(o, tanh(c));
    out.hidden_states.push_back(h);
  }
  out.final_hidden = h;
  out.final_cell = c;
  return out;
}

template <typename T>
void Lstm<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  out.emplace_back(prefix + ".input_weights", input_weights_);
  out.emplace_back(prefix + ".hidden_weights", hidden_weights_);
  out.emplace_back(prefix + ".bias", bias_);
}

template <typename T>
Mlp<T>::Mlp(const std::vector<std::size_t>& dims, Rng& rng) {
  if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers_.emplace_back(dims[i], dims[i + 1], rng);
}

template <typename T>
Tensor<T> Mlp<T>::forward(const Tensor<T>& x) const {
  Tensor<T> h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h);
    if (i + 1 < layers_.size()) h = relu(h);
  }
  return h;
}

template <typename T>
void Mlp<T>::collect(const std::string& prefix, NamedParams<T>& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(prefix + ".layer" + std::to_string(i), out);
}

#define TABFORMER_INSTANTIATE_NN(T)                                                              \
  template Tensor<T> normal_init<T>(Shape, double, Rng&);                                        \
  template Tensor<T> uniform_init<T>(Shape, double, Rng&);                                       \
  template struct Linear<T>;                                                                     \
  template struct LayerNorm<T>;                                                                  \
  template Tensor<T> attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                               const std::vector<std::uint8_t>*);                                \
  template class MultiHeadAttention<T>;                                                          \
  template class EncoderBlock<T>;                                                                \
  template class TransformerEncoder<T>;                                                          \
  template class Lstm<T>;                                                                        \
  template class Mlp<T>;

TABFORMER_INSTANTIATE_NN(float)
TABFORMER_INSTANTIATE_NN(double)

}  // namespace tabformer
