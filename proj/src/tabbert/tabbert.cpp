#include "tabformer/tabbert.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tabformer/json_util.hpp"

namespace tabformer {

nlohmann::json TabBertConfig::to_json() const { return {{"field", field.to_json()}, {"sequence", sequence.to_json()}}; }

TabBertConfig TabBertConfig::from_json(const nlohmann::json& j) {
  TabBertConfig c;
  check_keys(j, c.to_json(), "tabbert config");
  if (j.contains("field")) c.field = TransformerConfig::from_json(j.at("field"));
  if (j.contains("sequence")) c.sequence = TransformerConfig::from_json(j.at("sequence"));
  return c;
}

std::size_t mask_budget(std::size_t cells, double rate) {
  if (!(rate > 0.0 && rate < 1.0)) throw std::invalid_argument("mask rate must be in (0, 1)");
  if (cells == 0) throw std::invalid_argument("mask_budget: empty window");
  const auto n = static_cast<std::size_t>(std::llround(rate * double(cells)));
  return std::clamp<std::size_t>(n, 1, cells);
}

std::pair<WindowSample, MaskPlan> mask_fields(const WindowSample& window, double rate, std::uint64_t seed) {
  const std::size_t cells = window.rows * window.fields;
  const std::size_t budget = mask_budget(cells, rate);
  // Partial Fisher-Yates: the first `budget` cells of a seeded permutation.
  std::vector<std::size_t> order(cells);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = 0; i < budget; ++i) std::swap(order[i], order[i + rng.index(cells - i)]);
  std::sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(budget));

  MaskPlan plan;
  plan.rate = rate;
  plan.seed = seed;
  WindowSample masked = window;
  for (std::size_t i = 0; i < budget; ++i) {
    const std::size_t r = order[i] / window.fields, f = order[i] % window.fields;
    plan.positions.emplace_back(r, f);
    plan.original.push_back(window.at(r, f));
    masked.at(r, f) = kMaskId;
  }
  return {std::move(masked), std::move(plan)};
}

template <typename T>
TabBertModel<T>::TabBertModel(const std::vector<std::int32_t>& field_sizes, std::int32_t vocab_size,
                              const TabBertConfig& config, Rng& rng)
    : config_(config), field_sizes_(field_sizes), vocab_size_(vocab_size) {
  if (field_sizes_.empty()) throw std::invalid_argument("TabBertModel: no fields");
  if (config_.field.causal || config_.sequence.causal) throw std::invalid_argument("TabBertModel: encoders are bidirectional");
  if (config_.field.max_positions < field_sizes_.size()) {
    throw std::invalid_argument("TabBertModel: field encoder max_positions " + std::to_string(config_.field.max_positions) +
                                " < field count " + std::to_string(field_sizes_.size()));
  }
  field_embeddings_ = normal_init<T>({static_cast<std::size_t>(vocab_size_), config_.field.hidden_dim}, 0.02, rng);
  field_encoder_ = TransformerEncoder<T>(config_.field, rng);
  row_projection_ = Linear<T>(config_.field.hidden_dim, config_.sequence.hidden_dim, rng);
  sequence_encoder_ = TransformerEncoder<T>(config_.sequence, rng);
  for (std::int32_t size : field_sizes_) {
    heads_.emplace_back(config_.sequence.hidden_dim, static_cast<std::size_t>(size), rng);
  }
}

template <typename T>
TabBertOutput<T> TabBertModel<T>::encode(std::span<const std::int32_t> grid, std::size_t batch, std::size_t rows,
                                         Rng* dropout_rng) const {
  const std::size_t n = field_sizes_.size();
  if (grid.size() != batch * rows * n) throw ShapeError("TabBertModel::encode: grid size does not match batch x rows x fields");
  // Field level: every row is an independent sequence of N' tokens.
  auto tokens = embedding_lookup(field_embeddings_, grid, {batch * rows, n});
  auto fields = field_encoder_.forward(tokens, dropout_rng);
  auto pooled = mean_axis(fields, 1);  // (batch*rows, d_field)
  auto rows_e = reshape(row_projection_.forward(pooled), {batch, rows, config_.sequence.hidden_dim});
  auto seq = sequence_encoder_.forward(rows_e, dropout_rng);
  return {rows_e, seq};
}

template <typename T>
MlmLogits<T> TabBertModel<T>::mlm_logits(const Tensor<T>& sequence, const std::vector<MaskPlan>& plans,
                                         const std::vector<std::int32_t>& field_offsets) const {
  const std::size_t n = field_sizes_.size();
  if (sequence.rank() != 3 || sequence.dim(0) != plans.size()) throw ShapeError("mlm_logits: one plan per window required");
  if (field_offsets.size() != n) throw ShapeError("mlm_logits: field offsets do not match model");
  const std::size_t rows = sequence.dim(1), d = sequence.dim(2);
  std::vector<std::vector<std::size_t>> gather(n);
  MlmLogits<T> out;
  out.targets.resize(n);
  for (std::size_t b = 0; b < plans.size(); ++b) {
    const MaskPlan& plan = plans[b];
    for (std::size_t i = 0; i < plan.size(); ++i) {
      const auto [r, f] = plan.positions[i];
      if (r >= rows || f >= n) throw std::out_of_range("mlm_logits: plan position outside the window");
      const std::int32_t local = plan.original[i] - field_offsets[f];
      if (local < 0 || local >= field_sizes_[f]) {
        throw std::out_of_range("mlm_logits: masked token is not a field-" + std::to_string(f) + " token");
      }
      gather[f].push_back(b * rows + r);
      out.targets[f].push_back(local);
      ++out.count;
    }
  }
  auto flat = reshape(sequence, {plans.size() * rows, d});
  out.per_field.resize(n);
  for (std::size_t f = 0; f < n; ++f) {
    if (!gather[f].empty()) out.per_field[f] = heads_[f].forward(index_select(flat, gather[f]));
  }
  return out;
}

template <typename T>
std::vector<Tensor<T>> TabBertModel<T>::all_field_logits(const Tensor<T>& sequence) const {
  std::vector<Tensor<T>> out;
  for (const auto& head : heads_) out.push_back(head.forward(sequence));
  return out;
}

template <typename T>
void TabBertModel<T>::collect(NamedParams<T>& out) const {
  out.emplace_back("field_embeddings", field_embeddings_);
  field_encoder_.collect("field_encoder", out);
  row_projection_.collect("row_projection", out);
  sequence_encoder_.collect("sequence_encoder", out);
  for (std::size_t f = 0; f < heads_.size(); ++f) heads_[f].collect("mlm_head." + std::to_string(f), out);
}

template <typename T>
NamedParams<T> TabBertModel<T>::parameters() const {
  NamedParams<T> out;
  collect(out);
  return out;
}

template <typename T>
Tensor<T> mlm_loss(const MlmLogits<T>& logits) {
  if (logits.count == 0) throw std::invalid_argument("mlm_loss: empty mask plan");
  Tensor<T> total;
  for (std::size_t f = 0; f < logits.per_field.size(); ++f) {
    if (logits.targets[f].empty()) continue;
    const T weight = T(double(logits.targets[f].size()) / double(logits.count));
    auto term = scale(cross_entropy(logits.per_field[f], logits.targets[f]), weight);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

template <typename T>
double masked_accuracy(const MlmLogits<T>& logits) {
  if (logits.count == 0) return 0.0;
  std::size_t hits = 0;
  for (std::size_t f = 0; f < logits.per_field.size(); ++f) {
    if (logits.targets[f].empty()) continue;
    auto data = logits.per_field[f].data();
    const std::size_t classes = logits.per_field[f].dim(1);
    for (std::size_t i = 0; i < logits.targets[f].size(); ++i) {
      const T* row = data.data() + i * classes;
      const auto best = std::max_element(row, row + classes) - row;
      hits += best == logits.targets[f][i] ? 1 : 0;
    }
  }
  return double(hits) / double(logits.count);
}

std::vector<std::int32_t> batch_grid(const std::vector<WindowSample>& windows, std::span<const std::size_t> indices) {
  std::vector<std::int32_t> grid;
  for (std::size_t i : indices) {
    const auto& w = windows.at(i);
    if (w.rows != windows[indices[0]].rows || w.fields != windows[indices[0]].fields) {
      throw ShapeError("batch_grid: windows differ in shape");
    }
    grid.insert(grid.end(), w.tokens.begin(), w.tokens.end());
  }
  return grid;
}

namespace {

template <typename Fn>
void for_batches(const std::vector<WindowSample>& windows, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    const std::size_t end = std::min(windows.size(), start + batch_size);
    std::vector<std::size_t> idx(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(start, idx);
  }
}

}  // namespace

Tensor<float> extract_sequence(const TabBertModel<float>& model, const std::vector<WindowSample>& windows,
                               std::size_t batch_size) {
  if (windows.empty()) throw std::invalid_argument("extract_sequence: no windows");
  NoGradGuard no_grad;
  const std::size_t rows = windows[0].rows, d = model.config().sequence.hidden_dim;
  std::vector<float> out(windows.size() * rows * d);
  for_batches(windows, batch_size, [&](std::size_t start, const std::vector<std::size_t>& idx) {
    auto grid = batch_grid(windows, idx);
    auto enc = model.encode(grid, idx.size(), rows);
    auto data = enc.sequence.data();
    std::copy(data.begin(), data.end(), out.begin() + static_cast<std::ptrdiff_t>(start * rows * d));
  });
  return Tensor<float>({windows.size(), rows, d}, std::move(out));
}

Tensor<float> extract_features(const TabBertModel<float>& model, const std::vector<WindowSample>& windows,
                               std::size_t batch_size) {
  if (windows.empty()) throw std::invalid_argument("extract_features: no windows");
  NoGradGuard no_grad;
  const std::size_t rows = windows[0].rows, d = model.config().sequence.hidden_dim;
  std::vector<float> out(windows.size() * d);
  for_batches(windows, batch_size, [&](std::size_t start, const std::vector<std::size_t>& idx) {
    auto grid = batch_grid(windows, idx);
    auto pooled = mean_axis(model.encode(grid, idx.size(), rows).sequence, 1);
    auto data = pooled.data();
    std::copy(data.begin(), data.end(), out.begin() + static_cast<std::ptrdiff_t>(start * d));
  });
  return Tensor<float>({windows.size(), d}, std::move(out));
}

Checkpoint tabbert_checkpoint(const TabBertModel<float>& model, const Vocabulary& vocab, nlohmann::json extra) {
  nlohmann::json meta = {{"model", "tabbert"},
                         {"config", model.config().to_json()},
                         {"field_sizes", model.field_sizes()},
                         {"vocab_size", model.vocab_size()},
                         {"vocab_fingerprint", vocab.fingerprint()}};
  if (extra.is_object()) meta.update(extra);
  return make_checkpoint(model.parameters(), std::move(meta));
}

TabBertModel<float> load_tabbert(const Checkpoint& checkpoint, const Vocabulary& vocab) {
  require_fingerprint(checkpoint, vocab.fingerprint());
  const auto& meta = checkpoint.metadata;
  if (meta.value("model", std::string()) != "tabbert") throw std::runtime_error("checkpoint is not a tabbert model");
  auto sizes = meta.at("field_sizes").get<std::vector<std::int32_t>>();
  if (sizes != vocab.field_sizes()) throw FingerprintMismatch("tabbert checkpoint field sizes differ from vocabulary");
  Rng unused(0);
  TabBertModel<float> model(sizes, meta.at("vocab_size").get<std::int32_t>(),
                            TabBertConfig::from_json(meta.at("config")), unused);
  auto params = model.parameters();
  load_params(checkpoint, params);
  return model;
}

template class TabBertModel<float>;
template class TabBertModel<double>;
template Tensor<float> mlm_loss(const MlmLogits<float>&);
template Tensor<double> mlm_loss(const MlmLogits<double>&);
template double masked_accuracy(const MlmLogits<float>&);
template double masked_accuracy(const MlmLogits<double>&);

}  // namespace tabformer
