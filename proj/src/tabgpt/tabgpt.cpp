#include "tabformer/tabgpt.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "tabformer/json_util.hpp"

namespace tabformer {

FlatSequence flatten(const WindowSample& window) {
  if (window.tokens.size() != window.rows * window.fields) throw ShapeError("flatten: window grid has the wrong size");
  FlatSequence flat;
  flat.fields = window.fields;
  flat.tokens.reserve(window.rows * (window.fields + 1));
  for (std::size_t r = 0; r < window.rows; ++r) {
    for (std::size_t f = 0; f < window.fields; ++f) flat.tokens.push_back(window.at(r, f));
    flat.row_boundaries.push_back(flat.tokens.size());
    flat.tokens.push_back(kSepId);
  }
  return flat;
}

WindowSample unflatten(const FlatSequence& flat) {
  const std::size_t stride = flat.fields + 1;
  if (flat.fields == 0 || flat.tokens.size() % stride != 0) throw ShapeError("unflatten: length is not a multiple of N'+1");
  WindowSample w;
  w.fields = flat.fields;
  w.rows = flat.tokens.size() / stride;
  for (std::size_t r = 0; r < w.rows; ++r) {
    if (flat.tokens[r * stride + flat.fields] != kSepId) {
      throw std::invalid_argument("unflatten: missing [SEP] after row " + std::to_string(r));
    }
    w.tokens.insert(w.tokens.end(), flat.tokens.begin() + static_cast<std::ptrdiff_t>(r * stride),
                    flat.tokens.begin() + static_cast<std::ptrdiff_t>(r * stride + flat.fields));
  }
  return w;
}

template <typename T>
TabGptModel<T>::TabGptModel(std::int32_t vocab_size, const TransformerConfig& config, Rng& rng)
    : config_(config), vocab_size_(vocab_size) {
  if (!config_.causal) throw std::invalid_argument("TabGptModel: encoder must be causal");
  if (vocab_size_ <= kNumSpecialTokens) throw std::invalid_argument("TabGptModel: empty vocabulary");
  embeddings_ = normal_init<T>({static_cast<std::size_t>(vocab_size_), config_.hidden_dim}, 0.02, rng);
  encoder_ = TransformerEncoder<T>(config_, rng);
}

template <typename T>
Tensor<T> TabGptModel<T>::project(const Tensor<T>& hidden) const {
  return matmul(hidden, transpose(embeddings_));
}

template <typename T>
Tensor<T> TabGptModel<T>::logits(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len) const {
  if (tokens.size() != batch * len) throw ShapeError("TabGptModel::logits: token count does not match batch x len");
  return project(encoder_.forward(embedding_lookup(embeddings_, tokens, {batch, len})));
}

template <typename T>
Tensor<T> TabGptModel<T>::step(std::span<const std::int32_t> tokens, KvCache<T>& cache) const {
  return project(encoder_.forward_step(embedding_lookup(embeddings_, tokens, {tokens.size(), 1}), cache));
}

template <typename T>
void TabGptModel<T>::collect(NamedParams<T>& out) const {
  out.emplace_back("embeddings", embeddings_);
  encoder_.collect("encoder", out);
}

template <typename T>
NamedParams<T> TabGptModel<T>::parameters() const {
  NamedParams<T> out;
  collect(out);
  return out;
}

template <typename T>
Tensor<T> causal_lm_loss(const TabGptModel<T>& model, std::span<const std::int32_t> tokens, std::size_t batch,
                         std::size_t len) {
  if (len < 2) throw std::invalid_argument("causal_lm_loss: sequences need at least two tokens");
  if (tokens.size() != batch * len) throw ShapeError("causal_lm_loss: token count does not match batch x len");
  std::vector<std::int32_t> input, target;
  input.reserve(batch * (len - 1));
  target.reserve(batch * (len - 1));
  for (std::size_t b = 0; b < batch; ++b) {
    input.insert(input.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * len),
                 tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * len - 1));
    target.insert(target.end(), tokens.begin() + static_cast<std::ptrdiff_t>(b * len + 1),
                  tokens.begin() + static_cast<std::ptrdiff_t>((b + 1) * len));
  }
  auto logits = model.logits(input, batch, len - 1);
  return cross_entropy(reshape(logits, {batch * (len - 1), static_cast<std::size_t>(model.vocab_size())}), target);
}

std::string to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::greedy: return "greedy";
    case SamplingMode::top_k: return "top_k";
    case SamplingMode::temperature: return "temperature";
  }
  return "temperature";
}

SamplingMode sampling_mode_from_string(const std::string& text) {
  if (text == "greedy") return SamplingMode::greedy;
  if (text == "top_k") return SamplingMode::top_k;
  if (text == "temperature") return SamplingMode::temperature;
  throw ConfigError("unknown sampling mode '" + text + "' (greedy, top_k, temperature)");
}

nlohmann::json SamplingConfig::to_json() const {
  return {{"mode", to_string(mode)}, {"temperature", temperature}, {"top_k", top_k}};
}

SamplingConfig SamplingConfig::from_json(const nlohmann::json& j) {
  SamplingConfig c;
  check_keys(j, c.to_json(), "sampling config");
  std::string mode = to_string(c.mode);
  read_key(j, "mode", mode);
  c.mode = sampling_mode_from_string(mode);
  read_key(j, "temperature", c.temperature);
  read_key(j, "top_k", c.top_k);
  if (c.temperature < 0.0) throw ConfigError("sampling temperature must be >= 0");
  if (c.top_k == 0) throw ConfigError("sampling top_k must be >= 1");
  return c;
}

std::size_t sample_field(std::span<const float> field_logits, const SamplingConfig& sampling, Rng& rng) {
  if (field_logits.empty()) throw std::invalid_argument("sample_field: empty field");
  const auto argmax = static_cast<std::size_t>(std::max_element(field_logits.begin(), field_logits.end()) - field_logits.begin());
  if (sampling.mode == SamplingMode::greedy || sampling.temperature <= 1e-6) return argmax;

  std::vector<std::size_t> candidates(field_logits.size());
  std::iota(candidates.begin(), candidates.end(), 0);
  if (sampling.mode == SamplingMode::top_k && sampling.top_k < candidates.size()) {
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(sampling.top_k),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                        return field_logits[a] != field_logits[b] ? field_logits[a] > field_logits[b] : a < b;
                      });
    candidates.resize(sampling.top_k);
    std::sort(candidates.begin(), candidates.end());
  }
  const double top = field_logits[argmax];
  std::vector<double> weights;
  weights.reserve(candidates.size());
  for (std::size_t c : candidates) weights.push_back(std::exp((double(field_logits[c]) - top) / sampling.temperature));
  return candidates[rng.categorical(weights)];
}

std::vector<WindowSample> generate(const TabGptModel<float>& model, const Vocabulary& vocab,
                                   const std::vector<std::vector<std::int32_t>>& prefixes,
                                   std::size_t rows_to_generate, const SamplingConfig& sampling, std::uint64_t seed) {
  const std::size_t n = vocab.field_count();
  if (model.vocab_size() != vocab.total_size()) throw FingerprintMismatch("generate: model and vocabulary sizes differ");
  const std::size_t stride = n + 1;
  const std::size_t total = (1 + rows_to_generate) * stride;
  if (total - 1 > model.config().max_positions) {
    throw std::invalid_argument("generate: " + std::to_string(1 + rows_to_generate) + " rows exceed the model context");
  }
  for (const auto& p : prefixes) {
    if (p.size() != n) throw FingerprintMismatch("generate: prefix row has " + std::to_string(p.size()) + " tokens");
    for (std::size_t f = 0; f < n; ++f) {
      if (!vocab.field(f).owns(p[f])) throw FingerprintMismatch("generate: prefix token outside its field range");
    }
  }

  NoGradGuard no_grad;
  const Rng root(seed);
  const std::size_t vocab_size = static_cast<std::size_t>(model.vocab_size());
  std::vector<WindowSample> out;
  constexpr std::size_t kChunk = 32;
  for (std::size_t start = 0; start < prefixes.size(); start += kChunk) {
    const std::size_t batch = std::min(kChunk, prefixes.size() - start);
    std::vector<Rng> rngs;
    std::vector<std::vector<std::int32_t>> seqs(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      rngs.push_back(root.split(start + b));
      seqs[b] = prefixes[start + b];
      seqs[b].push_back(kSepId);
    }
    KvCache<float> cache;
    Tensor<float> last;
    std::vector<std::int32_t> feed(batch);
    for (std::size_t pos = 0; pos < total; ++pos) {
      if (pos >= stride) {
        // Position `pos` is produced from the logits of the previous step.
        const std::size_t f = pos % stride;
        for (std::size_t b = 0; b < batch; ++b) {
          if (f == n) {
            seqs[b].push_back(kSepId);
            continue;
          }
          const FieldVocab& fv = vocab.field(f);
          auto all = last.data().subspan(b * vocab_size + static_cast<std::size_t>(fv.offset), static_cast<std::size_t>(fv.size()));
          seqs[b].push_back(fv.global_id(static_cast<std::int32_t>(sample_field(all, sampling, rngs[b]))));
        }
      }
      if (pos + 1 == total) break;
      for (std::size_t b = 0; b < batch; ++b) feed[b] = seqs[b][pos];
      last = model.step(feed, cache);
    }
    for (std::size_t b = 0; b < batch; ++b) {
      FlatSequence flat;
      flat.fields = n;
      flat.tokens = std::move(seqs[b]);
      out.push_back(unflatten(flat));
    }
  }
  return out;
}

nlohmann::json GptTrainConfig::to_json() const {
  return {{"model", model.to_json()},   {"window", window},       {"stride", stride},
          {"steps", steps},             {"batch_size", batch_size}, {"learning_rate", learning_rate},
          {"clip_norm", clip_norm}};
}

GptTrainConfig GptTrainConfig::from_json(const nlohmann::json& j) {
  GptTrainConfig c;
  check_keys(j, c.to_json(), "gpt config");
  if (j.contains("model")) c.model = TransformerConfig::from_json(j.at("model"));
  read_key(j, "window", c.window);
  read_key(j, "stride", c.stride);
  read_key(j, "steps", c.steps);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "clip_norm", c.clip_norm);
  return c;
}

nlohmann::json GptLogEntry::to_json() const { return {{"step", step}, {"loss", loss}, {"wall_time", wall_time}}; }

namespace {

std::vector<std::int32_t> flat_batch(const std::vector<WindowSample>& windows, std::span<const std::size_t> idx) {
  std::vector<std::int32_t> out;
  for (std::size_t i : idx) {
    auto f = flatten(windows.at(i));
    out.insert(out.end(), f.tokens.begin(), f.tokens.end());
  }
  return out;
}

}  // namespace

GptTrainResult train_per_user(const EntityRows& rows, const Vocabulary& vocab, const GptTrainConfig& config,
                              std::uint64_t seed, const std::function<void(const GptLogEntry&)>& on_step) {
  if (config.batch_size == 0) throw ConfigError("gpt config: batch_size must be positive");
  auto windows = make_windows(rows, config.window, config.stride);
  if (windows.empty()) {
    throw std::invalid_argument("train_per_user: entity '" + rows.entity_id + "' has " +
                                std::to_string(rows.tokens.size()) + " rows, fewer than one window");
  }
  for (const auto& w : windows) {
    if (!validate_window(w, vocab)) throw FingerprintMismatch("train_per_user: rows do not match the vocabulary");
  }
  const std::size_t len = config.window * (vocab.field_count() + 1);
  if (len - 1 > config.model.max_positions) {
    throw ConfigError("gpt config: max_positions " + std::to_string(config.model.max_positions) + " < sequence length " +
                      std::to_string(len - 1));
  }
  Rng root(seed);
  Rng init = root.split("init");
  Rng batches = root.split("batches");
  GptTrainResult result{TabGptModel<float>(vocab.total_size(), config.model, init), {}, windows};
  Adam<float> adam(param_tensors(result.model.parameters()), {config.learning_rate});

  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  const auto started = std::chrono::steady_clock::now();
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<std::size_t> idx;
    while (idx.size() < std::min(config.batch_size, windows.size())) {
      if (cursor == order.size()) {
        batches.shuffle(order);
        cursor = 0;
      }
      idx.push_back(order[cursor++]);
    }
    auto tokens = flat_batch(windows, idx);
    adam.zero_grad();
    auto loss = causal_lm_loss(result.model, tokens, idx.size(), len);
    loss.backward();
    if (config.clip_norm > 0.0) adam.clip_grad_norm(config.clip_norm);
    adam.step();
    GptLogEntry entry{step, loss.item(),
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count()};
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return result;
}

double perplexity(const TabGptModel<float>& model, const std::vector<WindowSample>& windows, std::size_t batch_size) {
  if (windows.empty()) throw std::invalid_argument("perplexity: no windows");
  NoGradGuard no_grad;
  const std::size_t len = windows[0].rows * (windows[0].fields + 1);
  double total = 0.0;
  for (std::size_t start = 0; start < windows.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, windows.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto tokens = flat_batch(windows, idx);
    total += causal_lm_loss(model, tokens, idx.size(), len).item() * double(idx.size());
  }
  return std::exp(total / double(windows.size()));
}

Checkpoint tabgpt_checkpoint(const TabGptModel<float>& model, const Vocabulary& vocab, const std::string& user_id,
                             nlohmann::json extra) {
  nlohmann::json meta = {{"model", "tabgpt"},
                         {"config", model.config().to_json()},
                         {"vocab_size", model.vocab_size()},
                         {"user_id", user_id},
                         {"vocab_fingerprint", vocab.fingerprint()}};
  if (extra.is_object()) meta.update(extra);
  return make_checkpoint(model.parameters(), std::move(meta));
}

TabGptModel<float> load_tabgpt(const Checkpoint& checkpoint, const Vocabulary& vocab) {
  require_fingerprint(checkpoint, vocab.fingerprint());
  const auto& meta = checkpoint.metadata;
  if (meta.value("model", std::string()) != "tabgpt") throw std::runtime_error("checkpoint is not a tabgpt model");
  Rng unused(0);
  TabGptModel<float> model(meta.at("vocab_size").get<std::int32_t>(), TransformerConfig::from_json(meta.at("config")),
                           unused);
  auto params = model.parameters();
  load_params(checkpoint, params);
  return model;
}

Table decode_windows(const std::vector<WindowSample>& windows, const Vocabulary& vocab) {
  const TableSchema& schema = vocab.schema();
  Table table;
  for (const auto& f : schema.fields) table.header.push_back(f.name);
  const auto& mfields = vocab.model_fields();
  for (const auto& w : windows) {
    if (w.fields != mfields.size()) throw ShapeError("decode_windows: window width does not match the vocabulary");
    for (std::size_t r = 0; r < w.rows; ++r) {
      std::vector<std::string> row(schema.fields.size());
      std::vector<int> hour(schema.fields.size(), -1), dow(schema.fields.size(), -1);
      for (std::size_t f = 0; f < mfields.size(); ++f) {
        const std::string value = vocab.decode_value(f, w.at(r, f));
        switch (mfields[f].kind) {
          case ModelFieldKind::hour: hour[mfields[f].column] = value.empty() ? -1 : std::stoi(value); break;
          case ModelFieldKind::day_of_week: dow[mfields[f].column] = value.empty() ? -1 : std::stoi(value); break;
          default: row[mfields[f].column] = value;
        }
      }
      for (std::size_t c = 0; c < schema.fields.size(); ++c) {
        if (hour[c] < 0 || dow[c] < 0) continue;
        // 2000-01-02 is a Sunday.
        char buf[64];
        std::snprintf(buf, sizeof(buf), "2000-01-%02d %02d:00", 2 + dow[c], hour[c]);
        row[c] = buf;
      }
      table.rows.push_back(std::move(row));
    }
  }
  return table;
}

nlohmann::json windows_to_json(const std::vector<WindowSample>& windows, const Vocabulary& vocab) {
  nlohmann::json list = nlohmann::json::array();
  for (const auto& w : windows) {
    list.push_back({{"entity_id", w.entity_id}, {"start_index", w.start_index}, {"tokens", w.tokens}});
  }
  return {{"vocab_fingerprint", vocab.fingerprint()},
          {"rows", windows.empty() ? 0 : windows[0].rows},
          {"fields", vocab.field_count()},
          {"windows", list}};
}

std::vector<WindowSample> windows_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  if (j.at("vocab_fingerprint").get<std::string>() != vocab.fingerprint()) {
    throw FingerprintMismatch("token grid was produced with a different vocabulary");
  }
  const auto rows = j.at("rows").get<std::size_t>();
  const auto fields = j.at("fields").get<std::size_t>();
  std::vector<WindowSample> out;
  for (const auto& item : j.at("windows")) {
    WindowSample w;
    w.entity_id = item.at("entity_id").get<std::string>();
    w.start_index = item.at("start_index").get<std::size_t>();
    w.rows = rows;
    w.fields = fields;
    w.tokens = item.at("tokens").get<std::vector<std::int32_t>>();
    if (!validate_window(w, vocab)) throw std::runtime_error("token grid: window fails range validation");
    out.push_back(std::move(w));
  }
  return out;
}

template class TabGptModel<float>;
template class TabGptModel<double>;
template Tensor<float> causal_lm_loss(const TabGptModel<float>&, std::span<const std::int32_t>, std::size_t, std::size_t);
template Tensor<double> causal_lm_loss(const TabGptModel<double>&, std::span<const std::int32_t>, std::size_t,
                                       std::size_t);

}  // namespace tabformer
