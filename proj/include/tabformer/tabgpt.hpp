#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabformer/checkpoint.hpp"
#include "tabformer/csv.hpp"
#include "tabformer/datapipe.hpp"
#include "tabformer/nn.hpp"

namespace tabformer {

/// Rows of N' field tokens, each followed by [SEP].
struct FlatSequence {
  std::vector<std::int32_t> tokens;
  std::vector<std::size_t> row_boundaries;  // indices of the [SEP] tokens
  std::size_t fields = 0;
};

FlatSequence flatten(const WindowSample& window);
/// Inverse of flatten; throws when a boundary is not [SEP].
WindowSample unflatten(const FlatSequence& flat);

template <typename T>
class TabGptModel {
 public:
  TabGptModel() = default;
  /// Input and output embeddings are tied.
  TabGptModel(std::int32_t vocab_size, const TransformerConfig& config, Rng& rng);

  /// tokens: batch * len ids -> logits (batch, len, vocab).
  Tensor<T> logits(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t len) const;
  /// Next-token logits for one new position per batch row, (batch, 1, vocab).
  Tensor<T> step(std::span<const std::int32_t> tokens, KvCache<T>& cache) const;

  void collect(NamedParams<T>& out) const;
  NamedParams<T> parameters() const;
  const TransformerConfig& config() const { return config_; }
  std::int32_t vocab_size() const { return vocab_size_; }

 private:
  Tensor<T> project(const Tensor<T>& hidden) const;

  TransformerConfig config_;
  std::int32_t vocab_size_ = 0;
  Tensor<T> embeddings_;  // (vocab, hidden), shared by input and output
  TransformerEncoder<T> encoder_;
};

/// Mean next-token cross-entropy over a batch of equal-length flat
/// sequences: position t is supervised by token t+1.
template <typename T>
Tensor<T> causal_lm_loss(const TabGptModel<T>& model, std::span<const std::int32_t> tokens, std::size_t batch,
                         std::size_t len);

enum class SamplingMode { greedy, top_k, temperature };

struct SamplingConfig {
  SamplingMode mode = SamplingMode::temperature;
  double temperature = 1.0;
  std::size_t top_k = 10;

  nlohmann::json to_json() const;
  static SamplingConfig from_json(const nlohmann::json& j);
};

SamplingMode sampling_mode_from_string(const std::string& text);
std::string to_string(SamplingMode mode);

/// Picks a local index from logits restricted to one field's range.
/// Temperature <= 1e-6 falls back to greedy.
std::size_t sample_field(std::span<const float> field_logits, const SamplingConfig& sampling, Rng& rng);

/// Continues each prefix row with `rows_to_generate` rows under
/// field-constrained decoding: position f of a row only considers field f's
/// ids, and [SEP] is inserted after every row. Returns one window per prefix
/// with 1 + rows_to_generate rows.
std::vector<WindowSample> generate(const TabGptModel<float>& model, const Vocabulary& vocab,
                                   const std::vector<std::vector<std::int32_t>>& prefixes,
                                   std::size_t rows_to_generate, const SamplingConfig& sampling, std::uint64_t seed);

struct GptTrainConfig {
  TransformerConfig model{4, 4, 128, 256, 130, true};
  std::size_t window = 10;
  std::size_t stride = 10;
  std::size_t steps = 600;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;

  nlohmann::json to_json() const;
  static GptTrainConfig from_json(const nlohmann::json& j);
};

struct GptLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double wall_time = 0.0;
  nlohmann::json to_json() const;
};

struct GptTrainResult {
  TabGptModel<float> model;
  std::vector<GptLogEntry> log;
  std::vector<WindowSample> windows;  // training windows
};

/// Trains one model on one entity's chronological rows.
GptTrainResult train_per_user(const EntityRows& rows, const Vocabulary& vocab, const GptTrainConfig& config,
                              std::uint64_t seed, const std::function<void(const GptLogEntry&)>& on_step = {});

/// exp(mean next-token cross-entropy) over the flattened windows.
double perplexity(const TabGptModel<float>& model, const std::vector<WindowSample>& windows,
                  std::size_t batch_size = 16);

Checkpoint tabgpt_checkpoint(const TabGptModel<float>& model, const Vocabulary& vocab, const std::string& user_id,
                             nlohmann::json extra = {});
TabGptModel<float> load_tabgpt(const Checkpoint& checkpoint, const Vocabulary& vocab);

/// Decodes generated windows back to source-schema rows: categories as
/// strings, continuous fields as bucket centers, timestamps as a date in a
/// reference week with the generated weekday and hour. Label and target
/// columns are left empty.
Table decode_windows(const std::vector<WindowSample>& windows, const Vocabulary& vocab);

/// Token-grid JSON: fingerprint, rows, fields and one id list per window.
nlohmann::json windows_to_json(const std::vector<WindowSample>& windows, const Vocabulary& vocab);
std::vector<WindowSample> windows_from_json(const nlohmann::json& j, const Vocabulary& vocab);

extern template class TabGptModel<float>;
extern template class TabGptModel<double>;

}  // namespace tabformer
