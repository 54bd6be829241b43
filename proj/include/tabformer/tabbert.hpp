#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabformer/checkpoint.hpp"
#include "tabformer/datapipe.hpp"
#include "tabformer/nn.hpp"

namespace tabformer {

struct TabBertConfig {
  /// Field transformer over the N' fields of one row (max_positions >= N').
  TransformerConfig field{2, 2, 64, 128, 16, false};
  /// Sequence transformer over the T row embeddings (max_positions >= T).
  TransformerConfig sequence{2, 2, 64, 128, 16, false};

  nlohmann::json to_json() const;
  static TabBertConfig from_json(const nlohmann::json& j);
};

/// Masked positions of one window. Positions are sorted (row, field) pairs.
struct MaskPlan {
  std::vector<std::pair<std::size_t, std::size_t>> positions;
  std::vector<std::int32_t> original;  // global ids, aligned with positions
  double rate = 0.15;
  std::uint64_t seed = 0;

  std::size_t size() const { return positions.size(); }
};

/// round(rate * cells), but at least one.
std::size_t mask_budget(std::size_t cells, double rate);

/// Replaces a uniformly chosen set of mask_budget(T*N', rate) cells with
/// [MASK]. The window grid holds model fields only, so label and target
/// columns can never be selected.
std::pair<WindowSample, MaskPlan> mask_fields(const WindowSample& window, double rate, std::uint64_t seed);

/// Masked-field logits for a batch, grouped by field: per_field[f] has one
/// row per masked cell of field f and |vocab(f)| columns.
template <typename T>
struct MlmLogits {
  std::vector<Tensor<T>> per_field;
  std::vector<std::vector<std::int32_t>> targets;  // local ids
  std::size_t count = 0;
};

template <typename T>
struct TabBertOutput {
  Tensor<T> row_embeddings;  // E: (batch, T, d_seq)
  Tensor<T> sequence;        // SE: (batch, T, d_seq)
};

template <typename T>
class TabBertModel {
 public:
  TabBertModel() = default;
  TabBertModel(const std::vector<std::int32_t>& field_sizes, std::int32_t vocab_size, const TabBertConfig& config,
               Rng& rng);

  /// grid: batch * rows * N' global ids, row-major.
  TabBertOutput<T> encode(std::span<const std::int32_t> grid, std::size_t batch, std::size_t rows,
                          Rng* dropout_rng = nullptr) const;

  /// Per-field head scores for the masked cells of a batch. `plans[b]`
  /// belongs to window b.
  MlmLogits<T> mlm_logits(const Tensor<T>& sequence, const std::vector<MaskPlan>& plans,
                          const std::vector<std::int32_t>& field_offsets) const;

  /// Scores of every field head on every row: (batch, T, |vocab(f)|) per field.
  std::vector<Tensor<T>> all_field_logits(const Tensor<T>& sequence) const;

  void collect(NamedParams<T>& out) const;
  NamedParams<T> parameters() const;

  const TabBertConfig& config() const { return config_; }
  std::size_t field_count() const { return field_sizes_.size(); }
  const std::vector<std::int32_t>& field_sizes() const { return field_sizes_; }
  std::int32_t vocab_size() const { return vocab_size_; }

 private:
  TabBertConfig config_;
  std::vector<std::int32_t> field_sizes_;
  std::int32_t vocab_size_ = 0;
  Tensor<T> field_embeddings_;  // (vocab, d_field)
  TransformerEncoder<T> field_encoder_;
  Linear<T> row_projection_;  // d_field -> d_seq
  TransformerEncoder<T> sequence_encoder_;
  std::vector<Linear<T>> heads_;  // per field: d_seq -> |vocab(f)|
};

/// Mean cross-entropy over every masked cell. Throws on an empty plan.
template <typename T>
Tensor<T> mlm_loss(const MlmLogits<T>& logits);

/// Fraction of masked cells whose argmax equals the original token.
template <typename T>
double masked_accuracy(const MlmLogits<T>& logits);

/// Flattens windows into one batch grid.
std::vector<std::int32_t> batch_grid(const std::vector<WindowSample>& windows, std::span<const std::size_t> indices);

/// v = mean_t SE_t per window, computed without a graph. Rows of the result
/// follow `windows`.
Tensor<float> extract_features(const TabBertModel<float>& model, const std::vector<WindowSample>& windows,
                               std::size_t batch_size = 64);
/// Per-row SE_t (windows, T, d_seq), for sequence heads.
Tensor<float> extract_sequence(const TabBertModel<float>& model, const std::vector<WindowSample>& windows,
                               std::size_t batch_size = 64);

struct PretrainConfig {
  TabBertConfig model;
  std::size_t steps = 2000;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double mask_rate = 0.15;
  double clip_norm = 1.0;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

struct PretrainLogEntry {
  std::size_t step = 0;
  double loss = 0.0;
  double masked_accuracy = 0.0;
  double wall_time = 0.0;  // seconds since training started

  nlohmann::json to_json() const;
};

struct PretrainResult {
  TabBertModel<float> model;
  std::vector<PretrainLogEntry> log;
};

/// MLM pretraining on vocab-encoded windows. Streams are split from `seed`
/// by name ("init", "batches", "masking"). `on_step` is called after every
/// step (for structured logging).
PretrainResult pretrain(const std::vector<WindowSample>& windows, const Vocabulary& vocab,
                        const PretrainConfig& config, std::uint64_t seed,
                        const std::function<void(const PretrainLogEntry&)>& on_step = {});

/// Checkpoint with model config, field sizes and the vocab fingerprint.
Checkpoint tabbert_checkpoint(const TabBertModel<float>& model, const Vocabulary& vocab, nlohmann::json extra = {});
/// Rebuilds a model from a checkpoint; throws FingerprintMismatch when the
/// vocabulary differs from the one used for training.
TabBertModel<float> load_tabbert(const Checkpoint& checkpoint, const Vocabulary& vocab);

extern template class TabBertModel<float>;
extern template class TabBertModel<double>;

}  // namespace tabformer
