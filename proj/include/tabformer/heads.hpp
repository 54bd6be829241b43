#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tabformer/datapipe.hpp"
#include "tabformer/nn.hpp"
#include "tabformer/tabbert.hpp"

namespace tabformer {

enum class FeatureSource { raw, tabbert };
enum class HeadKind { mlp, lstm };
enum class TaskKind { classification, regression };
/// concatenated: RMSE over every target's errors pooled together.
/// mean_per_target: mean of the per-target RMSEs.
enum class RmseMode { concatenated, mean_per_target };

std::string to_string(FeatureSource v);
std::string to_string(HeadKind v);
std::string to_string(TaskKind v);
std::string to_string(RmseMode v);

struct DownstreamConfig {
  FeatureSource feature_source = FeatureSource::raw;
  HeadKind head = HeadKind::mlp;
  TaskKind task = TaskKind::classification;
  bool upsample = true;
  /// MLP: hidden widths. LSTM: the first entry is the state size.
  std::vector<std::size_t> head_dims = {64, 32};
  /// Width of the trainable embedding table on the raw path.
  std::size_t raw_embedding_dim = 64;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double test_fraction = 0.2;
  RmseMode rmse = RmseMode::concatenated;

  void validate() const;
  nlohmann::json to_json() const;
  static DownstreamConfig from_json(const nlohmann::json& j);
};

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Confusion confusion(std::span<const int> predicted, std::span<const int> actual);
/// Binary F1 of the positive class; 0 when there are no true positives.
double f1_score(const Confusion& c);
/// predicted/actual: one vector of target values per sample.
double combined_rmse(const std::vector<std::vector<double>>& predicted, const std::vector<std::vector<double>>& actual,
                     RmseMode mode = RmseMode::concatenated);

struct TaskMetrics {
  std::optional<double> f1;
  std::optional<double> rmse;
  std::optional<Confusion> confusion;
  std::size_t n_train = 0;  // before upsampling
  std::size_t n_train_resampled = 0;
  std::size_t n_test = 0;

  nlohmann::json to_json() const;
};

/// Indices into `labels` with the minority class duplicated (drawn with
/// replacement) until both classes have the same count. Every original index
/// appears once, in order, before the duplicates.
std::vector<std::size_t> upsample_minority(std::span<const int> labels, std::uint64_t seed);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle split; both parts come back sorted. Each part is non-empty.
SplitIndices split_indices(std::size_t n, double test_fraction, std::uint64_t seed);

/// Per-row mean of field embeddings: grid (batch, rows, fields) ids ->
/// (batch, rows, dim).
template <typename T>
Tensor<T> raw_features(const Tensor<T>& table, std::span<const std::int32_t> grid, std::size_t batch, std::size_t rows,
                       std::size_t fields);

/// Inputs to one downstream run. On the tabbert path `sequence` holds frozen
/// per-row backbone outputs (windows, T, d) computed once up front.
struct DownstreamData {
  std::vector<WindowSample> windows;
  Tensor<float> sequence;
};

DownstreamData raw_data(std::vector<WindowSample> windows);
DownstreamData tabbert_data(const TabBertModel<float>& backbone, std::vector<WindowSample> windows);
DownstreamData subset(const DownstreamData& data, std::span<const std::size_t> indices);

/// Head over per-row features: MLP on the flattened window, or an LSTM whose
/// final state feeds a linear layer.
class DownstreamModel {
 public:
  DownstreamModel(const DownstreamConfig& config, std::size_t rows, std::size_t fields, std::size_t feature_dim,
                  std::int32_t vocab_size, std::size_t outputs, Rng& rng);

  /// Batch of windows -> (batch, outputs).
  Tensor<float> forward(const DownstreamData& data, std::span<const std::size_t> indices) const;
  NamedParams<float> parameters() const;

 private:
  DownstreamConfig config_;
  std::size_t rows_, fields_, feature_dim_;
  Tensor<float> embeddings_;  // raw path only
  Mlp<float> mlp_;
  Lstm<float> lstm_;
  Linear<float> out_;
};

struct DownstreamEpoch {
  std::size_t epoch = 0;
  double loss = 0.0;
  nlohmann::json to_json() const;
};

struct DownstreamResult {
  TaskMetrics metrics;
  /// Classification: positive-class probability. Regression: predicted
  /// targets in source units, flattened per sample.
  std::vector<double> test_outputs;
  std::vector<DownstreamEpoch> log;
};

/// Trains a fresh head on `train` and scores it on `test`.
DownstreamResult train_downstream(const DownstreamConfig& config, const DownstreamData& train,
                                  const DownstreamData& test, std::int32_t vocab_size, std::uint64_t seed,
                                  const std::function<void(const DownstreamEpoch&)>& on_epoch = {});

}  // namespace tabformer
