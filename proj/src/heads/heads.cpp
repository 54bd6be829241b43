#include "tabformer/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "tabformer/json_util.hpp"
#include "tabformer/optim.hpp"

namespace tabformer {

namespace {

template <typename E>
E enum_from(const std::string& text, std::initializer_list<E> values, const char* what) {
  for (E v : values) {
    if (to_string(v) == text) return v;
  }
  throw ConfigError(std::string("unknown ") + what + " '" + text + "'");
}

}  // namespace

std::string to_string(FeatureSource v) { return v == FeatureSource::raw ? "raw" : "tabbert"; }
std::string to_string(HeadKind v) { return v == HeadKind::mlp ? "mlp" : "lstm"; }
std::string to_string(TaskKind v) { return v == TaskKind::classification ? "classification" : "regression"; }
std::string to_string(RmseMode v) { return v == RmseMode::concatenated ? "concatenated" : "mean_per_target"; }

void DownstreamConfig::validate() const {
  if (head_dims.empty()) throw ConfigError("downstream config: head_dims must not be empty");
  for (std::size_t d : head_dims) {
    if (d == 0) throw ConfigError("downstream config: head_dims entries must be positive");
  }
  if (raw_embedding_dim == 0) throw ConfigError("downstream config: raw_embedding_dim must be positive");
  if (batch_size == 0) throw ConfigError("downstream config: batch_size must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("downstream config: test_fraction must be in (0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("downstream config: learning_rate must be positive");
}

nlohmann::json DownstreamConfig::to_json() const {
  return {{"feature_source", to_string(feature_source)},
          {"head", to_string(head)},
          {"task", to_string(task)},
          {"upsample", upsample},
          {"head_dims", head_dims},
          {"raw_embedding_dim", raw_embedding_dim},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"test_fraction", test_fraction},
          {"rmse", to_string(rmse)}};
}

DownstreamConfig DownstreamConfig::from_json(const nlohmann::json& j) {
  DownstreamConfig c;
  check_keys(j, c.to_json(), "downstream config");
  std::string source = to_string(c.feature_source), head = to_string(c.head), task = to_string(c.task),
              rmse = to_string(c.rmse);
  read_key(j, "feature_source", source);
  read_key(j, "head", head);
  read_key(j, "task", task);
  read_key(j, "rmse", rmse);
  c.feature_source = enum_from(source, {FeatureSource::raw, FeatureSource::tabbert}, "feature_source");
  c.head = enum_from(head, {HeadKind::mlp, HeadKind::lstm}, "head");
  c.task = enum_from(task, {TaskKind::classification, TaskKind::regression}, "task");
  c.rmse = enum_from(rmse, {RmseMode::concatenated, RmseMode::mean_per_target}, "rmse mode");
  read_key(j, "upsample", c.upsample);
  read_key(j, "head_dims", c.head_dims);
  read_key(j, "raw_embedding_dim", c.raw_embedding_dim);
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "test_fraction", c.test_fraction);
  c.validate();
  return c;
}

Confusion confusion(std::span<const int> predicted, std::span<const int> actual) {
  if (predicted.size() != actual.size()) throw std::invalid_argument("confusion: size mismatch");
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool p = predicted[i] != 0, a = actual[i] != 0;
    if (p && a) ++c.tp;
    else if (p) ++c.fp;
    else if (a) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double f1_score(const Confusion& c) {
  if (c.tp == 0) return 0.0;
  const double precision = double(c.tp) / double(c.tp + c.fp);
  const double recall = double(c.tp) / double(c.tp + c.fn);
  return 2.0 * precision * recall / (precision + recall);
}

double combined_rmse(const std::vector<std::vector<double>>& predicted, const std::vector<std::vector<double>>& actual,
                     RmseMode mode) {
  if (predicted.size() != actual.size() || predicted.empty()) throw std::invalid_argument("combined_rmse: size mismatch");
  const std::size_t k = actual[0].size();
  std::vector<double> sq(k, 0.0);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i].size() != k || actual[i].size() != k) throw std::invalid_argument("combined_rmse: ragged targets");
    for (std::size_t t = 0; t < k; ++t) {
      const double e = predicted[i][t] - actual[i][t];
      sq[t] += e * e;
    }
  }
  const double n = double(predicted.size());
  if (mode == RmseMode::concatenated) return std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0) / (n * double(k)));
  double total = 0.0;
  for (double s : sq) total += std::sqrt(s / n);
  return total / double(k);
}

nlohmann::json TaskMetrics::to_json() const {
  nlohmann::json j = {{"n_train", n_train}, {"n_train_resampled", n_train_resampled}, {"n_test", n_test}};
  j["f1"] = f1 ? nlohmann::json(*f1) : nlohmann::json();
  j["rmse"] = rmse ? nlohmann::json(*rmse) : nlohmann::json();
  if (confusion) {
    j["confusion"] = {{"tp", confusion->tp}, {"fp", confusion->fp}, {"fn", confusion->fn}, {"tn", confusion->tn}};
  } else {
    j["confusion"] = nullptr;
  }
  return j;
}

std::vector<std::size_t> upsample_minority(std::span<const int> labels, std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw std::invalid_argument("upsample_minority: training set has a single class");
  std::vector<std::size_t> out(labels.size());
  std::iota(out.begin(), out.end(), 0);
  const auto& minority = pos.size() < neg.size() ? pos : neg;
  const std::size_t extra = std::max(pos.size(), neg.size()) - minority.size();
  Rng rng(seed);
  for (std::size_t i = 0; i < extra; ++i) out.push_back(minority[rng.index(minority.size())]);
  return out;
}

SplitIndices split_indices(std::size_t n, double test_fraction, std::uint64_t seed) {
  if (n < 2) throw std::invalid_argument("split_indices: need at least two samples");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  auto n_test = static_cast<std::size_t>(std::llround(test_fraction * double(n)));
  n_test = std::clamp<std::size_t>(n_test, 1, n - 1);
  SplitIndices s;
  s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(s.test.begin(), s.test.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

template <typename T>
Tensor<T> raw_features(const Tensor<T>& table, std::span<const std::int32_t> grid, std::size_t batch, std::size_t rows,
                       std::size_t fields) {
  return mean_axis(embedding_lookup(table, grid, {batch, rows, fields}), 2);
}

template Tensor<float> raw_features(const Tensor<float>&, std::span<const std::int32_t>, std::size_t, std::size_t,
                                    std::size_t);
template Tensor<double> raw_features(const Tensor<double>&, std::span<const std::int32_t>, std::size_t, std::size_t,
                                     std::size_t);

DownstreamData raw_data(std::vector<WindowSample> windows) { return {std::move(windows), {}}; }

DownstreamData tabbert_data(const TabBertModel<float>& backbone, std::vector<WindowSample> windows) {
  auto seq = extract_sequence(backbone, windows);
  return {std::move(windows), std::move(seq)};
}

DownstreamData subset(const DownstreamData& data, std::span<const std::size_t> indices) {
  DownstreamData out;
  for (std::size_t i : indices) out.windows.push_back(data.windows.at(i));
  if (data.sequence.defined()) {
    const auto& s = data.sequence.shape();
    const std::size_t per = s[1] * s[2];
    std::vector<float> v;
    v.reserve(indices.size() * per);
    auto src = data.sequence.data();
    for (std::size_t i : indices) v.insert(v.end(), src.begin() + static_cast<std::ptrdiff_t>(i * per),
                                           src.begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    out.sequence = Tensor<float>({indices.size(), s[1], s[2]}, std::move(v));
  }
  return out;
}

DownstreamModel::DownstreamModel(const DownstreamConfig& config, std::size_t rows, std::size_t fields,
                                 std::size_t feature_dim, std::int32_t vocab_size, std::size_t outputs, Rng& rng)
    : config_(config), rows_(rows), fields_(fields), feature_dim_(feature_dim) {
  config_.validate();
  if (config_.feature_source == FeatureSource::raw) {
    feature_dim_ = config_.raw_embedding_dim;
    embeddings_ = normal_init<float>({static_cast<std::size_t>(vocab_size), feature_dim_}, 0.1, rng);
  }
  if (config_.head == HeadKind::mlp) {
    std::vector<std::size_t> dims = {rows_ * feature_dim_};
    dims.insert(dims.end(), config_.head_dims.begin(), config_.head_dims.end());
    dims.push_back(outputs);
    mlp_ = Mlp<float>(dims, rng);
  } else {
    lstm_ = Lstm<float>({feature_dim_, config_.head_dims[0]}, rng);
    out_ = Linear<float>(config_.head_dims[0], outputs, rng);
  }
}

Tensor<float> DownstreamModel::forward(const DownstreamData& data, std::span<const std::size_t> indices) const {
  const std::size_t b = indices.size();
  Tensor<float> x;
  if (config_.feature_source == FeatureSource::raw) {
    x = raw_features(embeddings_, batch_grid(data.windows, indices), b, rows_, fields_);
  } else {
    if (!data.sequence.defined()) throw std::invalid_argument("DownstreamModel: tabbert features missing");
    x = subset(data, indices).sequence;
  }
  if (config_.head == HeadKind::mlp) return mlp_.forward(reshape(x, {b, rows_ * feature_dim_}));
  return out_.forward(lstm_.forward(x).final_hidden);
}

NamedParams<float> DownstreamModel::parameters() const {
  NamedParams<float> out;
  if (config_.feature_source == FeatureSource::raw) out.emplace_back("embeddings", embeddings_);
  if (config_.head == HeadKind::mlp) {
    mlp_.collect("mlp", out);
  } else {
    lstm_.collect("lstm", out);
    out_.collect("out", out);
  }
  return out;
}

nlohmann::json DownstreamEpoch::to_json() const { return {{"epoch", epoch}, {"loss", loss}}; }

DownstreamResult train_downstream(const DownstreamConfig& config, const DownstreamData& train,
                                  const DownstreamData& test, std::int32_t vocab_size, std::uint64_t seed,
                                  const std::function<void(const DownstreamEpoch&)>& on_epoch) {
  config.validate();
  if (train.windows.empty() || test.windows.empty()) throw std::invalid_argument("train_downstream: empty split");
  const bool classify = config.task == TaskKind::classification;
  const std::size_t rows = train.windows[0].rows, fields = train.windows[0].fields;
  const std::size_t feature_dim = train.sequence.defined() ? train.sequence.shape()[2] : 0;
  if (config.feature_source == FeatureSource::tabbert && feature_dim == 0) {
    throw std::invalid_argument("train_downstream: tabbert source needs backbone features");
  }

  std::vector<int> labels;
  std::size_t n_targets = 0;
  std::vector<double> mu, sigma;
  if (classify) {
    for (const auto& w : train.windows) {
      if (!w.label) throw std::invalid_argument("train_downstream: window without a label");
      labels.push_back(*w.label);
    }
  } else {
    n_targets = train.windows[0].targets.size();
    if (n_targets == 0) throw std::invalid_argument("train_downstream: windows carry no regression targets");
    // Targets are standardized with training statistics.
    mu.assign(n_targets, 0.0);
    sigma.assign(n_targets, 0.0);
    for (const auto& w : train.windows) {
      for (std::size_t t = 0; t < n_targets; ++t) mu[t] += w.targets.at(t);
    }
    for (double& m : mu) m /= double(train.windows.size());
    for (const auto& w : train.windows) {
      for (std::size_t t = 0; t < n_targets; ++t) sigma[t] += (w.targets[t] - mu[t]) * (w.targets[t] - mu[t]);
    }
    for (double& s : sigma) s = std::max(std::sqrt(s / double(train.windows.size())), 1e-8);
  }

  Rng root(seed);
  Rng init = root.split("init");
  Rng batches = root.split("batches");
  DownstreamModel model(config, rows, fields, feature_dim, vocab_size, classify ? 1 : n_targets, init);
  Adam<float> adam(param_tensors(model.parameters()), {config.learning_rate});

  std::vector<std::size_t> pool(train.windows.size());
  std::iota(pool.begin(), pool.end(), 0);
  if (classify && config.upsample) pool = upsample_minority(labels, root.split("upsample").next_u64());

  DownstreamResult result;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    batches.shuffle(pool);
    double total = 0.0;
    for (std::size_t start = 0; start < pool.size(); start += config.batch_size) {
      std::span<const std::size_t> idx(pool.data() + start, std::min(config.batch_size, pool.size() - start));
      adam.zero_grad();
      auto out = model.forward(train, idx);
      Tensor<float> loss;
      if (classify) {
        std::vector<float> y;
        for (std::size_t i : idx) y.push_back(float(labels[i]));
        loss = bce_with_logits(reshape(out, {idx.size()}), std::span<const float>(y));
      } else {
        std::vector<float> y;
        for (std::size_t i : idx) {
          for (std::size_t t = 0; t < n_targets; ++t) y.push_back(float((train.windows[i].targets[t] - mu[t]) / sigma[t]));
        }
        loss = mse_loss(out, std::span<const float>(y));
      }
      loss.backward();
      adam.step();
      total += loss.item() * double(idx.size());
    }
    DownstreamEpoch e{epoch, total / double(pool.size())};
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  }

  NoGradGuard no_grad;
  TaskMetrics& m = result.metrics;
  m.n_train = train.windows.size();
  m.n_train_resampled = pool.size();
  m.n_test = test.windows.size();
  std::vector<int> predicted, actual;
  std::vector<std::vector<double>> pred_targets, true_targets;
  for (std::size_t start = 0; start < test.windows.size(); start += 256) {
    std::vector<std::size_t> idx(std::min<std::size_t>(256, test.windows.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    auto out = model.forward(test, idx);
    auto data = out.data();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& w = test.windows[idx[k]];
      if (classify) {
        if (!w.label) throw std::invalid_argument("train_downstream: test window without a label");
        const double logit = data[k];
        result.test_outputs.push_back(1.0 / (1.0 + std::exp(-logit)));
        predicted.push_back(result.test_outputs.back() >= 0.5 ? 1 : 0);
        actual.push_back(*w.label);
      } else {
        std::vector<double> p(n_targets);
        for (std::size_t t = 0; t < n_targets; ++t) {
          p[t] = double(data[k * n_targets + t]) * sigma[t] + mu[t];
          result.test_outputs.push_back(p[t]);
        }
        pred_targets.push_back(std::move(p));
        true_targets.push_back(w.targets);
      }
    }
  }
  if (classify) {
    m.confusion = confusion(predicted, actual);
    m.f1 = f1_score(*m.confusion);
  } else {
    m.rmse = combined_rmse(pred_targets, true_targets, config.rmse);
  }
  return result;
}

}  // namespace tabformer
