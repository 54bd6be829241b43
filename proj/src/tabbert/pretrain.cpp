#include <chrono>
#include <numeric>

#include "tabformer/json_util.hpp"
#include "tabformer/tabbert.hpp"

namespace tabformer {

nlohmann::json PretrainConfig::to_json() const {
  return {{"model", model.to_json()},
          {"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"mask_rate", mask_rate},
          {"clip_norm", clip_norm}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig c;
  check_keys(j, c.to_json(), "pretrain config");
  if (j.contains("model")) c.model = TabBertConfig::from_json(j.at("model"));
  read_key(j, "steps", c.steps);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  read_key(j, "mask_rate", c.mask_rate);
  read_key(j, "clip_norm", c.clip_norm);
  return c;
}

nlohmann::json PretrainLogEntry::to_json() const {
  return {{"step", step}, {"loss", loss}, {"masked_accuracy", masked_accuracy}, {"wall_time", wall_time}};
}

PretrainResult pretrain(const std::vector<WindowSample>& windows, const Vocabulary& vocab,
                        const PretrainConfig& config, std::uint64_t seed,
                        const std::function<void(const PretrainLogEntry&)>& on_step) {
  if (windows.empty()) throw std::invalid_argument("pretrain: no windows");
  if (config.batch_size == 0) throw std::invalid_argument("pretrain: batch_size must be positive");
  mask_budget(1, config.mask_rate);  // validates the rate
  const std::size_t rows = windows[0].rows;
  for (const auto& w : windows) {
    if (w.rows != rows) throw ShapeError("pretrain: windows differ in length");
    if (!validate_window(w, vocab)) {
      throw FingerprintMismatch("pretrain: window of entity '" + w.entity_id + "' does not match the vocabulary");
    }
  }
  std::vector<std::int32_t> offsets;
  for (const auto& f : vocab.fields()) offsets.push_back(f.offset);

  Rng root(seed);
  Rng init = root.split("init");
  Rng batches = root.split("batches");
  const Rng masking = root.split("masking");

  PretrainResult result{TabBertModel<float>(vocab.field_sizes(), vocab.total_size(), config.model, init), {}};
  auto params = param_tensors(result.model.parameters());
  Adam<float> adam(params, {config.learning_rate});

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
    std::vector<WindowSample> masked;
    std::vector<MaskPlan> plans;
    const Rng step_rng = masking.split(step);
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto [w, plan] = mask_fields(windows[idx[b]], config.mask_rate, step_rng.split(b).next_u64());
      masked.push_back(std::move(w));
      plans.push_back(std::move(plan));
    }
    std::vector<std::size_t> all(masked.size());
    std::iota(all.begin(), all.end(), 0);
    auto grid = batch_grid(masked, all);

    adam.zero_grad();
    auto enc = result.model.encode(grid, masked.size(), rows);
    auto logits = result.model.mlm_logits(enc.sequence, plans, offsets);
    auto loss = mlm_loss(logits);
    loss.backward();
    if (config.clip_norm > 0.0) adam.clip_grad_norm(config.clip_norm);
    adam.step();

    PretrainLogEntry entry;
    entry.step = step;
    entry.loss = loss.item();
    entry.masked_accuracy = masked_accuracy(logits);
    entry.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.log.push_back(entry);
    if (on_step) on_step(entry);
  }
  return result;
}

}  // namespace tabformer
