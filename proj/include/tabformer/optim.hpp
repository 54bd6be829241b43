#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tabformer/tensor.hpp"

namespace tabformer {

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment buffers for one parameter list.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
};

/// One bias-corrected Adam update of `params` using their accumulated
/// gradients. Parameters with no gradient are treated as having a zero one.
template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& config);

template <typename T>
class Adam {
 public:
  Adam(std::vector<Tensor<T>> params, AdamConfig config) : params_(std::move(params)), config_(config) {}

  void step() { adam_step(params_, state_, config_); }
  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }
  /// Scales gradients so their global L2 norm is at most `max_norm`; returns
  /// the norm before clipping.
  double clip_grad_norm(double max_norm);

  const AdamState<T>& state() const { return state_; }
  AdamConfig& config() { return config_; }

 private:
  std::vector<Tensor<T>> params_;
  AdamConfig config_;
  AdamState<T> state_;
};

template <typename T>
std::vector<Tensor<T>> param_tensors(const NamedParams<T>& named) {
  std::vector<Tensor<T>> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace tabformer
