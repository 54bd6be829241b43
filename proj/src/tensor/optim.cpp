#include "tabformer/optim.hpp"

#include <cmath>

namespace tabformer {

template <typename T>
void adam_step(std::vector<Tensor<T>>& params, AdamState<T>& state, const AdamConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: state does not match parameters");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const T b1 = T(config.beta1), b2 = T(config.beta2);
  const T correction1 = T(1.0 - std::pow(config.beta1, t));
  const T correction2 = T(1.0 - std::pow(config.beta2, t));
  const T lr = T(config.learning_rate), eps = T(config.epsilon);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& param = params[p];
    if (state.m[p].size() != param.numel()) throw std::invalid_argument("adam_step: moment shape mismatch");
    if (!param.has_grad()) {
      // Zero gradient still decays the moments.
      for (std::size_t i = 0; i < param.numel(); ++i) {
        state.m[p][i] *= b1;
        state.v[p][i] *= b2;
      }
    }
    auto data = param.data_mut();
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (param.has_grad()) {
      auto g = param.grad();
      for (std::size_t i = 0; i < data.size(); ++i) {
        m[i] = b1 * m[i] + (T(1) - b1) * g[i];
        v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      }
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      data[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

template <typename T>
double Adam<T>::clip_grad_norm(double max_norm) {
  double total = 0.0;
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    for (T g : p.grad()) total += double(g) * double(g);
  }
  const double norm = std::sqrt(total);
  if (norm > max_norm && norm > 0.0) {
    const T factor = T(max_norm / norm);
    for (auto& p : params_) {
      if (!p.has_grad()) continue;
      for (T& g : p.grad_mut()) g *= factor;
    }
  }
  return norm;
}

template void adam_step(std::vector<Tensor<float>>&, AdamState<float>&, const AdamConfig&);
template void adam_step(std::vector<Tensor<double>>&, AdamState<double>&, const AdamConfig&);
template class Adam<float>;
template class Adam<double>;

}  // namespace tabformer
