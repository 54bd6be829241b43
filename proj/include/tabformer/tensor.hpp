#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tabformer {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled();

/// Disables graph recording for the current thread while in scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {

template <typename T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  // Reads `self.grad` and accumulates into `self.parents`.
  std::function<void(TensorImpl& self)> backward;

  std::span<T> grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major tensor handle with reverse-mode gradients. Copies share
/// storage; use `clone()` for a deep copy.
template <typename T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor scalar(T value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  /// Size of an axis; negative axes count from the end.
  std::size_t dim(int axis) const;
  std::size_t numel() const { return impl().data.size(); }

  std::span<const T> data() const { return impl().data; }
  std::span<T> data_mut() { return impl().data; }
  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool value) { impl().requires_grad = value; }
  bool has_grad() const { return !impl().grad.empty(); }
  /// Gradient; zeros if nothing has flowed in yet.
  std::span<const T> grad() const { return impl().grad_buffer(); }
  std::span<T> grad_mut() { return impl().grad_buffer(); }
  void zero_grad() { impl().grad.clear(); }

  /// True when this tensor carries a backprop record.
  bool has_node() const { return static_cast<bool>(impl().backward); }

  /// Runs reverse-mode accumulation from this scalar. Intermediate
  /// gradients are released as the sweep passes them.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  Impl& impl() const {
    if (!impl_) throw std::logic_error("Tensor: use of undefined tensor");
    return *impl_;
  }
  const std::shared_ptr<Impl>& impl_ptr() const { return impl_; }

  /// Builds an op output. The backward rule is attached only when grad mode
  /// is on and some parent requires grad.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                            std::function<void(Impl&)> backward);

 private:
  explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<Impl> impl_;
};

/// Accumulates `values` into the gradient of `parent` if it wants one.
template <typename T>
void accumulate_grad(detail::TensorImpl<T>& parent, std::span<const T> values) {
  if (!parent.requires_grad) return;
  auto g = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += values[i];
}

extern template class Tensor<float>;
extern template class Tensor<double>;

/// Converts between element types (no graph).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return Tensor<To>(t.shape(), std::move(out), false);
}

}  // namespace tabformer
