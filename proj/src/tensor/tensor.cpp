#include "tabformer/tensor.hpp"

#include <unordered_set>

namespace tabformer {
namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> data, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("Tensor: zero-sized axis in " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("Tensor: data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, T(0)), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<T>{value}, requires_grad);
}

template <typename T>
std::size_t Tensor<T>::dim(int axis) const {
  const auto r = static_cast<int>(rank());
  int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("Tensor::dim: axis out of range for " + shape_str(shape()));
  return shape()[static_cast<std::size_t>(a)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
  return impl().data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ShapeError("Tensor::at: rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw std::out_of_range("Tensor::at: index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl().data[flat];
}

template <typename T>
void Tensor<T>::backward() const {
  Impl& root = impl();
  if (root.data.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(root.shape));
  }
  if (!root.requires_grad) throw std::logic_error("backward: loss does not require grad");

  // Iterative post-order DFS gives a topological order.
  std::vector<Impl*> order;
  std::unordered_set<Impl*> visited;
  std::vector<std::pair<Impl*, std::size_t>> stack{{&root, 0}};
  visited.insert(&root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Impl* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.grad_buffer()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Impl* node = *it;
    if (!node->backward || node->grad.empty()) continue;
    node->backward(*node);
    std::vector<T>().swap(node->grad);
  }
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return Tensor(shape(), impl().data, false);
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  return Tensor(shape(), impl().data, requires_grad());
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                                 std::function<void(Impl&)> backward) {
  Tensor out(std::move(shape), std::move(data), false);
  if (!grad_enabled()) return out;
  bool any = false;
  for (const auto& p : parents) any = any || p.requires_grad();
  if (!any) return out;
  Impl& o = out.impl();
  o.requires_grad = true;
  o.parents.reserve(parents.size());
  for (const auto& p : parents) o.parents.push_back(p.impl_ptr());
  o.backward = std::move(backward);
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace tabformer
