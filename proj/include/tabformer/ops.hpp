#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "tabformer/rng.hpp"
#include "tabformer/tensor.hpp"

// Differentiable operations. Broadcasting is restricted to leading
// dimensions: in a binary elementwise op the smaller operand's shape must be
// a suffix of the larger one's, and it is repeated over the remaining
// leading axes.

namespace tabformer {

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T value);

/// (..., m, k) x (..., k, n). Leading dims must match, or one side is 2-D
/// and is shared across the other's leading dims.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Swaps the last two axes.
template <typename T> Tensor<T> transpose(const Tensor<T>& a);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& order);
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, int axis, std::size_t begin, std::size_t end);
/// Treats `a` as (rows, inner) over its first axis and gathers rows.
template <typename T> Tensor<T> index_select(const Tensor<T>& a, std::span<const std::size_t> rows);

template <typename T> Tensor<T> softmax(const Tensor<T>& a, int axis = -1);
/// Softmax over the last axis where `allowed` (row-major lq x lk, broadcast
/// over leading axes) marks attendable keys. Disallowed entries are exactly 0.
/// Throws if some query has no allowed key.
template <typename T>
Tensor<T> masked_softmax(const Tensor<T>& scores, const std::vector<std::uint8_t>& allowed);

/// Normalizes over the last axis, then applies gain and bias (both of that size).
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps = T(1e-5));

template <typename T> Tensor<T> gelu(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);

/// Inverted dropout; identity when p == 0.
template <typename T> Tensor<T> dropout(const Tensor<T>& a, T p, Rng& rng);

/// Rows of `table` (V, d) picked by `ids`; output shape is ids_shape + (d).
template <typename T>
Tensor<T> embedding_lookup(const Tensor<T>& table, std::span<const std::int32_t> ids, const Shape& ids_shape);

/// Mean softmax cross entropy over rows of `logits` (rows, classes) whose
/// target differs from `ignore_id`. Returns 0 when every row is ignored.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets,
                        std::int32_t ignore_id = -100);

/// Mean binary cross entropy with logits; targets in {0, 1}.
template <typename T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, std::span<const T> targets);

template <typename T> Tensor<T> mse_loss(const Tensor<T>& prediction, std::span<const T> targets);

template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
/// Mean over one axis; the axis is removed.
template <typename T> Tensor<T> mean_axis(const Tensor<T>& a, int axis);

}  // namespace tabformer
