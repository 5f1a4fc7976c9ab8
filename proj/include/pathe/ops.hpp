#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pathe/autodiff.hpp"
#include "pathe/rng.hpp"

// Differentiable operations. Every op validates shapes, records a node on the
// tape of its inputs, and throws ShapeError naming the op and shapes on
// mismatch. Instantiated for float and double.
namespace pathe::ad {

// (m x k) * (k x n).
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// Elementwise sum; `b` may also be broadcast when its shape is a suffix of
// `a`'s shape (bias rows, per-feature offsets).
template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <typename T>
Var<T> scale(const Var<T>& a, T factor);

template <typename T>
Var<T> relu(const Var<T>& a);

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);

template <typename T>
Var<T> mean(const Var<T>& a, std::size_t axis);

// Sum of all elements, as a scalar.
template <typename T>
Var<T> sum(const Var<T>& a);

// Rows of a 2-D `table` selected by `ids`; result is (ids.size() x cols).
template <typename T>
Var<T> embedding_lookup(const Var<T>& table, std::span<const std::size_t> ids);

// Normalises over the last axis, then applies per-feature gain and bias.
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-5));

// Inverted dropout; identity when `train` is false or p == 0.
template <typename T>
Var<T> dropout(const Var<T>& x, T p, bool train, Rng& rng);

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis);

template <typename T>
Var<T> log_softmax(const Var<T>& x, std::size_t axis);

// Scaled dot-product attention over `batch` sequences of `seq_len` rows.
// q, k, v are (batch*seq_len x d) with d divisible by n_heads. key_mask has
// one entry per row (1 = attend, 0 = ignore); ignored keys receive no
// attention weight. A query whose sequence has no attendable key outputs 0.
template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            std::span<const std::uint8_t> key_mask, std::size_t seq_len,
                            std::size_t n_heads);

// Mean cross entropy over rows of (n x C) logits. With label smoothing e the
// per-row target is (1-e) on the true class plus e/C everywhere. When class
// weights are given the mean is weighted by the true-class weights.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets,
                     T label_smoothing = T{0}, std::span<const T> class_weights = {});

// Weighted sum of per-element binary cross entropies on raw logits. Targets
// are in [0,1]; an empty weight span means weight 1 everywhere.
template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, std::span<const T> targets,
                       std::span<const T> weights = {});

}  // namespace pathe::ad
