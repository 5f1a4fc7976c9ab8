#include "pathe/ops.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>

namespace pathe::ad {

namespace {

template <typename T>
Tape<T>& tape_of(const Var<T>& v, const char* op) {
  if (!v || v.tape() == nullptr) {
    throw std::invalid_argument(fmt::format("{}: input is not bound to a tape", op));
  }
  return *v.tape();
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(fmt::format("{}: incompatible shapes {} and {}", op, shape_str(a), shape_str(b)));
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const std::string& why) {
  throw ShapeError(fmt::format("{}: shape {} {}", op, shape_str(a), why));
}

// Gradient accumulator of a parent, or nullptr when it needs none.
template <typename T>
T* grad_of(const std::shared_ptr<Node<T>>& node) {
  return node->requires_grad ? node->grad_buffer().ptr() : nullptr;
}

// C (m x n) += A (m x k) * B (k x n). Each output element sums over k in
// ascending order, so a row's result does not depend on the other rows.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* __restrict crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* __restrict brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C (m x k) += A (m x n) * B^T where B is (k x n).
template <typename T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  // Transposing B turns this into the vectorisable row-major kernel.
  std::vector<T> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b[p * n + j];
  }
  gemm_nn(m, k, n, a, bt.data(), c);
}

// C (k x n) += A^T * B where A is (m x k) and B is (m x n).
template <typename T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* __restrict a,
             const T* __restrict b, T* __restrict c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* __restrict brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T{0}) continue;
      T* __restrict crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) shape_fail(op, shape, fmt::format("has no axis {}", axis));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0]) shape_fail("matmul", sa, sb);
  const std::size_t m = sa[0], k = sa[1], n = sb[1];
  Tensor<T> out(Shape{m, n});
  gemm_nn(m, n, k, a.value().ptr(), b.value().ptr(), out.ptr());
  auto an = a.shared(), bn = b.shared();
  return tape_of(a, "matmul")
      .record(std::move(out), a.requires_grad() || b.requires_grad(),
              [an, bn, m, n, k](const Tensor<T>& g) {
                if (T* ga = grad_of(an)) gemm_nt(m, n, k, g.ptr(), bn->value.ptr(), ga);
                if (T* gb = grad_of(bn)) gemm_tn(m, n, k, an->value.ptr(), g.ptr(), gb);
              });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size() || !std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) {
    shape_fail("add", sa, sb);
  }
  const std::size_t inner = b.value().size();
  const std::size_t outer = inner == 0 ? 0 : a.value().size() / inner;
  Tensor<T> out = a.value();
  const T* bv = b.value().ptr();
  for (std::size_t o = 0; o < outer; ++o) {
    T* row = out.ptr() + o * inner;
    for (std::size_t i = 0; i < inner; ++i) row[i] += bv[i];
  }
  auto an = a.shared(), bn = b.shared();
  return tape_of(a, "add").record(std::move(out), a.requires_grad() || b.requires_grad(),
                                  [an, bn, outer, inner](const Tensor<T>& g) {
                                    if (T* ga = grad_of(an)) {
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                                    }
                                    if (T* gb = grad_of(bn)) {
                                      for (std::size_t o = 0; o < outer; ++o) {
                                        const T* row = g.ptr() + o * inner;
                                        for (std::size_t i = 0; i < inner; ++i) gb[i] += row[i];
                                      }
                                    }
                                  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out = a.value();
  for (auto& x : out.data()) x *= factor;
  auto an = a.shared();
  return tape_of(a, "scale").record(std::move(out), a.requires_grad(),
                                    [an, factor](const Tensor<T>& g) {
                                      T* ga = grad_of(an);
                                      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
                                    });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& x : out.data()) x = x > T{0} ? x : T{0};
  auto an = a.shared();
  return tape_of(a, "relu").record(std::move(out), a.requires_grad(), [an](const Tensor<T>& g) {
    T* ga = grad_of(an);
    const T* x = an->value.ptr();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T{0}) ga[i] += g[i];
    }
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, Shape shape) {
  Tensor<T> out = a.value().reshaped(shape);
  auto an = a.shared();
  return tape_of(a, "reshape").record(std::move(out), a.requires_grad(), [an](const Tensor<T>& g) {
    T* ga = grad_of(an);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) shape_fail("concat", first, fmt::format("has no axis {}", axis));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  bool needs_grad = false;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) shape_fail("concat", first, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) shape_fail("concat", first, s);
    }
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
    needs_grad = needs_grad || p.requires_grad();
  }
  const AxisSplit split = split_axis(out_shape, axis, "concat");
  Tensor<T> out(out_shape);
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const T* src = parts[pi].value().ptr();
    const std::size_t block = extents[pi] * split.inner;
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy(src + o * block, src + (o + 1) * block,
                out.ptr() + o * split.extent * split.inner + offset);
    }
    offset += block;
  }
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& p : parts) nodes.push_back(p.shared());
  return tape_of(parts[0], "concat")
      .record(std::move(out), needs_grad, [nodes, extents, split](const Tensor<T>& g) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < nodes.size(); ++pi) {
          const std::size_t block = extents[pi] * split.inner;
          if (T* gp = grad_of(nodes[pi])) {
            for (std::size_t o = 0; o < split.outer; ++o) {
              const T* src = g.ptr() + o * split.extent * split.inner + offset;
              T* dst = gp + o * block;
              for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
            }
          }
          offset += block;
        }
      });
}

template <typename T>
Var<T> mean(const Var<T>& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis, "mean");
  if (s.extent == 0) shape_fail("mean", a.shape(), "has an empty reduction axis");
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  Tensor<T> out(out_shape);
  const T* x = a.value().ptr();
  const T inv = T{1} / static_cast<T>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o) {
    T* dst = out.ptr() + o * s.inner;
    for (std::size_t e = 0; e < s.extent; ++e) {
      const T* src = x + (o * s.extent + e) * s.inner;
      for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i];
    }
    for (std::size_t i = 0; i < s.inner; ++i) dst[i] *= inv;
  }
  auto an = a.shared();
  return tape_of(a, "mean").record(std::move(out), a.requires_grad(), [an, s, inv](const Tensor<T>& g) {
    T* ga = grad_of(an);
    for (std::size_t o = 0; o < s.outer; ++o) {
      const T* src = g.ptr() + o * s.inner;
      for (std::size_t e = 0; e < s.extent; ++e) {
        T* dst = ga + (o * s.extent + e) * s.inner;
        for (std::size_t i = 0; i < s.inner; ++i) dst[i] += src[i] * inv;
      }
    }
  });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  T total{0};
  for (T x : a.value().data()) total += x;
  auto an = a.shared();
  return tape_of(a, "sum").record(Tensor<T>::scalar(total), a.requires_grad(),
                                  [an](const Tensor<T>& g) {
                                    T* ga = grad_of(an);
                                    const std::size_t n = an->value.size();
                                    for (std::size_t i = 0; i < n; ++i) ga[i] += g[0];
                                  });
}

template <typename T>
Var<T> embedding_lookup(const Var<T>& table, std::span<const std::size_t> ids) {
  const Shape& st = table.shape();
  if (st.size() != 2) shape_fail("embedding_lookup", st, "is not a 2-D table");
  const std::size_t rows = st[0], cols = st[1];
  Tensor<T> out(Shape{ids.size(), cols});
  const T* src = table.value().ptr();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw ShapeError(fmt::format("embedding_lookup: id {} out of range for table {}", ids[i],
                                   shape_str(st)));
    }
    std::copy(src + ids[i] * cols, src + (ids[i] + 1) * cols, out.ptr() + i * cols);
  }
  auto tn = table.shared();
  std::vector<std::size_t> saved(ids.begin(), ids.end());
  return tape_of(table, "embedding_lookup")
      .record(std::move(out), table.requires_grad(), [tn, saved = std::move(saved), cols](const Tensor<T>& g) {
        T* gt = grad_of(tn);
        for (std::size_t i = 0; i < saved.size(); ++i) {
          const T* src = g.ptr() + i * cols;
          T* dst = gt + saved[i] * cols;
          for (std::size_t c = 0; c < cols; ++c) dst[c] += src[c];
        }
      });
}

template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps) {
  const Shape& sx = x.shape();
  if (sx.empty()) shape_fail("layer_norm", sx, "is a scalar");
  const std::size_t d = sx.back();
  if (gain.shape() != Shape{d}) shape_fail("layer_norm", sx, gain.shape());
  if (bias.shape() != Shape{d}) shape_fail("layer_norm", sx, bias.shape());
  const std::size_t rows = d == 0 ? 0 : x.value().size() / d;
  Tensor<T> out(sx);
  Tensor<T> xhat(sx);
  std::vector<T> inv_std(rows);
  const T* xv = x.value().ptr();
  const T* gv = gain.value().ptr();
  const T* bv = bias.value().ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = xv + r * d;
    T mu{0};
    for (std::size_t i = 0; i < d; ++i) mu += row[i];
    mu /= static_cast<T>(d);
    T var{0};
    for (std::size_t i = 0; i < d; ++i) var += (row[i] - mu) * (row[i] - mu);
    var /= static_cast<T>(d);
    const T inv = T{1} / std::sqrt(var + eps);
    inv_std[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const T h = (row[i] - mu) * inv;
      xhat[r * d + i] = h;
      out[r * d + i] = h * gv[i] + bv[i];
    }
  }
  auto xn = x.shared(), gn = gain.shared(), bn = bias.shared();
  const bool needs = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return tape_of(x, "layer_norm")
      .record(std::move(out), needs,
              [xn, gn, bn, xhat = std::move(xhat), inv_std = std::move(inv_std), rows,
               d](const Tensor<T>& g) {
                T* gx = grad_of(xn);
                T* gg = grad_of(gn);
                T* gb = grad_of(bn);
                const T* gain_v = gn->value.ptr();
                std::vector<T> dxhat(d);
                for (std::size_t r = 0; r < rows; ++r) {
                  const T* grow = g.ptr() + r * d;
                  const T* hrow = xhat.ptr() + r * d;
                  if (gg || gb) {
                    for (std::size_t i = 0; i < d; ++i) {
                      if (gg) gg[i] += grow[i] * hrow[i];
                      if (gb) gb[i] += grow[i];
                    }
                  }
                  if (!gx) continue;
                  T sum_d{0}, sum_dh{0};
                  for (std::size_t i = 0; i < d; ++i) {
                    dxhat[i] = grow[i] * gain_v[i];
                    sum_d += dxhat[i];
                    sum_dh += dxhat[i] * hrow[i];
                  }
                  const T scale_r = inv_std[r] / static_cast<T>(d);
                  for (std::size_t i = 0; i < d; ++i) {
                    gx[r * d + i] += scale_r * (static_cast<T>(d) * dxhat[i] - sum_d - hrow[i] * sum_dh);
                  }
                }
              });
}

template <typename T>
Var<T> dropout(const Var<T>& x, T p, bool train, Rng& rng) {
  if (p < T{0} || p >= T{1}) throw std::invalid_argument(fmt::format("dropout: p={} not in [0,1)", p));
  if (!train || p == T{0}) return x;
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T factor = T{1} / (T{1} - p);
  Tensor<T> mask(x.shape());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = keep(rng) ? factor : T{0};
    out[i] *= mask[i];
  }
  auto xn = x.shared();
  return tape_of(x, "dropout").record(std::move(out), x.requires_grad(),
                                      [xn, mask = std::move(mask)](const Tensor<T>& g) {
                                        T* gx = grad_of(xn);
                                        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
                                      });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  Tensor<T> out(x.shape());
  const T* xv = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total{0};
      for (std::size_t e = 0; e < s.extent; ++e) {
        const T v = std::exp(xv[base + e * s.inner] - mx);
        out[base + e * s.inner] = v;
        total += v;
      }
      for (std::size_t e = 0; e < s.extent; ++e) out[base + e * s.inner] /= total;
    }
  }
  auto xn = x.shared();
  Tensor<T> saved = out;
  return tape_of(x, "softmax").record(std::move(out), x.requires_grad(),
                                      [xn, y = std::move(saved), s](const Tensor<T>& g) {
                                        T* gx = grad_of(xn);
                                        for (std::size_t o = 0; o < s.outer; ++o) {
                                          for (std::size_t i = 0; i < s.inner; ++i) {
                                            const std::size_t base = o * s.extent * s.inner + i;
                                            T dot{0};
                                            for (std::size_t e = 0; e < s.extent; ++e) {
                                              dot += g[base + e * s.inner] * y[base + e * s.inner];
                                            }
                                            for (std::size_t e = 0; e < s.extent; ++e) {
                                              const std::size_t idx = base + e * s.inner;
                                              gx[idx] += y[idx] * (g[idx] - dot);
                                            }
                                          }
                                        }
                                      });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "log_softmax");
  Tensor<T> out(x.shape());
  Tensor<T> probs(x.shape());
  const T* xv = x.value().ptr();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t e = 0; e < s.extent; ++e) mx = std::max(mx, xv[base + e * s.inner]);
      T total{0};
      for (std::size_t e = 0; e < s.extent; ++e) total += std::exp(xv[base + e * s.inner] - mx);
      const T lse = mx + std::log(total);
      for (std::size_t e = 0; e < s.extent; ++e) {
        const std::size_t idx = base + e * s.inner;
        out[idx] = xv[idx] - lse;
        probs[idx] = std::exp(out[idx]);
      }
    }
  }
  auto xn = x.shared();
  return tape_of(x, "log_softmax")
      .record(std::move(out), x.requires_grad(), [xn, p = std::move(probs), s](const Tensor<T>& g) {
        T* gx = grad_of(xn);
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.extent * s.inner + i;
            T total{0};
            for (std::size_t e = 0; e < s.extent; ++e) total += g[base + e * s.inner];
            for (std::size_t e = 0; e < s.extent; ++e) {
              const std::size_t idx = base + e * s.inner;
              gx[idx] += g[idx] - p[idx] * total;
            }
          }
        }
      });
}

template <typename T>
Var<T> multi_head_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v,
                            std::span<const std::uint8_t> key_mask, std::size_t seq_len,
                            std::size_t n_heads) {
  const Shape& sq = q.shape();
  if (sq.size() != 2) shape_fail("multi_head_attention", sq, "is not (rows x d)");
  if (k.shape() != sq) shape_fail("multi_head_attention", sq, k.shape());
  if (v.shape() != sq) shape_fail("multi_head_attention", sq, v.shape());
  const std::size_t rows = sq[0], d = sq[1];
  if (seq_len == 0 || rows % seq_len != 0) {
    shape_fail("multi_head_attention", sq, fmt::format("is not a multiple of seq_len {}", seq_len));
  }
  if (n_heads == 0 || d % n_heads != 0) {
    shape_fail("multi_head_attention", sq, fmt::format("width not divisible by {} heads", n_heads));
  }
  if (!key_mask.empty() && key_mask.size() != rows) {
    shape_fail("multi_head_attention", sq, fmt::format("mismatches key mask of {}", key_mask.size()));
  }
  const std::size_t batch = rows / seq_len, dh = d / n_heads, L = seq_len;
  const T scale_f = T{1} / std::sqrt(static_cast<T>(dh));
  std::vector<std::uint8_t> mask(key_mask.begin(), key_mask.end());
  if (mask.empty()) mask.assign(rows, 1);

  // probs[((b*H + h)*L + i)*L + j]
  std::vector<T> probs(batch * n_heads * L * L, T{0});
  Tensor<T> out(sq);
  const T* qv = q.value().ptr();
  const T* kv = k.value().ptr();
  const T* vv = v.value().ptr();
  std::vector<T> scores(L);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < n_heads; ++h) {
      const std::size_t col = h * dh;
      for (std::size_t i = 0; i < L; ++i) {
        const T* qi = qv + (b * L + i) * d + col;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < L; ++j) {
          if (!mask[b * L + j]) continue;
          const T* kj = kv + (b * L + j) * d + col;
          T dot{0};
          for (std::size_t c = 0; c < dh; ++c) dot += qi[c] * kj[c];
          scores[j] = dot * scale_f;
          mx = std::max(mx, scores[j]);
        }
        if (mx == -std::numeric_limits<T>::infinity()) continue;
        T* p = probs.data() + ((b * n_heads + h) * L + i) * L;
        T total{0};
        for (std::size_t j = 0; j < L; ++j) {
          if (!mask[b * L + j]) continue;
          p[j] = std::exp(scores[j] - mx);
          total += p[j];
        }
        T* oi = out.ptr() + (b * L + i) * d + col;
        for (std::size_t j = 0; j < L; ++j) {
          if (!mask[b * L + j]) continue;
          p[j] /= total;
          const T* vj = vv + (b * L + j) * d + col;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }

  auto qn = q.shared(), kn = k.shared(), vn = v.shared();
  const bool needs = q.requires_grad() || k.requires_grad() || v.requires_grad();
  return tape_of(q, "multi_head_attention")
      .record(std::move(out), needs,
              [qn, kn, vn, probs = std::move(probs), batch, n_heads, L, d, dh,
               scale_f](const Tensor<T>& g) {
                T* gq = grad_of(qn);
                T* gk = grad_of(kn);
                T* gv = grad_of(vn);
                const T* qv = qn->value.ptr();
                const T* kv = kn->value.ptr();
                const T* vv = vn->value.ptr();
                std::vector<T> dp(L), ds(L);
                for (std::size_t b = 0; b < batch; ++b) {
                  for (std::size_t h = 0; h < n_heads; ++h) {
                    const std::size_t col = h * dh;
                    for (std::size_t i = 0; i < L; ++i) {
                      const T* p = probs.data() + ((b * n_heads + h) * L + i) * L;
                      const T* gi = g.ptr() + (b * L + i) * d + col;
                      T weighted{0};
                      for (std::size_t j = 0; j < L; ++j) {
                        if (p[j] == T{0}) {
                          dp[j] = T{0};
                          continue;
                        }
                        const T* vj = vv + (b * L + j) * d + col;
                        T dot{0};
                        for (std::size_t c = 0; c < dh; ++c) dot += gi[c] * vj[c];
                        dp[j] = dot;
                        weighted += p[j] * dot;
                        if (gv) {
                          T* gvj = gv + (b * L + j) * d + col;
                          for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * gi[c];
                        }
                      }
                      const T* qi = qv + (b * L + i) * d + col;
                      T* gqi = gq ? gq + (b * L + i) * d + col : nullptr;
                      for (std::size_t j = 0; j < L; ++j) {
                        if (p[j] == T{0}) continue;
                        ds[j] = p[j] * (dp[j] - weighted) * scale_f;
                        const T* kj = kv + (b * L + j) * d + col;
                        if (gqi) {
                          for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds[j] * kj[c];
                        }
                        if (gk) {
                          T* gkj = gk + (b * L + j) * d + col;
                          for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds[j] * qi[c];
                        }
                      }
                    }
                  }
                }
              });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::size_t> targets, T label_smoothing,
                     std::span<const T> class_weights) {
  const Shape& s = logits.shape();
  if (s.size() != 2) shape_fail("cross_entropy", s, "is not (n x C)");
  const std::size_t n = s[0], C = s[1];
  if (targets.size() != n) {
    shape_fail("cross_entropy", s, fmt::format("mismatches {} targets", targets.size()));
  }
  if (!class_weights.empty() && class_weights.size() != C) {
    shape_fail("cross_entropy", s, fmt::format("mismatches {} class weights", class_weights.size()));
  }
  if (n == 0) throw ShapeError("cross_entropy: empty batch");
  const T eps = label_smoothing;
  Tensor<T> probs(s);
  std::vector<T> row_weight(n);
  T loss{0}, weight_total{0};
  const T* x = logits.value().ptr();
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= C) {
      throw ShapeError(fmt::format("cross_entropy: target {} out of range for {} classes", targets[r], C));
    }
    const T* row = x + r * C;
    T mx = *std::max_element(row, row + C);
    T total{0};
    for (std::size_t c = 0; c < C; ++c) total += std::exp(row[c] - mx);
    const T lse = mx + std::log(total);
    T sum_logp{0};
    for (std::size_t c = 0; c < C; ++c) {
      const T logp = row[c] - lse;
      sum_logp += logp;
      probs[r * C + c] = std::exp(logp);
    }
    const T w = class_weights.empty() ? T{1} : class_weights[targets[r]];
    row_weight[r] = w;
    weight_total += w;
    loss += -w * ((T{1} - eps) * (row[targets[r]] - lse) + eps / static_cast<T>(C) * sum_logp);
  }
  loss /= weight_total;
  auto ln = logits.shared();
  std::vector<std::size_t> saved_targets(targets.begin(), targets.end());
  return tape_of(logits, "cross_entropy")
      .record(Tensor<T>::scalar(loss), logits.requires_grad(),
              [ln, probs = std::move(probs), row_weight = std::move(row_weight),
               saved_targets = std::move(saved_targets), weight_total, eps, n,
               C](const Tensor<T>& g) {
                T* gl = grad_of(ln);
                for (std::size_t r = 0; r < n; ++r) {
                  const T coef = g[0] * row_weight[r] / weight_total;
                  for (std::size_t c = 0; c < C; ++c) {
                    T target = eps / static_cast<T>(C);
                    if (c == saved_targets[r]) target += T{1} - eps;
                    gl[r * C + c] += coef * (probs[r * C + c] - target);
                  }
                }
              });
}

template <typename T>
Var<T> bce_with_logits(const Var<T>& logits, std::span<const T> targets, std::span<const T> weights) {
  const std::size_t n = logits.value().size();
  if (targets.size() != n) {
    shape_fail("bce_with_logits", logits.shape(), fmt::format("mismatches {} targets", targets.size()));
  }
  if (!weights.empty() && weights.size() != n) {
    shape_fail("bce_with_logits", logits.shape(), fmt::format("mismatches {} weights", weights.size()));
  }
  const T* x = logits.value().ptr();
  T loss{0};
  std::vector<T> dx(n);
  for (std::size_t i = 0; i < n; ++i) {
    const T w = weights.empty() ? T{1} : weights[i];
    const T xi = x[i];
    loss += w * (std::max(xi, T{0}) - xi * targets[i] + std::log1p(std::exp(-std::abs(xi))));
    const T sig = xi >= T{0} ? T{1} / (T{1} + std::exp(-xi)) : std::exp(xi) / (T{1} + std::exp(xi));
    dx[i] = w * (sig - targets[i]);
  }
  auto ln = logits.shared();
  return tape_of(logits, "bce_with_logits")
      .record(Tensor<T>::scalar(loss), logits.requires_grad(), [ln, dx = std::move(dx)](const Tensor<T>& g) {
        T* gl = grad_of(ln);
        for (std::size_t i = 0; i < dx.size(); ++i) gl[i] += g[0] * dx[i];
      });
}

#define PATHE_INSTANTIATE_OPS(T)                                                                  \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> reshape(const Var<T>&, Shape);                                                  \
  template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                \
  template Var<T> mean(const Var<T>&, std::size_t);                                               \
  template Var<T> sum(const Var<T>&);                                                             \
  template Var<T> embedding_lookup(const Var<T>&, std::span<const std::size_t>);                  \
  template Var<T> layer_norm(const Var<T>&, const Var<T>&, const Var<T>&, T);                     \
  template Var<T> dropout(const Var<T>&, T, bool, Rng&);                                          \
  template Var<T> softmax(const Var<T>&, std::size_t);                                            \
  template Var<T> log_softmax(const Var<T>&, std::size_t);                                        \
  template Var<T> multi_head_attention(const Var<T>&, const Var<T>&, const Var<T>&,               \
                                       std::span<const std::uint8_t>, std::size_t, std::size_t); \
  template Var<T> cross_entropy(const Var<T>&, std::span<const std::size_t>, T,                   \
                                std::span<const T>);                                              \
  template Var<T> bce_with_logits(const Var<T>&, std::span<const T>, std::span<const T>);

PATHE_INSTANTIATE_OPS(float)
PATHE_INSTANTIATE_OPS(double)

}  // namespace pathe::ad
