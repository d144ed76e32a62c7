#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstring>
#include <vector>

#include "dacl/autodiff.hpp"

namespace dacl {

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

namespace detail {

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()) + " do not match");
}

template <class S>
void require_4d(const Var<S>& x, const char* op) {
  if (x.shape().size() != 4)
    throw DimensionError(std::string(op) + ": expected NCHW input, got " + shape_str(x.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "add");
  Tensor<S> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] + b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_node<S>("add", std::move(out), {a, b}, [an, bn, n](Node<S>& self) {
    if (an->requires_grad) {
      auto& g = ensure_grad(*an);
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = ensure_grad(*bn);
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
  });
}

template <class S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor<S> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] - b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_node<S>("sub", std::move(out), {a, b}, [an, bn, n](Node<S>& self) {
    if (an->requires_grad) {
      auto& g = ensure_grad(*an);
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = ensure_grad(*bn);
      for (int64_t i = 0; i < n; ++i) g[i] -= self.grad[i];
    }
  });
}

template <class S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor<S> out(a.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a.value()[i] * b.value()[i];
  auto an = a.node(), bn = b.node();
  return make_node<S>("mul", std::move(out), {a, b}, [an, bn, n](Node<S>& self) {
    if (an->requires_grad) {
      auto& g = ensure_grad(*an);
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      auto& g = ensure_grad(*bn);
      for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] * an->value[i];
    }
  });
}

/// k*x + c, elementwise with scalar coefficients.
template <class S>
Var<S> affine(const Var<S>& x, double k, double c) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = S(k) * x.value()[i] + S(c);
  auto xn = x.node();
  return make_node<S>("affine", std::move(out), {x}, [xn, k, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) g[i] += S(k) * self.grad[i];
  });
}

template <class S>
Var<S> scale(const Var<S>& x, double k) {
  return affine(x, k, 0.0);
}

template <class S>
Var<S> square(const Var<S>& x) {
  return mul(x, x);
}

template <class S>
Var<S> relu(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = x.value()[i] > S(0) ? x.value()[i] : S(0);
  auto xn = x.node();
  return make_node<S>("relu", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i)
      if (xn->value[i] > S(0)) g[i] += self.grad[i];
  });
}

template <class S>
Var<S> leaky_relu(const Var<S>& x, double slope) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    S v = x.value()[i];
    out[i] = v > S(0) ? v : S(slope) * v;
  }
  auto xn = x.node();
  return make_node<S>("leaky_relu", std::move(out), {x}, [xn, slope, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i)
      g[i] += (xn->value[i] > S(0) ? S(1) : S(slope)) * self.grad[i];
  });
}

template <class S>
Var<S> tanh(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::tanh(x.value()[i]);
  auto xn = x.node();
  return make_node<S>("tanh", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) {
      S y = self.value[i];
      g[i] += (S(1) - y * y) * self.grad[i];
    }
  });
}

template <class S>
Var<S> sigmoid(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    S v = x.value()[i];
    out[i] = v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
  }
  auto xn = x.node();
  return make_node<S>("sigmoid", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) {
      S y = self.value[i];
      g[i] += y * (S(1) - y) * self.grad[i];
    }
  });
}

template <class S>
Var<S> abs(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = x.value()[i] < S(0) ? -x.value()[i] : x.value()[i];
  auto xn = x.node();
  // Subgradient at 0 is 0.
  return make_node<S>("abs", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) {
      S v = xn->value[i];
      if (v > S(0))
        g[i] += self.grad[i];
      else if (v < S(0))
        g[i] -= self.grad[i];
    }
  });
}

template <class S>
Var<S> log(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) {
    if (!(x.value()[i] > S(0)))
      throw DataError("log of non-positive value");
    out[i] = std::log(x.value()[i]);
  }
  auto xn = x.node();
  return make_node<S>("log", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) g[i] += self.grad[i] / xn->value[i];
  });
}

template <class S>
Var<S> exp(const Var<S>& x) {
  Tensor<S> out(x.shape());
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::exp(x.value()[i]);
  auto xn = x.node();
  return make_node<S>("exp", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) g[i] += self.value[i] * self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

/// Mean over all elements -> scalar. Double accumulation regardless of S.
template <class S>
Var<S> mean_all(const Var<S>& x) {
  const int64_t n = x.numel();
  if (n == 0) throw ContractError("mean_all of empty tensor");
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += double(x.value()[i]);
  Tensor<S> out = Tensor<S>::scalar(S(acc / double(n)));
  auto xn = x.node();
  return make_node<S>("mean_all", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    S gi = self.grad[0] / S(n);
    for (int64_t i = 0; i < n; ++i) g[i] += gi;
  });
}

template <class S>
Var<S> sum_all(const Var<S>& x) {
  const int64_t n = x.numel();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += double(x.value()[i]);
  Tensor<S> out = Tensor<S>::scalar(S(acc));
  auto xn = x.node();
  return make_node<S>("sum_all", std::move(out), {x}, [xn, n](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

/// Mean absolute difference, the L1 workhorse.
template <class S>
Var<S> mean_abs_diff(const Var<S>& a, const Var<S>& b) {
  return mean_all(abs(sub(a, b)));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

template <class S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[1] != b.shape()[0])
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor<S> out({m, n});
  ECMap<S> A(a.value().ptr(), m, k), B(b.value().ptr(), k, n);
  EMap<S>(out.ptr(), m, n).noalias() = A * B;
  auto an = a.node(), bn = b.node();
  return make_node<S>("matmul", std::move(out), {a, b}, [an, bn, m, k, n](Node<S>& self) {
    ECMap<S> G(self.grad.ptr(), m, n);
    if (an->requires_grad) {
      ECMap<S> B(bn->value.ptr(), k, n);
      EMap<S>(ensure_grad(*an).ptr(), m, k).noalias() += G * B.transpose();
    }
    if (bn->requires_grad) {
      ECMap<S> A(an->value.ptr(), m, k);
      EMap<S>(ensure_grad(*bn).ptr(), k, n).noalias() += A.transpose() * G;
    }
  });
}

/// [M,D] + [D], broadcast over the leading dim.
template <class S>
Var<S> add_rowvec(const Var<S>& a, const Var<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 1 || a.shape()[1] != b.shape()[0])
    throw DimensionError("add_rowvec: shapes " + shape_str(a.shape()) + " + " +
                         shape_str(b.shape()) + " are not broadcastable");
  const int64_t m = a.shape()[0], d = a.shape()[1];
  Tensor<S> out(a.shape());
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < d; ++j) out[i * d + j] = a.value()[i * d + j] + b.value()[j];
  auto an = a.node(), bn = b.node();
  return make_node<S>("add_rowvec", std::move(out), {a, b}, [an, bn, m, d](Node<S>& self) {
    if (an->requires_grad) {
      auto& g = ensure_grad(*an);
      for (int64_t i = 0; i < m * d; ++i) g[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      auto& g = ensure_grad(*bn);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

/// Rowwise dot product against a constant: [M,D] . [M,D] -> [M,1].
template <class S>
Var<S> rows_dot_const(const Var<S>& a, const Tensor<S>& c) {
  if (a.shape() != c.shape || a.shape().size() != 2)
    throw DimensionError("rows_dot_const: shape mismatch");
  const int64_t m = a.shape()[0], d = a.shape()[1];
  Tensor<S> out({m, 1});
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += double(a.value()[i * d + j]) * double(c[i * d + j]);
    out[i] = S(acc);
  }
  auto an = a.node();
  auto cc = std::make_shared<Tensor<S>>(c);
  return make_node<S>("rows_dot_const", std::move(out), {a}, [an, cc, m, d](Node<S>& self) {
    if (!an->requires_grad) return;
    auto& g = ensure_grad(*an);
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i] * (*cc)[i * d + j];
  });
}

/// a [M,D] times constant keys [N,D] transposed -> [M,N].
template <class S>
Var<S> matmul_nt_const(const Var<S>& a, const Tensor<S>& keys) {
  if (a.shape().size() != 2 || keys.shape.size() != 2 || a.shape()[1] != keys.shape[1])
    throw DimensionError("matmul_nt_const: incompatible shapes");
  const int64_t m = a.shape()[0], d = a.shape()[1], n = keys.shape[0];
  Tensor<S> out({m, n});
  ECMap<S> A(a.value().ptr(), m, d), K(keys.ptr(), n, d);
  EMap<S>(out.ptr(), m, n).noalias() = A * K.transpose();
  auto an = a.node();
  auto kc = std::make_shared<Tensor<S>>(keys);
  return make_node<S>("matmul_nt_const", std::move(out), {a}, [an, kc, m, d, n](Node<S>& self) {
    if (!an->requires_grad) return;
    ECMap<S> G(self.grad.ptr(), m, n), K(kc->ptr(), n, d);
    EMap<S>(ensure_grad(*an).ptr(), m, d).noalias() += G * K;
  });
}

template <class S>
Var<S> concat_lastdim(const Var<S>& a, const Var<S>& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.shape()[0] != b.shape()[0])
    throw DimensionError("concat_lastdim: row counts differ");
  const int64_t m = a.shape()[0], da = a.shape()[1], db = b.shape()[1];
  Tensor<S> out({m, da + db});
  for (int64_t i = 0; i < m; ++i) {
    if (da > 0)
      std::memcpy(out.ptr() + i * (da + db), a.value().ptr() + i * da, size_t(da) * sizeof(S));
    if (db > 0)
      std::memcpy(out.ptr() + i * (da + db) + da, b.value().ptr() + i * db, size_t(db) * sizeof(S));
  }
  auto an = a.node(), bn = b.node();
  return make_node<S>("concat_lastdim", std::move(out), {a, b}, [an, bn, m, da, db](Node<S>& self) {
    if (an->requires_grad) {
      auto& g = ensure_grad(*an);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < da; ++j) g[i * da + j] += self.grad[i * (da + db) + j];
    }
    if (bn->requires_grad) {
      auto& g = ensure_grad(*bn);
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < db; ++j) g[i * db + j] += self.grad[i * (da + db) + da + j];
    }
  });
}

/// Rowwise L2 normalization to unit length; [M,D] -> [M,D].
template <class S>
Var<S> l2_normalize_rows(const Var<S>& x) {
  if (x.shape().size() != 2) throw DimensionError("l2_normalize_rows expects [M,D]");
  const int64_t m = x.shape()[0], d = x.shape()[1];
  Tensor<S> out(x.shape());
  std::vector<S> inv_norm(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < d; ++j) acc += double(x.value()[i * d + j]) * double(x.value()[i * d + j]);
    double r = std::sqrt(acc);
    if (r < 1e-12) throw NumericError("unnormalizable zero embedding");
    inv_norm[size_t(i)] = S(1.0 / r);
    for (int64_t j = 0; j < d; ++j) out[i * d + j] = x.value()[i * d + j] * inv_norm[size_t(i)];
  }
  auto xn = x.node();
  auto inp = std::make_shared<std::vector<S>>(std::move(inv_norm));
  return make_node<S>("l2_normalize_rows", std::move(out), {x}, [xn, inp, m, d](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < d; ++j)
        dot += double(self.grad[i * d + j]) * double(self.value[i * d + j]);
      for (int64_t j = 0; j < d; ++j)
        g[i * d + j] +=
            (*inp)[size_t(i)] * (self.grad[i * d + j] - self.value[i * d + j] * S(dot));
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax family
// ---------------------------------------------------------------------------

/// Softmax over the last dimension, max-subtracted.
template <class S>
Var<S> softmax_lastdim(const Var<S>& x) {
  if (x.shape().empty()) throw DimensionError("softmax_lastdim of scalarless shape");
  const int64_t c = x.shape().back();
  const int64_t m = x.numel() / c;
  Tensor<S> out(x.shape());
  for (int64_t i = 0; i < m; ++i) {
    const S* row = x.value().ptr() + i * c;
    S mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(double(row[j] - mx));
    for (int64_t j = 0; j < c; ++j) out[i * c + j] = S(std::exp(double(row[j] - mx)) / z);
  }
  auto xn = x.node();
  return make_node<S>("softmax_lastdim", std::move(out), {x}, [xn, m, c](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (int64_t j = 0; j < c; ++j)
        dot += double(self.grad[i * c + j]) * double(self.value[i * c + j]);
      for (int64_t j = 0; j < c; ++j)
        g[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - S(dot));
    }
  });
}

/// Mean softmax cross-entropy over rows: logits [M,C], integer labels [M].
/// Log-sum-exp stabilized.
template <class S>
Var<S> cross_entropy_rows(const Var<S>& logits, const std::vector<int64_t>& labels) {
  if (logits.shape().size() != 2) throw DimensionError("cross_entropy_rows expects [M,C]");
  const int64_t m = logits.shape()[0], c = logits.shape()[1];
  if (int64_t(labels.size()) != m) throw DimensionError("cross_entropy_rows: label count mismatch");
  Tensor<S> probs({m, c});
  double total = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    int64_t y = labels[size_t(i)];
    if (y < 0 || y >= c)
      throw DataError("class id " + std::to_string(y) + " out of range [0," + std::to_string(c) + ")");
    const S* row = logits.value().ptr() + i * c;
    S mx = row[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (int64_t j = 0; j < c; ++j) z += std::exp(double(row[j] - mx));
    for (int64_t j = 0; j < c; ++j) probs[i * c + j] = S(std::exp(double(row[j] - mx)) / z);
    total += std::log(z) + double(mx) - double(row[y]);
  }
  Tensor<S> out = Tensor<S>::scalar(S(total / double(m)));
  auto ln = logits.node();
  auto pp = std::make_shared<Tensor<S>>(std::move(probs));
  auto ll = std::make_shared<std::vector<int64_t>>(labels);
  return make_node<S>("cross_entropy_rows", std::move(out), {logits},
                      [ln, pp, ll, m, c](Node<S>& self) {
                        if (!ln->requires_grad) return;
                        auto& g = ensure_grad(*ln);
                        S gs = self.grad[0] / S(m);
                        for (int64_t i = 0; i < m; ++i) {
                          for (int64_t j = 0; j < c; ++j) g[i * c + j] += gs * (*pp)[i * c + j];
                          g[i * c + (*ll)[size_t(i)]] -= gs;
                        }
                      });
}

// ---------------------------------------------------------------------------
// Spatial ops (NCHW)
// ---------------------------------------------------------------------------

template <class S>
Var<S> concat_channel(const Var<S>& a, const Var<S>& b) {
  detail::require_4d(a, "concat_channel");
  detail::require_4d(b, "concat_channel");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3])
    throw DimensionError("concat_channel: " + shape_str(sa) + " vs " + shape_str(sb));
  const int64_t n = sa[0], ca = sa[1], cb = sb[1], hw = sa[2] * sa[3];
  Tensor<S> out({n, ca + cb, sa[2], sa[3]});
  for (int64_t i = 0; i < n; ++i) {
    std::memcpy(out.ptr() + i * (ca + cb) * hw, a.value().ptr() + i * ca * hw,
                size_t(ca * hw) * sizeof(S));
    std::memcpy(out.ptr() + (i * (ca + cb) + ca) * hw, b.value().ptr() + i * cb * hw,
                size_t(cb * hw) * sizeof(S));
  }
  auto an = a.node(), bn = b.node();
  return make_node<S>("concat_channel", std::move(out), {a, b},
                      [an, bn, n, ca, cb, hw](Node<S>& self) {
                        if (an->requires_grad) {
                          auto& g = ensure_grad(*an);
                          for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < ca * hw; ++j)
                              g[i * ca * hw + j] += self.grad[i * (ca + cb) * hw + j];
                        }
                        if (bn->requires_grad) {
                          auto& g = ensure_grad(*bn);
                          for (int64_t i = 0; i < n; ++i)
                            for (int64_t j = 0; j < cb * hw; ++j)
                              g[i * cb * hw + j] += self.grad[(i * (ca + cb) + ca) * hw + j];
                        }
                      });
}

template <class S>
Var<S> upsample_nearest2x(const Var<S>& x) {
  detail::require_4d(x, "upsample_nearest2x");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  Tensor<S> out({n, c, h * 2, w * 2});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const S* src = x.value().ptr() + nc * h * w;
    S* dst = out.ptr() + nc * 4 * h * w;
    for (int64_t y = 0; y < h; ++y)
      for (int64_t xx = 0; xx < w; ++xx) {
        S v = src[y * w + xx];
        int64_t o = (2 * y) * (2 * w) + 2 * xx;
        dst[o] = v;
        dst[o + 1] = v;
        dst[o + 2 * w] = v;
        dst[o + 2 * w + 1] = v;
      }
  }
  auto xn = x.node();
  return make_node<S>("upsample_nearest2x", std::move(out), {x}, [xn, n, c, h, w](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t nc = 0; nc < n * c; ++nc) {
      const S* gs = self.grad.ptr() + nc * 4 * h * w;
      S* gd = g.ptr() + nc * h * w;
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) {
          int64_t o = (2 * y) * (2 * w) + 2 * xx;
          gd[y * w + xx] += gs[o] + gs[o + 1] + gs[o + 2 * w] + gs[o + 2 * w + 1];
        }
    }
  });
}

/// [N,C,H,W] -> [N*H*W, C]: one row per pixel, for per-pixel classification.
template <class S>
Var<S> nchw_to_rows(const Var<S>& x) {
  detail::require_4d(x, "nchw_to_rows");
  const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<S> out({n * hw, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t p = 0; p < hw; ++p)
        out[(i * hw + p) * c + ci] = x.value()[(i * c + ci) * hw + p];
  auto xn = x.node();
  return make_node<S>("nchw_to_rows", std::move(out), {x}, [xn, n, c, hw](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n; ++i)
      for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < hw; ++p)
          g[(i * c + ci) * hw + p] += self.grad[(i * hw + p) * c + ci];
  });
}

/// [N,C,H,W] -> [N,C] spatial mean.
template <class S>
Var<S> global_avg_pool(const Var<S>& x) {
  detail::require_4d(x, "global_avg_pool");
  const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  Tensor<S> out({n, c});
  for (int64_t i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (int64_t j = 0; j < hw; ++j) acc += double(x.value()[i * hw + j]);
    out[i] = S(acc / double(hw));
  }
  auto xn = x.node();
  return make_node<S>("global_avg_pool", std::move(out), {x}, [xn, n, c, hw](Node<S>& self) {
    if (!xn->requires_grad) return;
    auto& g = ensure_grad(*xn);
    for (int64_t i = 0; i < n * c; ++i) {
      S gi = self.grad[i] / S(hw);
      for (int64_t j = 0; j < hw; ++j) g[i * hw + j] += gi;
    }
  });
}

/// Per-sample, per-channel normalization to zero mean / unit variance with
/// learnable affine. gamma/beta are [C].
template <class S>
Var<S> instance_norm(const Var<S>& x, const Var<S>& gamma, const Var<S>& beta,
                     double eps = 1e-5) {
  detail::require_4d(x, "instance_norm");
  const int64_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c})
    throw DimensionError("instance_norm: affine parameters must be [C]");
  Tensor<S> out(x.shape());
  Tensor<S> xhat(x.shape());
  std::vector<S> inv_std(static_cast<size_t>(n * c));
  for (int64_t i = 0; i < n * c; ++i) {
    const S* src = x.value().ptr() + i * hw;
    double mu = 0.0;
    for (int64_t j = 0; j < hw; ++j) mu += double(src[j]);
    mu /= double(hw);
    double var = 0.0;
    for (int64_t j = 0; j < hw; ++j) {
      double d = double(src[j]) - mu;
      var += d * d;
    }
    var /= double(hw);
    double istd = 1.0 / std::sqrt(var + eps);
    inv_std[size_t(i)] = S(istd);
    S gm = gamma.value()[i % c], bt = beta.value()[i % c];
    for (int64_t j = 0; j < hw; ++j) {
      S xh = S((double(src[j]) - mu) * istd);
      xhat[i * hw + j] = xh;
      out[i * hw + j] = gm * xh + bt;
    }
  }
  auto xn = x.node();
  auto gn = gamma.node();
  auto bn = beta.node();
  auto xh = std::make_shared<Tensor<S>>(std::move(xhat));
  auto isp = std::make_shared<std::vector<S>>(std::move(inv_std));
  return make_node<S>(
      "instance_norm", std::move(out), {x, gamma, beta},
      [xn, gn, bn, xh, isp, n, c, hw](Node<S>& self) {
        for (int64_t i = 0; i < n * c; ++i) {
          const S* gout = self.grad.ptr() + i * hw;
          const S* xhp = xh->ptr() + i * hw;
          double sg = 0.0, sgx = 0.0;
          for (int64_t j = 0; j < hw; ++j) {
            sg += double(gout[j]);
            sgx += double(gout[j]) * double(xhp[j]);
          }
          if (gn->requires_grad) ensure_grad(*gn)[i % c] += S(sgx);
          if (bn->requires_grad) ensure_grad(*bn)[i % c] += S(sg);
          if (xn->requires_grad) {
            auto& gx = ensure_grad(*xn);
            double gm_istd = double(gn->value[i % c]) * double((*isp)[size_t(i)]);
            double mg = sg / double(hw), mgx = sgx / double(hw);
            for (int64_t j = 0; j < hw; ++j)
              gx[i * hw + j] += S(gm_istd * (double(gout[j]) - mg - double(xhp[j]) * mgx));
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Convolutions
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
void im2col(const S* x, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t ho, int64_t wo, S* cols) {
  // one sample; cols is [ho*wo, c*kh*kw]
  const int64_t k = c * kh * kw;
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      S* row = cols + (oy * wo + ox) * k;
      const int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
      for (int64_t ci = 0; ci < c; ++ci) {
        const S* plane = x + ci * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
          const int64_t iy = iy0 + ky;
          S* dst = row + (ci * kh + ky) * kw;
          if (iy < 0 || iy >= h) {
            for (int64_t kx = 0; kx < kw; ++kx) dst[kx] = S(0);
            continue;
          }
          for (int64_t kx = 0; kx < kw; ++kx) {
            const int64_t ix = ix0 + kx;
            dst[kx] = (ix >= 0 && ix < w) ? plane[iy * w + ix] : S(0);
          }
        }
      }
    }
  }
}

template <class S>
void col2im_add(const S* cols, int64_t c, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t ho, int64_t wo, S* x) {
  const int64_t k = c * kh * kw;
  for (int64_t oy = 0; oy < ho; ++oy) {
    for (int64_t ox = 0; ox < wo; ++ox) {
      const S* row = cols + (oy * wo + ox) * k;
      const int64_t iy0 = oy * stride - pad, ix0 = ox * stride - pad;
      for (int64_t ci = 0; ci < c; ++ci) {
        S* plane = x + ci * h * w;
        for (int64_t ky = 0; ky < kh; ++ky) {
          const int64_t iy = iy0 + ky;
          if (iy < 0 || iy >= h) continue;
          const S* src = row + (ci * kh + ky) * kw;
          for (int64_t kx = 0; kx < kw; ++kx) {
            const int64_t ix = ix0 + kx;
            if (ix >= 0 && ix < w) plane[iy * w + ix] += src[kx];
          }
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation: x [N,C,H,W] * w [F,C,kh,kw] + b [F], NCHW output.
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int64_t stride, int64_t pad) {
  detail::require_4d(x, "conv2d");
  if (w.shape().size() != 4) throw DimensionError("conv2d: weight must be [F,C,kh,kw]");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int64_t f = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != c)
    throw DimensionError("conv2d: weight channels " + std::to_string(w.shape()[1]) +
                         " vs input channels " + std::to_string(c));
  if (b.shape() != Shape{f}) throw DimensionError("conv2d: bias must be [F]");
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (kh > h + 2 * pad || kw > wd + 2 * pad)
    throw DimensionError("conv2d: kernel larger than padded input");
  const int64_t ho = (h + 2 * pad - kh) / stride + 1;
  const int64_t wo = (wd + 2 * pad - kw) / stride + 1;
  const int64_t k = c * kh * kw, hwo = ho * wo;

  Tensor<S> cols({n * hwo, k});
  for (int64_t i = 0; i < n; ++i)
    detail::im2col(x.value().ptr() + i * c * h * wd, c, h, wd, kh, kw, stride, pad, ho, wo,
                   cols.ptr() + i * hwo * k);

  // out2 [N*ho*wo, F] = cols * W^T, then repack to NCHW.
  EMat<S> out2(n * hwo, f);
  {
    ECMap<S> C(cols.ptr(), n * hwo, k), W(w.value().ptr(), f, k);
    out2.noalias() = C * W.transpose();
    out2.rowwise() += Eigen::Map<const Eigen::Matrix<S, 1, Eigen::Dynamic>>(b.value().ptr(), f);
  }
  Tensor<S> out({n, f, ho, wo});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t fi = 0; fi < f; ++fi)
      for (int64_t p = 0; p < hwo; ++p) out[(i * f + fi) * hwo + p] = out2(i * hwo + p, fi);

  const bool need = x.requires_grad() || w.requires_grad() || b.requires_grad();
  if (!need) return make_node<S>("conv2d", std::move(out), {}, nullptr);

  auto xn = x.node(), wn = w.node(), bn = b.node();
  auto colsp = std::make_shared<Tensor<S>>(std::move(cols));
  return make_node<S>(
      "conv2d", std::move(out), {x, w, b},
      [xn, wn, bn, colsp, n, c, h, wd, f, kh, kw, stride, pad, ho, wo, k, hwo](Node<S>& self) {
        EMat<S> g2(n * hwo, f);
        for (int64_t i = 0; i < n; ++i)
          for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t p = 0; p < hwo; ++p) g2(i * hwo + p, fi) = self.grad[(i * f + fi) * hwo + p];
        if (bn->requires_grad) {
          auto& gb = ensure_grad(*bn);
          for (int64_t fi = 0; fi < f; ++fi) gb[fi] += S(g2.col(fi).template cast<double>().sum());
        }
        if (wn->requires_grad) {
          ECMap<S> C(colsp->ptr(), n * hwo, k);
          EMap<S>(ensure_grad(*wn).ptr(), f, k).noalias() += g2.transpose() * C;
        }
        if (xn->requires_grad) {
          ECMap<S> W(wn->value.ptr(), f, k);
          EMat<S> dcols(n * hwo, k);
          dcols.noalias() = g2 * W;
          auto& gx = ensure_grad(*xn);
          for (int64_t i = 0; i < n; ++i)
            detail::col2im_add(dcols.data() + i * hwo * k, c, h, wd, kh, kw, stride, pad, ho, wo,
                               gx.ptr() + i * c * h * wd);
        }
      });
}

/// Bias-free variant for convs feeding a normalization layer, where a bias
/// would be a dead parameter (the norm subtracts any constant shift).
template <class S>
Var<S> conv2d(const Var<S>& x, const Var<S>& w, int64_t stride, int64_t pad) {
  auto zero_b = Var<S>::leaf(Tensor<S>::zeros({w.shape().empty() ? 0 : w.shape()[0]}), false);
  return conv2d(x, w, zero_b, stride, pad);
}

/// Fractionally-strided convolution: x [N,C,H,W] * w [C,F,kh,kw] + b [F].
/// Output spatial size (H-1)*stride - 2*pad + kh.
template <class S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, const Var<S>& b, int64_t stride,
                        int64_t pad) {
  detail::require_4d(x, "conv_transpose2d");
  if (w.shape().size() != 4) throw DimensionError("conv_transpose2d: weight must be [C,F,kh,kw]");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int64_t f = w.shape()[1], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[0] != c)
    throw DimensionError("conv_transpose2d: weight channels " + std::to_string(w.shape()[0]) +
                         " vs input channels " + std::to_string(c));
  if (b.shape() != Shape{f}) throw DimensionError("conv_transpose2d: bias must be [F]");
  if (stride < 1) throw ContractError("conv_transpose2d: stride must be >= 1");
  const int64_t ho = (h - 1) * stride - 2 * pad + kh;
  const int64_t wo = (wd - 1) * stride - 2 * pad + kw;
  if (ho < 1 || wo < 1) throw DimensionError("conv_transpose2d: empty output");
  const int64_t k = f * kh * kw, hwi = h * wd;

  // x2 [N*H*W, C] gathered from NCHW, then cols = x2 * W (W is [C, F*kh*kw]).
  Tensor<S> x2({n * hwi, c});
  for (int64_t i = 0; i < n; ++i)
    for (int64_t ci = 0; ci < c; ++ci)
      for (int64_t p = 0; p < hwi; ++p) x2[(i * hwi + p) * c + ci] = x.value()[(i * c + ci) * hwi + p];
  EMat<S> cols(n * hwi, k);
  {
    ECMap<S> X(x2.ptr(), n * hwi, c), W(w.value().ptr(), c, k);
    cols.noalias() = X * W;
  }
  Tensor<S> out({n, f, ho, wo});
  for (int64_t fi = 0; fi < f; ++fi)
    for (int64_t i = 0; i < n; ++i)
      for (int64_t p = 0; p < ho * wo; ++p) out[(i * f + fi) * ho * wo + p] = b.value()[fi];
  // scatter-add, the col2im geometry with conv roles swapped
  for (int64_t i = 0; i < n; ++i)
    detail::col2im_add(cols.data() + i * hwi * k, f, ho, wo, kh, kw, stride, pad, h, wd,
                       out.ptr() + i * f * ho * wo);
  check_finite(out, "conv_transpose2d");

  const bool need = x.requires_grad() || w.requires_grad() || b.requires_grad();
  if (!need) return make_node<S>("conv_transpose2d", std::move(out), {}, nullptr);

  auto xn = x.node(), wn = w.node(), bn = b.node();
  auto x2p = std::make_shared<Tensor<S>>(std::move(x2));
  return make_node<S>(
      "conv_transpose2d", std::move(out), {x, w, b},
      [xn, wn, bn, x2p, n, c, h, wd, f, kh, kw, stride, pad, ho, wo, k, hwi](Node<S>& self) {
        // dcols is an im2col of the output gradient with the same geometry
        EMat<S> dcols(n * hwi, k);
        for (int64_t i = 0; i < n; ++i)
          detail::im2col(self.grad.ptr() + i * f * ho * wo, f, ho, wo, kh, kw, stride, pad, h, wd,
                         dcols.data() + i * hwi * k);
        if (bn->requires_grad) {
          auto& gb = ensure_grad(*bn);
          for (int64_t fi = 0; fi < f; ++fi) {
            double acc = 0.0;
            for (int64_t i = 0; i < n; ++i) {
              const S* gp = self.grad.ptr() + (i * f + fi) * ho * wo;
              for (int64_t p = 0; p < ho * wo; ++p) acc += double(gp[p]);
            }
            gb[fi] += S(acc);
          }
        }
        if (wn->requires_grad) {
          ECMap<S> X(x2p->ptr(), n * hwi, c);
          EMap<S>(ensure_grad(*wn).ptr(), c, k).noalias() += X.transpose() * dcols;
        }
        if (xn->requires_grad) {
          ECMap<S> W(wn->value.ptr(), c, k);
          EMat<S> dx2(n * hwi, c);
          dx2.noalias() = dcols * W.transpose();
          auto& gx = ensure_grad(*xn);
          for (int64_t i = 0; i < n; ++i)
            for (int64_t ci = 0; ci < c; ++ci)
              for (int64_t p = 0; p < hwi; ++p)
                gx[(i * c + ci) * hwi + p] += dx2(i * hwi + p, ci);
        }
      });
}

template <class S>
Var<S> conv_transpose2d(const Var<S>& x, const Var<S>& w, int64_t stride, int64_t pad) {
  auto zero_b = Var<S>::leaf(Tensor<S>::zeros({w.shape().size() == 4 ? w.shape()[1] : 0}), false);
  return conv_transpose2d(x, w, zero_b, stride, pad);
}

// ---------------------------------------------------------------------------
// Plain-tensor helpers (no gradients)
// ---------------------------------------------------------------------------

/// Area-average downsample of [H,W] or [N,1,H,W]-style planes by an integer
/// factor. Used for multi-scale ground truth, which carries no gradient.
template <class S>
Tensor<S> area_downsample(const Tensor<S>& x, int64_t factor) {
  if (factor == 1) return x;
  if (x.shape.size() != 2) throw DimensionError("area_downsample expects [H,W]");
  const int64_t h = x.shape[0], w = x.shape[1];
  if (h % factor != 0 || w % factor != 0)
    throw DimensionError("area_downsample: dims not divisible by factor");
  const int64_t ho = h / factor, wo = w / factor;
  Tensor<S> out({ho, wo});
  for (int64_t y = 0; y < ho; ++y)
    for (int64_t xx = 0; xx < wo; ++xx) {
      double acc = 0.0;
      for (int64_t dy = 0; dy < factor; ++dy)
        for (int64_t dx = 0; dx < factor; ++dx) acc += double(x[(y * factor + dy) * w + xx * factor + dx]);
      out[y * wo + xx] = S(acc / double(factor * factor));
    }
  return out;
}

/// Majority vote downsample for class-id maps; ties break to the lowest id.
inline std::vector<uint8_t> majority_downsample(const std::vector<uint8_t>& ids, int64_t h,
                                                int64_t w, int64_t factor, int num_classes) {
  if (factor == 1) return ids;
  if (h % factor != 0 || w % factor != 0)
    throw DimensionError("majority_downsample: dims not divisible by factor");
  const int64_t ho = h / factor, wo = w / factor;
  std::vector<uint8_t> out(static_cast<size_t>(ho * wo));
  std::vector<int> counts(static_cast<size_t>(num_classes));
  for (int64_t y = 0; y < ho; ++y)
    for (int64_t xx = 0; xx < wo; ++xx) {
      std::fill(counts.begin(), counts.end(), 0);
      for (int64_t dy = 0; dy < factor; ++dy)
        for (int64_t dx = 0; dx < factor; ++dx) {
          uint8_t id = ids[size_t((y * factor + dy) * w + xx * factor + dx)];
          if (id >= num_classes) throw DataError("class id out of range in majority_downsample");
          counts[id]++;
        }
      int best = 0;
      for (int ci = 1; ci < num_classes; ++ci)
        if (counts[size_t(ci)] > counts[size_t(best)]) best = ci;
      out[size_t(y * wo + xx)] = uint8_t(best);
    }
  return out;
}

}  // namespace dacl
