#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "dacl/common.hpp"

namespace dacl {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d < 0) throw DimensionError("negative extent in shape");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

/// Dense n-dimensional array, row-major. Plain value type; derivative
/// tracking lives in the autodiff layer on top of this.
template <class S>
struct Tensor {
  Shape shape;
  std::vector<S> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(size_t(shape_numel(shape)), S(0)) {}
  Tensor(Shape s, std::vector<S> d) : shape(std::move(s)), data(std::move(d)) {
    if (int64_t(data.size()) != shape_numel(shape))
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_str(shape));
  }

  int64_t numel() const { return int64_t(data.size()); }
  int64_t dim(size_t i) const { return shape.at(i); }
  size_t ndim() const { return shape.size(); }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](int64_t i) { return data[size_t(i)]; }
  const S& operator[](int64_t i) const { return data[size_t(i)]; }

  // 4-d accessor for NCHW work.
  S& at4(int64_t n, int64_t c, int64_t h, int64_t w) {
    return data[size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }
  S at4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return data[size_t(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

  static Tensor full(Shape s, S v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor from(Shape s, std::initializer_list<S> vals) {
    return Tensor(std::move(s), std::vector<S>(vals));
  }

  /// Uniform in [lo, hi) from the given stream.
  static Tensor uniform(Shape s, Rng& rng, double lo, double hi) {
    Tensor t(std::move(s));
    for (auto& v : t.data) v = S(rng.uniform(lo, hi));
    return t;
  }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = T(data[i]);
    return out;
  }
};

template <class S>
bool all_finite(const Tensor<S>& t) {
  for (S v : t.data)
    if (!std::isfinite(double(v))) return false;
  return true;
}

template <class S>
void check_finite(const Tensor<S>& t, const char* where) {
  if (!all_finite(t))
    throw NumericError(std::string("non-finite value produced by ") + where);
}

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

}  // namespace dacl
