#pragma once

#include <functional>
#include <vector>

#include "dacl/ops.hpp"

namespace dacl {

// Central-difference gradient checking. Meant to run on double graphs: with
// eps = 1e-3 the truncation error sits well below the 1e-4 acceptance line,
// while float would drown it in roundoff.

struct GradCheckOptions {
  double eps = 1e-3;
  /// Cap on perturbed coordinates per leaf; < 0 means all of them.
  int64_t max_coords_per_leaf = -1;
  uint64_t sample_seed = 0x5eed;
};

/// Worst relative error between analytic and finite-difference gradients over
/// the checked coordinates: |fd - ad| / max(1e-8, |fd| + |ad|).
///
/// `fn` rebuilds the graph from the current leaf values and returns the scalar
/// loss. It must be deterministic in those values.
template <class S, class F>
double grad_check(F&& fn, std::vector<Var<S>> leaves, const GradCheckOptions& opt = {}) {
  for (auto& l : leaves) {
    if (!l.requires_grad()) throw ContractError("grad_check leaf does not require grad");
    l.zero_grad();
  }
  Var<S> loss = fn();
  backward(loss);

  std::vector<Tensor<S>> analytic;
  analytic.reserve(leaves.size());
  for (auto& l : leaves)
    analytic.push_back(l.has_grad() ? l.grad() : Tensor<S>::zeros(l.shape()));

  double worst = 0.0;
  Rng rng(opt.sample_seed);
  for (size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const int64_t n = leaf.numel();
    std::vector<int64_t> coords;
    if (opt.max_coords_per_leaf < 0 || n <= opt.max_coords_per_leaf) {
      coords.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) coords[size_t(i)] = i;
    } else {
      // sample without replacement via partial Fisher-Yates
      std::vector<int64_t> pool;
      pool.resize(size_t(n));
      for (int64_t i = 0; i < n; ++i) pool[size_t(i)] = i;
      for (int64_t i = 0; i < opt.max_coords_per_leaf; ++i) {
        int64_t j = i + int64_t(rng.next_u64() % uint64_t(n - i));
        std::swap(pool[size_t(i)], pool[size_t(j)]);
      }
      coords.assign(pool.begin(), pool.begin() + opt.max_coords_per_leaf);
    }
    for (int64_t ci : coords) {
      S saved = leaf.value()[ci];
      leaf.value_mut()[ci] = saved + S(opt.eps);
      double lp = double(fn().scalar());
      leaf.value_mut()[ci] = saved - S(opt.eps);
      double lm = double(fn().scalar());
      leaf.value_mut()[ci] = saved;
      double fd = (lp - lm) / (2.0 * opt.eps);
      double ad = double(analytic[li][ci]);
      double rel = std::fabs(fd - ad) / std::max(1e-8, std::fabs(fd) + std::fabs(ad));
      if (rel > worst) worst = rel;
    }
  }
  return worst;
}

}  // namespace dacl
