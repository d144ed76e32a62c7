#pragma once

#include <utility>
#include <vector>

#include "dacl/ops.hpp"

namespace dacl {

struct LossWeights {
  double lambda_cyc = 10.0;
  double lambda_idt = 5.0;
  double tau = 0.07;

  void validate() const {
    if (!(tau > 0)) throw ContractError("temperature tau must be positive");
    if (lambda_cyc < 0 || lambda_idt < 0) throw ContractError("loss weights must be nonnegative");
  }
};

/// Least-squares adversarial pair for one domain direction.
/// loss_D pushes real scores to 1 and fake scores to 0; loss_G pushes fake
/// scores to 1. The fake scores fed to loss_D must come from a detached
/// generator output (the caller decides what requires grad).
template <class S>
std::pair<Var<S>, Var<S>> adversarial_losses(const Var<S>& scores_real, const Var<S>& scores_fake) {
  if (scores_real.numel() == 0 || scores_fake.numel() == 0)
    throw ContractError("adversarial_losses on empty score map");
  if (scores_real.shape() != scores_fake.shape())
    throw DimensionError("adversarial_losses: score map shapes differ");
  auto loss_d = add(mean_all(square(affine(scores_real, 1.0, -1.0))),
                    mean_all(square(scores_fake)));
  auto loss_g = mean_all(square(affine(scores_fake, 1.0, -1.0)));
  return {loss_d, loss_g};
}

template <class S>
Var<S> cycle_loss(const Var<S>& x, const Var<S>& x_reconstructed) {
  return mean_abs_diff(x, x_reconstructed);
}

template <class S>
Var<S> identity_loss(const Var<S>& x, const Var<S>& same_domain_output) {
  return mean_abs_diff(x, same_domain_output);
}

template <class S>
Var<S> style_total(const Var<S>& adv, const Var<S>& cyc, const Var<S>& idt,
                   const LossWeights& w) {
  w.validate();
  return add(adv, add(scale(cyc, w.lambda_cyc), scale(idt, w.lambda_idt)));
}

/// Batched InfoNCE: queries [B,D] against per-row positives [B,D] and a
/// shared negative set [N,D]; keys carry no gradient. Mean over the batch of
/// the (N+1)-way cross entropy with the positive at index 0.
template <class S>
Var<S> info_nce_batch(const Var<S>& q, const Tensor<S>& k_pos, const Tensor<S>& k_negs,
                      double tau) {
  if (!(tau > 0)) throw ContractError("temperature tau must be positive");
  if (q.shape().size() != 2 || k_pos.shape != q.shape())
    throw DimensionError("info_nce: q and k_pos must both be [B,D]");
  const int64_t b = q.shape()[0], d = q.shape()[1];
  if (k_negs.shape.size() != 2 || (k_negs.shape[0] > 0 && k_negs.shape[1] != d))
    throw DimensionError("info_nce: negatives must be [N,D]");
  auto logits = concat_lastdim(rows_dot_const(q, k_pos), matmul_nt_const(q, k_negs));
  logits = affine(logits, 1.0 / tau, 0.0);
  return cross_entropy_rows(logits, std::vector<int64_t>(size_t(b), 0));
}

/// Single query against one positive and N negatives (N may be 0).
template <class S>
Var<S> info_nce(const Var<S>& q, const Tensor<S>& k_pos, const Tensor<S>& k_negs, double tau) {
  if (q.shape().size() != 1) throw DimensionError("info_nce: q must be a vector");
  const int64_t d = q.shape()[0];
  auto q2 = make_node<S>("reshape_row", Tensor<S>({1, d}, q.value().data), {q},
                         [qn = q.node(), d](Node<S>& self) {
                           if (!qn->requires_grad) return;
                           auto& g = ensure_grad(*qn);
                           for (int64_t i = 0; i < d; ++i) g[i] += self.grad[i];
                         });
  Tensor<S> kp({1, d}, k_pos.data);
  return info_nce_batch(q2, kp, k_negs, tau);
}

/// Multi-scale L1 depth objective. preds run coarse to fine and divide the
/// full resolution by 8/4/2/1; gt is [N,H,W] in meters, strictly positive.
template <class S>
Var<S> depth_loss(const std::vector<Var<S>>& preds, const Tensor<S>& gt) {
  if (preds.size() != 4) throw ContractError("depth_loss expects 4 prediction scales");
  if (gt.shape.size() != 3) throw DimensionError("depth_loss: gt must be [N,H,W]");
  for (int64_t i = 0; i < gt.numel(); ++i)
    if (!(gt[i] > S(0))) throw DataError("depth ground truth must be strictly positive");
  const int64_t n = gt.shape[0], h = gt.shape[1], w = gt.shape[2];
  const int64_t factors[4] = {8, 4, 2, 1};
  Var<S> total;
  for (int si = 0; si < 4; ++si) {
    const int64_t f = factors[si];
    Tensor<S> small({n, 1, h / f, w / f});
    for (int64_t i = 0; i < n; ++i) {
      Tensor<S> plane({h, w});
      std::copy(gt.ptr() + i * h * w, gt.ptr() + (i + 1) * h * w, plane.ptr());
      auto ds = area_downsample(plane, f);
      std::copy(ds.ptr(), ds.ptr() + ds.numel(), small.ptr() + i * (h / f) * (w / f));
    }
    if (preds[size_t(si)].shape() != small.shape)
      throw DimensionError("depth_loss: prediction scale " + std::to_string(si) + " is " +
                           shape_str(preds[size_t(si)].shape()) + ", expected " +
                           shape_str(small.shape));
    auto term = mean_abs_diff(preds[size_t(si)], Var<S>::leaf(std::move(small), false));
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

/// Pixel-wise cross entropy at one scale: logits [N,C,h,w], gt ids length
/// N*h*w in row-major order.
template <class S>
Var<S> seg_loss(const Var<S>& logits, const std::vector<uint8_t>& gt) {
  if (logits.shape().size() != 4) throw DimensionError("seg_loss: logits must be [N,C,h,w]");
  const int64_t n = logits.shape()[0], c = logits.shape()[1];
  const int64_t hw = logits.shape()[2] * logits.shape()[3];
  if (int64_t(gt.size()) != n * hw) throw DimensionError("seg_loss: gt size mismatch");
  std::vector<int64_t> labels(gt.size());
  for (size_t i = 0; i < gt.size(); ++i) {
    if (gt[i] >= c)
      throw DataError("class id " + std::to_string(int(gt[i])) + " out of range [0," +
                      std::to_string(c) + ")");
    labels[i] = int64_t(gt[i]);
  }
  return cross_entropy_rows(nchw_to_rows(logits), labels);
}

/// Multi-scale segmentation objective mirroring depth_loss: the full-res gt
/// is majority-downsampled to each coarser scale and the four cross
/// entropies are summed with equal weight.
template <class S>
Var<S> seg_loss_multiscale(const std::vector<Var<S>>& preds, const std::vector<uint8_t>& gt,
                           int64_t h, int64_t w, int num_classes) {
  if (preds.size() != 4) throw ContractError("seg_loss_multiscale expects 4 prediction scales");
  const int64_t n = int64_t(gt.size()) / (h * w);
  if (int64_t(gt.size()) != n * h * w) throw DimensionError("seg_loss_multiscale: gt size mismatch");
  const int64_t factors[4] = {8, 4, 2, 1};
  Var<S> total;
  for (int si = 0; si < 4; ++si) {
    const int64_t f = factors[si];
    std::vector<uint8_t> small;
    small.reserve(size_t(n * (h / f) * (w / f)));
    for (int64_t i = 0; i < n; ++i) {
      std::vector<uint8_t> plane(gt.begin() + i * h * w, gt.begin() + (i + 1) * h * w);
      auto ds = majority_downsample(plane, h, w, f, num_classes);
      small.insert(small.end(), ds.begin(), ds.end());
    }
    auto term = seg_loss(preds[size_t(si)], small);
    total = total.defined() ? add(total, term) : term;
  }
  return total;
}

}  // namespace dacl
