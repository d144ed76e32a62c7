#pragma once

#include <deque>

#include "dacl/losses.hpp"
#include "dacl/network.hpp"
#include "dacl/optim.hpp"

namespace dacl {

/// Fixed-capacity FIFO store of past key embeddings, oldest first. Enqueuing
/// past capacity evicts from the front.
template <class S>
class ContrastiveQueue {
 public:
  ContrastiveQueue(int64_t capacity, int64_t dim) : capacity_(capacity), dim_(dim) {
    if (capacity < 1) throw ContractError("queue capacity must be positive");
    if (dim < 1) throw ContractError("queue embedding dim must be positive");
  }

  void enqueue_rows(const Tensor<S>& rows) {
    if (rows.shape.size() != 2 || rows.shape[1] != dim_)
      throw DimensionError("enqueue_rows: expected [B," + std::to_string(dim_) + "]");
    for (int64_t i = 0; i < rows.shape[0]; ++i) {
      entries_.emplace_back(rows.ptr() + i * dim_, rows.ptr() + (i + 1) * dim_);
      if (int64_t(entries_.size()) > capacity_) entries_.pop_front();
    }
  }

  /// All current entries stacked [size, dim], oldest first. Empty queue
  /// gives a [0, dim] tensor (InfoNCE then sees zero negatives).
  Tensor<S> negatives() const {
    Tensor<S> out({int64_t(entries_.size()), dim_});
    int64_t r = 0;
    for (const auto& e : entries_) {
      std::copy(e.begin(), e.end(), out.ptr() + r * dim_);
      ++r;
    }
    return out;
  }

  int64_t size() const { return int64_t(entries_.size()); }
  int64_t capacity() const { return capacity_; }
  int64_t dim() const { return dim_; }

 private:
  int64_t capacity_, dim_;
  std::deque<std::vector<S>> entries_;
};

/// Query-side encoder + projection head and their momentum (key-side)
/// copies. Key parameters never require grad; they move only through
/// momentum_update.
template <class S>
struct EncoderPair {
  Network<S> query_net, query_head;
  Network<S> key_net, key_head;
  double m = 0.99;

  static EncoderPair make(uint64_t seed, double momentum) {
    if (momentum < 0.0 || momentum > 1.0)
      throw ContractError("momentum coefficient must lie in [0,1]");
    EncoderPair p;
    p.m = momentum;
    p.query_net = build_encoder<S>(seed_chain(seed, "encoder"));
    p.query_head = build_projection_head<S>(seed_chain(seed, "projection"));
    p.key_net = build_encoder<S>(seed_chain(seed, "encoder"));
    p.key_head = build_projection_head<S>(seed_chain(seed, "projection"));
    p.key_net.set_requires_grad(false);
    p.key_head.set_requires_grad(false);
    return p;
  }
};

/// theta_k <- m * theta_k + (1-m) * theta_q for every parameter of both the
/// encoder and the head, elementwise at storage precision.
template <class S>
void momentum_update(EncoderPair<S>& pair) {
  auto blend = [&](Network<S>& key, Network<S>& query) {
    if (key.order != query.order)
      throw ContractError("momentum_update: mismatched parameter sets");
    for (const auto& name : key.order) {
      auto& kv = key.p(name).value_mut();
      const auto& qv = query.p(name).value();
      if (kv.shape != qv.shape) throw ContractError("momentum_update: shape mismatch at " + name);
      for (int64_t i = 0; i < kv.numel(); ++i)
        kv[i] = S(pair.m) * kv[i] + S(1.0 - pair.m) * qv[i];
    }
  };
  blend(pair.key_net, pair.query_net);
  blend(pair.key_head, pair.query_head);
}

template <class S>
struct ContrastivePairs {
  Var<S> q;         // [B,128], on the tape
  Tensor<S> k_pos;  // [B,128], gradient-free
};

/// Shared pair-formation core. The query image runs through the query-side
/// networks with gradient tracking; the positive runs through the key-side
/// momentum copies without any tape.
template <class S>
ContrastivePairs<S> form_pairs_images(const Tensor<S>& query_images,
                                      const Tensor<S>& positive_images, EncoderPair<S>& pair) {
  if (query_images.shape != positive_images.shape)
    throw DimensionError("form_pairs: query and positive batches must align");
  if (query_images.shape.size() != 4 || query_images.shape[0] < 1)
    throw DimensionError("form_pairs: expected a nonempty NCHW batch");
  ContrastivePairs<S> out;
  auto qx = Var<S>::leaf(query_images, false);
  out.q = l2_normalize_rows(
      projection_forward(pair.query_head, encoder_forward(pair.query_net, qx).pooled));
  auto kx = Var<S>::leaf(positive_images, false);
  auto k = l2_normalize_rows(
      projection_forward(pair.key_head, encoder_forward(pair.key_net, kx).pooled));
  out.k_pos = k.value();
  return out;
}

/// Query = G_st(x_s) (fake target), positive = x_s. G_st must be frozen.
template <class S>
ContrastivePairs<S> form_pairs_target(const Tensor<S>& x_s, Network<S>& g_st,
                                      EncoderPair<S>& pair) {
  auto fake = generator_forward(g_st, Var<S>::leaf(x_s, false));
  return form_pairs_images(fake.value(), x_s, pair);
}

/// Mirror: query = G_ts(x_t) (fake source), positive = x_t.
template <class S>
ContrastivePairs<S> form_pairs_source(const Tensor<S>& x_t, Network<S>& g_ts,
                                      EncoderPair<S>& pair) {
  auto fake = generator_forward(g_ts, Var<S>::leaf(x_t, false));
  return form_pairs_images(fake.value(), x_t, pair);
}

template <class S>
Tensor<S> negatives_from_queue(const ContrastiveQueue<S>& queue) {
  return queue.negatives();
}

/// One full stage-2 step on pre-translated images. Fixed order of effects:
/// pairs -> negatives -> loss -> backward + optimizer (query side only) ->
/// momentum update -> enqueue the new positives.
template <class S>
double contrastive_step_images(const Tensor<S>& query_images, const Tensor<S>& positive_images,
                               EncoderPair<S>& pair, ContrastiveQueue<S>& queue, double tau,
                               Adam<S>& opt) {
  auto pairs = form_pairs_images(query_images, positive_images, pair);
  auto negs = negatives_from_queue(queue);
  auto loss = info_nce_batch(pairs.q, pairs.k_pos, negs, tau);
  opt.zero_grad();
  backward(loss);
  opt.step();
  momentum_update(pair);
  queue.enqueue_rows(pairs.k_pos);
  return double(loss.scalar());
}

/// Convenience wrapper that also runs the frozen generator.
template <class S>
double contrastive_step(const Tensor<S>& batch, EncoderPair<S>& pair, ContrastiveQueue<S>& queue,
                        Network<S>& g_frozen, const LossWeights& w, Adam<S>& opt) {
  w.validate();
  auto fake = generator_forward(g_frozen, Var<S>::leaf(batch, false));
  if (fake.requires_grad())
    throw ContractError("contrastive_step: generator must be frozen in stage 2");
  return contrastive_step_images(fake.value(), batch, pair, queue, w.tau, opt);
}

}  // namespace dacl
