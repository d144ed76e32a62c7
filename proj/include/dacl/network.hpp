#pragma once

#include <map>
#include <string>
#include <vector>

#include "dacl/ops.hpp"

namespace dacl {

// Depth head output range in meters; the upper end matches the 80 m
// evaluation cap.
constexpr double kDepthMin = 0.5;
constexpr double kDepthMax = 80.0;

enum class ArchId { generator, discriminator, encoder, projection_head, decoder_depth, decoder_seg };

inline const char* arch_id_name(ArchId a) {
  switch (a) {
    case ArchId::generator: return "generator";
    case ArchId::discriminator: return "discriminator";
    case ArchId::encoder: return "encoder";
    case ArchId::projection_head: return "projection_head";
    case ArchId::decoder_depth: return "decoder_depth";
    case ArchId::decoder_seg: return "decoder_seg";
  }
  throw ContractError("unknown arch id");
}

inline ArchId arch_id_from_name(const std::string& s) {
  if (s == "generator") return ArchId::generator;
  if (s == "discriminator") return ArchId::discriminator;
  if (s == "encoder") return ArchId::encoder;
  if (s == "projection_head") return ArchId::projection_head;
  if (s == "decoder_depth") return ArchId::decoder_depth;
  if (s == "decoder_seg") return ArchId::decoder_seg;
  throw DataError("unknown arch id '" + s + "'");
}

/// A named bag of parameter leaves with a stable order. Forward logic lives
/// in free functions below; the struct itself is just state.
template <class S>
struct Network {
  std::string name;
  ArchId arch_id = ArchId::generator;
  std::vector<std::string> order;
  std::map<std::string, Var<S>> params;

  void add(const std::string& key, Tensor<S> value, bool requires_grad = true) {
    if (params.count(key)) throw ContractError("duplicate parameter name " + key);
    order.push_back(key);
    params.emplace(key, Var<S>::leaf(std::move(value), requires_grad));
  }

  Var<S>& p(const std::string& key) {
    auto it = params.find(key);
    if (it == params.end())
      throw ContractError("network " + name + " has no parameter " + key);
    return it->second;
  }
  const Var<S>& p(const std::string& key) const {
    auto it = params.find(key);
    if (it == params.end())
      throw ContractError("network " + name + " has no parameter " + key);
    return it->second;
  }

  std::vector<Var<S>> param_list() {
    std::vector<Var<S>> out;
    out.reserve(order.size());
    for (const auto& k : order) out.push_back(params.at(k));
    return out;
  }

  int64_t num_params() const {
    int64_t n = 0;
    for (const auto& k : order) n += params.at(k).numel();
    return n;
  }

  void set_requires_grad(bool b) {
    for (const auto& k : order) params.at(k).set_requires_grad(b);
  }

  void zero_grads() {
    for (const auto& k : order) params.at(k).zero_grad();
  }
};

/// Overwrite dst's parameter values with src's. The two networks must have
/// identical parameter sets.
template <class S>
void copy_params_from(Network<S>& dst, const Network<S>& src) {
  if (dst.order != src.order)
    throw ContractError("copy_params_from: mismatched parameter sets (" + dst.name + " vs " +
                        src.name + ")");
  for (const auto& k : dst.order) {
    const auto& sv = src.p(k).value();
    if (dst.p(k).shape() != sv.shape)
      throw ContractError("copy_params_from: shape mismatch at " + k);
    dst.p(k).value_mut() = sv;
  }
}

// ---------------------------------------------------------------------------
// Builders. All weights (and biases) draw uniform from
// [-1/sqrt(fan_in), +1/sqrt(fan_in)] in a fixed order, so a (arch, seed) pair
// pins every value. Norm scales start at 1, shifts at 0.
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
struct NetBuilder {
  Network<S>& net;
  Rng rng;

  // `bias` is false for convs that feed an instance norm: the norm cancels any
  // constant shift, so a bias there would be a dead parameter.
  void conv(const std::string& prefix, int64_t f, int64_t c, int64_t k, bool bias = true) {
    double bound = 1.0 / std::sqrt(double(c * k * k));
    net.add(prefix + ".w", Tensor<S>::uniform({f, c, k, k}, rng, -bound, bound));
    if (bias) net.add(prefix + ".b", Tensor<S>::uniform({f}, rng, -bound, bound));
  }
  void convt(const std::string& prefix, int64_t c, int64_t f, int64_t k, bool bias = true) {
    double bound = 1.0 / std::sqrt(double(c * k * k));
    net.add(prefix + ".w", Tensor<S>::uniform({c, f, k, k}, rng, -bound, bound));
    if (bias) net.add(prefix + ".b", Tensor<S>::uniform({f}, rng, -bound, bound));
  }
  void inorm(const std::string& prefix, int64_t c) {
    net.add(prefix + ".in_g", Tensor<S>::full({c}, S(1)));
    net.add(prefix + ".in_b", Tensor<S>::zeros({c}));
  }
  void linear(const std::string& prefix, int64_t in, int64_t out) {
    double bound = 1.0 / std::sqrt(double(in));
    net.add(prefix + ".w", Tensor<S>::uniform({in, out}, rng, -bound, bound));
    net.add(prefix + ".b", Tensor<S>::uniform({out}, rng, -bound, bound));
  }
};

}  // namespace detail

/// Residual image translator: stem, two stride-2 downs, three residual
/// blocks, two transposed-conv ups, tanh output in [-1,1].
template <class S>
Network<S> build_generator(uint64_t seed) {
  Network<S> net;
  net.name = "generator";
  net.arch_id = ArchId::generator;
  detail::NetBuilder<S> b{net, Rng(seed)};
  b.conv("stem", 16, 3, 3, false);
  b.inorm("stem", 16);
  b.conv("down1", 32, 16, 3, false);
  b.inorm("down1", 32);
  b.conv("down2", 64, 32, 3, false);
  b.inorm("down2", 64);
  for (int r = 1; r <= 3; ++r) {
    std::string p = "res" + std::to_string(r);
    b.conv(p + ".c1", 64, 64, 3, false);
    b.inorm(p + ".c1", 64);
    b.conv(p + ".c2", 64, 64, 3, false);
    b.inorm(p + ".c2", 64);
  }
  b.convt("up1", 64, 32, 4, false);
  b.inorm("up1", 32);
  b.convt("up2", 32, 16, 4, false);
  b.inorm("up2", 16);
  b.conv("out", 3, 16, 3);
  return net;
}

/// Patch discriminator: three stride-2 convs then a 1-channel score conv.
/// Output spatial size is H/8 x W/8; raw scores, no final nonlinearity.
template <class S>
Network<S> build_discriminator(uint64_t seed) {
  Network<S> net;
  net.name = "discriminator";
  net.arch_id = ArchId::discriminator;
  detail::NetBuilder<S> b{net, Rng(seed)};
  b.conv("c1", 16, 3, 3);
  b.conv("c2", 32, 16, 3, false);
  b.inorm("c2", 32);
  b.conv("c3", 64, 32, 3, false);
  b.inorm("c3", 64);
  b.conv("score", 1, 64, 3);
  return net;
}

/// Four stride-2 stages at channels 32/64/128/256. Stage outputs feed the
/// decoder skips; the pooled final stage feeds the contrastive branch.
template <class S>
Network<S> build_encoder(uint64_t seed) {
  Network<S> net;
  net.name = "encoder";
  net.arch_id = ArchId::encoder;
  detail::NetBuilder<S> b{net, Rng(seed)};
  const int64_t ch[5] = {3, 32, 64, 128, 256};
  for (int s = 1; s <= 4; ++s) {
    std::string p = "s" + std::to_string(s);
    b.conv(p, ch[s], ch[s - 1], 3, false);
    b.inorm(p, ch[s]);
  }
  return net;
}

/// Two linear layers with the ReLU between them: 256 -> 256 -> ReLU -> 128.
template <class S>
Network<S> build_projection_head(uint64_t seed) {
  Network<S> net;
  net.name = "projection_head";
  net.arch_id = ArchId::projection_head;
  detail::NetBuilder<S> b{net, Rng(seed)};
  b.linear("fc1", 256, 256);
  b.linear("fc2", 256, 128);
  return net;
}

enum class Task { depth, seg };

inline const char* task_name(Task t) { return t == Task::depth ? "depth" : "seg"; }

inline Task task_from_name(const std::string& s) {
  if (s == "depth") return Task::depth;
  if (s == "seg") return Task::seg;
  throw ConfigError("unknown task '" + s + "' (expected depth or seg)");
}

/// U-Net style decoder over the encoder's 4 stages, emitting predictions at
/// H/8, H/4, H/2 and H. Depth variant: 1 channel, sigmoid mapped to
/// [kDepthMin, kDepthMax]. Seg variant: num_classes raw logit channels.
template <class S>
Network<S> build_task_decoder(Task task, int num_classes, uint64_t seed) {
  if (task == Task::seg && num_classes < 2)
    throw ContractError("segmentation decoder needs num_classes >= 2");
  const int64_t cout = task == Task::depth ? 1 : num_classes;
  Network<S> net;
  net.name = task == Task::depth ? "decoder_depth" : "decoder_seg";
  net.arch_id = task == Task::depth ? ArchId::decoder_depth : ArchId::decoder_seg;
  detail::NetBuilder<S> b{net, Rng(seed)};
  // reduce upsampled features, fuse with the skip, predict
  b.conv("r3", 48, 256, 3, false);
  b.inorm("r3", 48);
  b.conv("f3", 48, 48 + 128, 3, false);
  b.inorm("f3", 48);
  b.conv("p8", cout, 48, 3);
  b.conv("r2", 24, 48, 3, false);
  b.inorm("r2", 24);
  b.conv("f2", 24, 24 + 64, 3, false);
  b.inorm("f2", 24);
  b.conv("p4", cout, 24, 3);
  b.conv("r1", 12, 24, 3, false);
  b.inorm("r1", 12);
  b.conv("f1", 12, 12 + 32, 3, false);
  b.inorm("f1", 12);
  b.conv("p2", cout, 12, 3);
  b.conv("r0", 8, 12, 3, false);
  b.inorm("r0", 8);
  b.conv("p1", cout, 8, 3);
  return net;
}

// ---------------------------------------------------------------------------
// Forwards
// ---------------------------------------------------------------------------

namespace detail {

template <class S>
Var<S> conv_in_relu(Network<S>& n, const std::string& p, const Var<S>& x, int64_t stride) {
  auto y = conv2d(x, n.p(p + ".w"), stride, 1);
  return relu(instance_norm(y, n.p(p + ".in_g"), n.p(p + ".in_b")));
}

}  // namespace detail

template <class S>
Var<S> generator_forward(Network<S>& g, const Var<S>& x) {
  auto h = detail::conv_in_relu(g, "stem", x, 1);
  h = detail::conv_in_relu(g, "down1", h, 2);
  h = detail::conv_in_relu(g, "down2", h, 2);
  for (int r = 1; r <= 3; ++r) {
    std::string p = "res" + std::to_string(r);
    auto y = detail::conv_in_relu(g, p + ".c1", h, 1);
    y = conv2d(y, g.p(p + ".c2.w"), 1, 1);
    y = instance_norm(y, g.p(p + ".c2.in_g"), g.p(p + ".c2.in_b"));
    h = add(h, y);
  }
  h = conv_transpose2d(h, g.p("up1.w"), 2, 1);
  h = relu(instance_norm(h, g.p("up1.in_g"), g.p("up1.in_b")));
  h = conv_transpose2d(h, g.p("up2.w"), 2, 1);
  h = relu(instance_norm(h, g.p("up2.in_g"), g.p("up2.in_b")));
  return tanh(conv2d(h, g.p("out.w"), g.p("out.b"), 1, 1));
}

template <class S>
Var<S> discriminator_forward(Network<S>& d, const Var<S>& x) {
  auto h = leaky_relu(conv2d(x, d.p("c1.w"), d.p("c1.b"), 2, 1), 0.2);
  h = conv2d(h, d.p("c2.w"), 2, 1);
  h = leaky_relu(instance_norm(h, d.p("c2.in_g"), d.p("c2.in_b")), 0.2);
  h = conv2d(h, d.p("c3.w"), 2, 1);
  h = leaky_relu(instance_norm(h, d.p("c3.in_g"), d.p("c3.in_b")), 0.2);
  return conv2d(h, d.p("score.w"), d.p("score.b"), 1, 1);
}

template <class S>
struct EncoderOut {
  std::vector<Var<S>> stages;  // H/2, H/4, H/8, H/16 at 32/64/128/256 channels
  Var<S> pooled;               // [N, 256]
};

template <class S>
EncoderOut<S> encoder_forward(Network<S>& e, const Var<S>& x) {
  EncoderOut<S> out;
  auto h = x;
  for (int s = 1; s <= 4; ++s) {
    h = detail::conv_in_relu(e, "s" + std::to_string(s), h, 2);
    out.stages.push_back(h);
  }
  out.pooled = global_avg_pool(h);
  return out;
}

/// [B, 256] -> [B, 128].
template <class S>
Var<S> projection_forward(Network<S>& ph, const Var<S>& v) {
  auto h = relu(add_rowvec(matmul(v, ph.p("fc1.w")), ph.p("fc1.b")));
  return add_rowvec(matmul(h, ph.p("fc2.w")), ph.p("fc2.b"));
}

/// Predictions coarse to fine: H/8, H/4, H/2, H.
template <class S>
std::vector<Var<S>> decoder_forward(Network<S>& dec, const EncoderOut<S>& feats) {
  if (feats.stages.size() != 4) throw ContractError("decoder expects 4 encoder stages");
  const bool depth = dec.arch_id == ArchId::decoder_depth;
  if (!depth && dec.arch_id != ArchId::decoder_seg)
    throw ContractError("decoder_forward on non-decoder network");
  auto head = [&](const std::string& p, const Var<S>& h) {
    auto logits = conv2d(h, dec.p(p + ".w"), dec.p(p + ".b"), 1, 1);
    if (!depth) return logits;
    return affine(sigmoid(logits), kDepthMax - kDepthMin, kDepthMin);
  };
  std::vector<Var<S>> preds;
  auto d = feats.stages[3];  // 256 @ H/16
  d = detail::conv_in_relu(dec, "r3", upsample_nearest2x(d), 1);
  d = detail::conv_in_relu(dec, "f3", concat_channel(d, feats.stages[2]), 1);
  preds.push_back(head("p8", d));
  d = detail::conv_in_relu(dec, "r2", upsample_nearest2x(d), 1);
  d = detail::conv_in_relu(dec, "f2", concat_channel(d, feats.stages[1]), 1);
  preds.push_back(head("p4", d));
  d = detail::conv_in_relu(dec, "r1", upsample_nearest2x(d), 1);
  d = detail::conv_in_relu(dec, "f1", concat_channel(d, feats.stages[0]), 1);
  preds.push_back(head("p2", d));
  d = detail::conv_in_relu(dec, "r0", upsample_nearest2x(d), 1);
  preds.push_back(head("p1", d));
  return preds;
}

}  // namespace dacl
