// End-to-end acceptance runner. Prints one [PASS]/[FAIL] line per criterion
// and exits nonzero if any failed. argv[1] is the path to the dacl CLI
// binary; an optional argv[2] substring restricts which criteria run (handy
// when iterating on a single one).
//
// Tolerances are pinned here, next to the checks that use them.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dacl/eval.hpp"
#include "dacl/grad_check.hpp"
#include "dacl/pipeline.hpp"

using namespace dacl;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

std::string g_cli;
fs::path g_work;
bool g_all_ok = true;

void verdict(int idx, const std::string& name, bool ok, const std::string& note) {
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", idx, name.c_str(),
              note.empty() ? "" : " -- ", note.c_str());
  std::fflush(stdout);
  if (!ok) g_all_ok = false;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) return "<unreadable:" + p.string() + ">";
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int sh(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return st < 0 ? st : WEXITSTATUS(st);
}

fs::path scratch(const std::string& tag) {
  auto p = g_work / tag;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------

bool c1_gradients(std::string& note) {
  const double tol = 1e-4;  // pinned acceptance line
  GradCheckOptions opt;     // pinned eps = 1e-3, 64-bit graphs
  const auto t0 = clk::now();

  Rng rng(seed_chain(2026, "acc-grad"));
  double worst = 0;
  std::string worst_at;
  auto probe = [&](const std::string& name, auto&& fn, std::vector<VarD> leaves) {
    const double e = grad_check<double>(fn, std::move(leaves), opt);
    if (e > worst) {
      worst = e;
      worst_at = name;
    }
  };

  for (int trial = 0; trial < 10; ++trial) {
    auto T = [&](Shape s, double lo, double hi) {
      return VarD::leaf(TensorD::uniform(std::move(s), rng, lo, hi), true);
    };

    // elementwise algebra and activations; the L1-style ops (abs, relu,
    // leaky_relu and the cycle/identity losses below) get inputs bounded away
    // from their kinks so eps=1e-3 central differences never straddle one
    auto x = T({2, 3, 4, 4}, -1, 1), y = T({2, 3, 4, 4}, -1, 1);
    auto pos = T({2, 3, 4, 4}, 0.25, 1.0);  // and -pos for the other branch
    probe("add", [&] { return mean_all(add(x, y)); }, {x, y});
    probe("sub*mul", [&] { return mean_all(mul(sub(x, y), x)); }, {x, y});
    probe("scale/affine", [&] { return mean_all(affine(scale(x, 1.7), 0.5, -0.25)); }, {x});
    probe("square", [&] { return mean_all(square(x)); }, {x});
    probe("abs", [&] { return mean_all(add(abs(pos), abs(scale(pos, -1.0)))); }, {pos});
    probe("relu", [&] { return mean_all(add(relu(pos), relu(scale(pos, -1.0)))); }, {pos});
    probe("leaky_relu",
          [&] { return mean_all(add(leaky_relu(pos, 0.2), leaky_relu(scale(pos, -1.0), 0.2))); },
          {pos});
    probe("tanh", [&] { return mean_all(tanh(x)); }, {x});
    probe("sigmoid", [&] { return mean_all(sigmoid(x)); }, {x});
    probe("exp", [&] { return mean_all(exp(scale(x, 0.5))); }, {x});
    probe("log", [&] { return mean_all(log(affine(sigmoid(x), 1.0, 0.5))); }, {x});
    probe("sum_all", [&] { return scale(sum_all(mul(x, y)), 0.01); }, {x, y});

    // matrix ops and the contrastive plumbing. Probes of projection-like ops
    // (l2_normalize, softmax, instance_norm, info_nce) add 2*sum_all(leaf):
    // a linear anchor is exact under central differences and shifts every
    // coordinate's gradient by 2, so the relative-error denominator can't
    // collapse at the odd coordinate where the op's own gradient crosses
    // zero. A wrong backward still moves the composite gradient one-for-one.
    // Plain mean_all would also be blind to these ops entirely: softmax rows
    // and centered IN maps have constant sums, hence the weight tensors.
    auto a = T({3, 5}, -1, 1), b = T({5, 4}, -1, 1), v = T({4}, -1, 1);
    probe("matmul+rowvec", [&] { return mean_all(add_rowvec(matmul(a, b), v)); }, {a, b, v});
    auto q = T({3, 6}, 0.3, 0.9);  // row norms >= 0.73 keep 1/||q|| tame
    TensorD kp = TensorD::uniform({3, 6}, rng, -0.5, 0.5);
    TensorD kn = TensorD::uniform({5, 6}, rng, -0.5, 0.5);
    probe("rows_dot/matmul_nt",
          [&] { return mean_all(concat_lastdim(rows_dot_const(q, kp), matmul_nt_const(q, kn))); },
          {q});
    probe("l2_normalize",
          [&] { return add(mean_all(l2_normalize_rows(q)), scale(sum_all(q), 2.0)); }, {q});
    auto wa = VarD::leaf(TensorD::uniform({3, 5}, rng, 1.0, 2.0), false);
    probe("softmax",
          [&] {
            return add(mean_all(mul(softmax_lastdim(a), wa)), scale(sum_all(a), 2.0));
          },
          {a});
    probe("cross_entropy", [&] { return cross_entropy_rows(a, {0, 2, 4}); }, {a});

    // convolution stack
    auto cx = T({1, 2, 6, 6}, -1, 1), cw = T({3, 2, 3, 3}, -1, 1), cb = T({3}, -1, 1);
    probe("conv2d s1", [&] { return mean_all(conv2d(cx, cw, cb, 1, 1)); }, {cx, cw, cb});
    probe("conv2d s2", [&] { return mean_all(conv2d(cx, cw, cb, 2, 1)); }, {cx, cw, cb});
    auto tx = T({1, 2, 3, 3}, -1, 1), tw = T({2, 3, 3, 3}, -1, 1), tb = T({3}, -1, 1);
    probe("conv_transpose2d", [&] { return mean_all(conv_transpose2d(tx, tw, tb, 2, 1)); },
          {tx, tw, tb});
    auto gma = T({2}, 0.5, 1.5), bta = T({2}, -0.5, 0.5);
    auto wn = VarD::leaf(TensorD::uniform({1, 2, 6, 6}, rng, 1.0, 2.0), false);
    probe("instance_norm",
          [&] {
            auto anchor = add(scale(sum_all(cx), 2.0),
                              add(scale(sum_all(gma), 2.0), scale(sum_all(bta), 2.0)));
            return add(mean_all(mul(instance_norm(cx, gma, bta), wn)), anchor);
          },
          {cx, gma, bta});
    probe("upsample2x", [&] { return mean_all(upsample_nearest2x(cx)); }, {cx});
    probe("global_avg_pool", [&] { return mean_all(global_avg_pool(cx)); }, {cx});
    probe("concat_channel", [&] { return mean_all(concat_channel(x, y)); }, {x, y});
    probe("nchw_to_rows", [&] { return mean_all(nchw_to_rows(cx)); }, {cx});

    // losses; xl and yl are separated ranges so the L1 terms stay off |0|
    auto sr = T({1, 1, 4, 8}, -1, 1), sf = T({1, 1, 4, 8}, -1, 1);
    probe("adversarial d", [&] { return adversarial_losses(sr, sf).first; }, {sr, sf});
    probe("adversarial g", [&] { return adversarial_losses(sr, sf).second; }, {sf});
    auto xl = T({2, 3, 4, 4}, -1.0, -0.1), yl = T({2, 3, 4, 4}, 0.1, 1.0);
    probe("cycle", [&] { return cycle_loss(xl, yl); }, {xl, yl});
    probe("identity", [&] { return identity_loss(xl, yl); }, {xl, yl});
    LossWeights w;
    probe("style_total",
          [&] {
            return style_total(mean_all(square(xl)), cycle_loss(xl, yl), identity_loss(xl, yl), w);
          },
          {xl, yl});
    // a moderate temperature keeps the softmax off saturation for eps=1e-3
    probe("info_nce",
          [&] { return add(info_nce_batch(q, kp, kn, 0.2), scale(sum_all(q), 2.0)); }, {q});

    // predictions below 10, ground truth above 15: the multiscale L1 never
    // sees a pred == gt tie, including after gt area-averaging
    auto p8 = T({1, 1, 1, 2}, 1, 10), p4 = T({1, 1, 2, 4}, 1, 10);
    auto p2 = T({1, 1, 4, 8}, 1, 10), p1 = T({1, 1, 8, 16}, 1, 10);
    TensorD dgt = TensorD::uniform({1, 8, 16}, rng, 15.0, 30.0);
    probe("depth_loss", [&] { return depth_loss<double>({p8, p4, p2, p1}, dgt); },
          {p8, p4, p2, p1});

    auto s8 = T({1, 3, 1, 2}, -1, 1), s4 = T({1, 3, 2, 4}, -1, 1);
    auto s2 = T({1, 3, 4, 8}, -1, 1), s1 = T({1, 3, 8, 16}, -1, 1);
    std::vector<uint8_t> sgt(8 * 16);
    for (auto& g : sgt) g = uint8_t(rng.uniform_int(0, 2));
    probe("seg_loss", [&] { return seg_loss_multiscale<double>({s8, s4, s2, s1}, sgt, 8, 16, 3); },
          {s8, s4, s2, s1});
  }

  const double secs = std::chrono::duration<double>(clk::now() - t0).count();
  char buf[160];
  std::snprintf(buf, sizeof buf, "worst rel err %.3g (%s), %.1f s", worst, worst_at.c_str(),
                secs);
  note = buf;
  return worst < tol && secs < 120.0;  // pinned runtime ceiling
}

// ---------------------------------------------------------------------------
// 2. InfoNCE oracle
// ---------------------------------------------------------------------------

bool c2_infonce(std::string& note) {
  const double tol = 1e-6;          // pinned
  const double uniform_tol = 1e-5;  // pinned
  Rng rng(seed_chain(2026, "acc-nce"));
  double worst = 0, worst_uniform = 0;

  for (int n_neg : {0, 1, 7, 63}) {
    for (int trial = 0; trial < 100; ++trial) {
      const int64_t b = rng.uniform_int(1, 4), d = rng.uniform_int(2, 16);
      const double tau = rng.uniform(0.05, 1.0);
      TensorD qv = TensorD::uniform({b, d}, rng, -1, 1);
      TensorD kp = TensorD::uniform({b, d}, rng, -1, 1);
      TensorD kn = TensorD::uniform({n_neg, d}, rng, -1, 1);
      auto q = VarD::leaf(qv, false);
      const double got = info_nce_batch(q, kp, kn, tau).scalar();

      // independent (N+1)-way softmax cross-entropy, positive at index 0
      double want = 0;
      for (int64_t r = 0; r < b; ++r) {
        std::vector<double> logits(size_t(n_neg) + 1, 0.0);
        for (int64_t j = 0; j < d; ++j) logits[0] += qv[r * d + j] * kp[r * d + j] / tau;
        for (int64_t k = 0; k < n_neg; ++k)
          for (int64_t j = 0; j < d; ++j) logits[size_t(k) + 1] += qv[r * d + j] * kn[k * d + j] / tau;
        const double mx = *std::max_element(logits.begin(), logits.end());
        double lse = 0;
        for (double l : logits) lse += std::exp(l - mx);
        want += (mx + std::log(lse) - logits[0]) / double(b);
      }
      worst = std::max(worst, std::abs(got - want));
    }

    // identical keys => uniform logits => ln(N+1) exactly
    const int64_t d = 8;
    TensorD key = TensorD::uniform({1, d}, rng, -1, 1);
    TensorD kn({n_neg, d});
    for (int64_t k = 0; k < n_neg; ++k)
      for (int64_t j = 0; j < d; ++j) kn[k * d + j] = key[j];
    auto q = VarD::leaf(TensorD::uniform({1, d}, rng, -1, 1), false);
    const double got = info_nce_batch(q, key, kn, 0.07).scalar();
    worst_uniform = std::max(worst_uniform, std::abs(got - std::log(double(n_neg) + 1.0)));
  }

  char buf[120];
  std::snprintf(buf, sizeof buf, "max |diff| %.3g, uniform-logit |diff| %.3g", worst,
                worst_uniform);
  note = buf;
  return worst < tol && worst_uniform < uniform_tol;
}

// ---------------------------------------------------------------------------
// 3. momentum / queue suite
// ---------------------------------------------------------------------------

template <class S>
Network<S> one_param_net(const std::string& name, S value) {
  Network<S> n;
  n.name = name;
  n.arch_id = ArchId::encoder;
  n.add("w", Tensor<S>::scalar(value), false);
  return n;
}

bool c3_momentum_queue(std::string& note) {
  // exactness of the scalar momentum blend, m in {0, 0.5, 0.9, 1}
  for (double m : {0.0, 0.5, 0.9, 1.0}) {
    const float a = 0.8125f, b = -0.4375f;  // exactly representable
    EncoderPair<float> pair;
    pair.m = m;
    pair.key_net = one_param_net<float>("k", a);
    pair.query_net = one_param_net<float>("q", b);
    momentum_update(pair);
    const float got = pair.key_net.p("w").value()[0];
    const float want = float(m) * a + float(1.0 - m) * b;
    if (got != want) {
      note = "scalar blend mismatch at m=" + std::to_string(m);
      return false;
    }
  }

  // geometric contraction toward a frozen query
  {
    EncoderPair<double> pair;
    pair.m = 0.9;
    pair.key_net = one_param_net<double>("k", 5.0);
    pair.query_net = one_param_net<double>("q", 1.0);
    double gap = 4.0;
    for (int step = 0; step < 10; ++step) {
      momentum_update(pair);
      const double now = std::abs(pair.key_net.p("w").value()[0] - 1.0);
      if (std::abs(now / gap - 0.9) > 1e-12) {
        note = "contraction ratio drifted at step " + std::to_string(step);
        return false;
      }
      gap = now;
    }
  }

  // FIFO equivalence against a deque oracle, 1000 random traces
  {
    Rng rng(seed_chain(2026, "acc-queue"));
    for (int trace = 0; trace < 1000; ++trace) {
      const int64_t cap = rng.uniform_int(1, 8), dim = rng.uniform_int(1, 5);
      ContrastiveQueue<float> queue(cap, dim);
      std::deque<std::vector<float>> oracle;
      const int64_t ops = rng.uniform_int(1, 20);
      for (int64_t op = 0; op < ops; ++op) {
        const int64_t batch = rng.uniform_int(1, 5);
        TensorF rows = TensorF::uniform({batch, dim}, rng, -1, 1);
        queue.enqueue_rows(rows);
        for (int64_t r = 0; r < batch; ++r) {
          oracle.emplace_back(rows.ptr() + r * dim, rows.ptr() + (r + 1) * dim);
          if (int64_t(oracle.size()) > cap) oracle.pop_front();
        }
        auto negs = queue.negatives();
        if (negs.shape[0] != int64_t(oracle.size())) {
          note = "queue size diverged from oracle";
          return false;
        }
        for (size_t r = 0; r < oracle.size(); ++r)
          if (std::memcmp(negs.ptr() + int64_t(r) * dim, oracle[r].data(),
                          size_t(dim) * sizeof(float)) != 0) {
            note = "queue contents diverged from oracle";
            return false;
          }
      }
    }
  }

  // 50 real contrastive steps: key side moves only through the momentum blend
  {
    Rng rng(seed_chain(2026, "acc-keys"));
    auto pair = EncoderPair<float>::make(seed_chain(2026, "acc-pair"), 0.99);
    ContrastiveQueue<float> queue(64, 128);
    auto params = pair.query_net.param_list();
    for (auto& p : pair.query_head.param_list()) params.push_back(p);
    Adam<float> opt(params, 1e-3, 0.9, 0.999);

    auto shadow_of = [](Network<float>& n) {
      std::vector<TensorF> s;
      for (const auto& k : n.order) s.push_back(n.p(k).value());
      return s;
    };
    auto blend_shadow = [&](std::vector<TensorF>& s, Network<float>& qn) {
      for (size_t i = 0; i < s.size(); ++i) {
        const auto& qv = qn.p(qn.order[i]).value();
        for (int64_t j = 0; j < s[i].numel(); ++j)
          s[i][j] = float(pair.m) * s[i][j] + float(1.0 - pair.m) * qv[j];
      }
    };
    auto matches = [](const std::vector<TensorF>& s, Network<float>& kn) {
      for (size_t i = 0; i < s.size(); ++i) {
        const auto& kv = kn.p(kn.order[i]).value();
        if (std::memcmp(kv.data.data(), s[i].data.data(), size_t(kv.numel()) * 4) != 0)
          return false;
      }
      return true;
    };

    auto shadow_net = shadow_of(pair.key_net), shadow_head = shadow_of(pair.key_head);
    for (int step = 0; step < 50; ++step) {
      TensorF qi = TensorF::uniform({2, 3, 32, 64}, rng, -1, 1);
      TensorF pi = TensorF::uniform({2, 3, 32, 64}, rng, -1, 1);
      contrastive_step_images(qi, pi, pair, queue, 0.07f, opt);
      blend_shadow(shadow_net, pair.query_net);
      blend_shadow(shadow_head, pair.query_head);
      if (!matches(shadow_net, pair.key_net) || !matches(shadow_head, pair.key_head)) {
        note = "key parameters deviated from the pure momentum trajectory at step " +
               std::to_string(step);
        return false;
      }
      for (const auto& k : pair.key_net.order)
        if (pair.key_net.p(k).requires_grad() || pair.key_net.p(k).has_grad()) {
          note = "key network saw gradient state";
          return false;
        }
    }
  }

  note = "scalar blends exact, contraction 0.9/step, 1000 traces, 50 live steps";
  return true;
}

// ---------------------------------------------------------------------------
// 4. loss identities
// ---------------------------------------------------------------------------

bool c4_loss_identities(std::string& note) {
  Rng rng(seed_chain(2026, "acc-ident"));
  auto x = VarD::leaf(TensorD::uniform({2, 3, 8, 8}, rng, -1, 1), false);

  if (cycle_loss(x, x).scalar() != 0.0 || identity_loss(x, x).scalar() != 0.0) {
    note = "identity-generator losses not exactly zero";
    return false;
  }

  LossWeights w;  // lambda_cyc 10, lambda_idt 5
  auto one = VarD::leaf(TensorD::scalar(1.0), false);
  auto two = VarD::leaf(TensorD::scalar(2.0), false);
  auto three = VarD::leaf(TensorD::scalar(3.0), false);
  if (style_total(one, two, three, w).scalar() != 36.0) {
    note = "style_total(1,2,3; 10,5) != 36";
    return false;
  }

  // constant maps survive every downsample exactly -> perfect depth loss is 0
  auto cpred = [&](Shape s) { return VarD::leaf(TensorD::full(std::move(s), 7.25), false); };
  TensorD dgt = TensorD::full({1, 8, 16}, 7.25);
  const double dl =
      depth_loss<double>({cpred({1, 1, 1, 2}), cpred({1, 1, 2, 4}), cpred({1, 1, 4, 8}),
                          cpred({1, 1, 8, 16})},
                         dgt)
          .scalar();
  if (dl != 0.0) {
    note = "perfect depth prediction gave loss " + std::to_string(dl);
    return false;
  }

  // seg: a 50-logit margin puts cross entropy below 1e-9 (pinned)
  auto onehot = [&](Shape s) {
    TensorD t = TensorD::zeros(s);
    const int64_t hw = s[2] * s[3];
    for (int64_t i = 0; i < hw; ++i) t[1 * hw + i] = 50.0;
    return VarD::leaf(t, false);
  };
  std::vector<uint8_t> sgt(8 * 16, 1);
  const double sl = seg_loss_multiscale<double>({onehot({1, 3, 1, 2}), onehot({1, 3, 2, 4}),
                                                 onehot({1, 3, 4, 8}), onehot({1, 3, 8, 16})},
                                                sgt, 8, 16, 3)
                        .scalar();
  if (!(sl >= 0.0 && sl < 1e-9)) {
    note = "perfect seg prediction gave loss " + std::to_string(sl);
    return false;
  }

  // metric perfection rows
  TensorD gt = TensorD::uniform({16, 16}, rng, 0.6, 79.0);
  auto dm = depth_metrics(gt, gt, 80.0);
  if (dm.abs_rel != 0.0 || dm.sq_rel != 0.0 || dm.rmse != 0.0 || dm.rmse_log != 0.0 ||
      dm.delta1 != 1.0 || dm.delta2 != 1.0 || dm.delta3 != 1.0) {
    note = "self-comparison depth metrics not perfect";
    return false;
  }
  std::vector<uint8_t> ids(256);
  for (auto& c : ids) c = uint8_t(rng.uniform_int(0, 11));
  auto sm = seg_metrics(ids, ids, 12);
  if (sm.miou != 1.0) {
    note = "self-comparison miou != 1";
    return false;
  }

  note = "zeros exact, style_total 36 exact, seg residual < 1e-9";
  return true;
}

// ---------------------------------------------------------------------------
// 5. metric oracles
// ---------------------------------------------------------------------------

bool c5_metric_oracles(std::string& note) {
  const double pool_tol = 1e-9;  // pinned
  Rng rng(seed_chain(2026, "acc-metrics"));

  // hand-derived rows
  TensorD g10 = TensorD::full({4, 4}, 10.0);
  auto hand = depth_metrics(TensorD::full({4, 4}, 12.0), g10, 80.0);
  if (std::abs(hand.abs_rel - 0.2) > 1e-12 || std::abs(hand.sq_rel - 0.4) > 1e-12 ||
      std::abs(hand.rmse - 2.0) > 1e-12 || std::abs(hand.rmse_log - 0.182322) > 1e-6 ||
      hand.delta1 != 1.0) {
    note = "hand-derived depth row mismatch";
    return false;
  }
  std::vector<uint8_t> sg = {0, 0, 1, 1}, sp = {0, 1, 1, 1};
  auto hs = seg_metrics(sp, sg, 12);
  if (std::abs(hs.miou - 7.0 / 12.0) > 1e-12) {
    note = "hand-derived miou != 7/12";
    return false;
  }

  double worst_depth = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int64_t h = rng.uniform_int(1, 64), w = rng.uniform_int(1, 64);
    const double cap = rng.uniform(5.0, 90.0);
    TensorD gt({h, w}), pred({h, w});
    for (int64_t i = 0; i < gt.numel(); ++i) {
      gt[i] = rng.uniform() < 0.08 ? 0.0 : rng.uniform(0.05, 100.0);
      pred[i] = rng.uniform(0.05, 100.0);
    }
    double s_abs = 0, s_sq = 0, s_se = 0, s_sel = 0, d1 = 0, d2 = 0, d3 = 0;
    int64_t n = 0;
    for (int64_t i = 0; i < gt.numel(); ++i) {
      if (!(gt[i] > 0.0 && gt[i] <= cap)) continue;
      const double p = std::clamp(pred[i], 0.5, cap), g = gt[i];
      s_abs += std::abs(p - g) / g;
      s_sq += (p - g) * (p - g) / g;
      s_se += (p - g) * (p - g);
      s_sel += std::pow(std::log(p) - std::log(g), 2.0);
      const double r = std::max(p / g, g / p);
      d1 += r < 1.25;
      d2 += r < 1.5625;
      d3 += r < 1.953125;
      ++n;
    }
    if (n == 0) continue;
    auto m = depth_metrics(pred, gt, cap);
    worst_depth = std::max({worst_depth, std::abs(m.abs_rel - s_abs / n),
                            std::abs(m.sq_rel - s_sq / n), std::abs(m.rmse - std::sqrt(s_se / n)),
                            std::abs(m.rmse_log - std::sqrt(s_sel / n)),
                            std::abs(m.delta1 - d1 / n), std::abs(m.delta2 - d2 / n),
                            std::abs(m.delta3 - d3 / n)});
  }
  if (worst_depth >= pool_tol) {
    note = "depth oracle gap " + std::to_string(worst_depth);
    return false;
  }

  for (int trial = 0; trial < 20; ++trial) {
    const int classes = int(rng.uniform_int(2, 12));
    const size_t n = size_t(rng.uniform_int(1, 4096));
    std::vector<uint8_t> pred(n), gt(n);
    for (size_t i = 0; i < n; ++i) {
      pred[i] = uint8_t(rng.uniform_int(0, classes - 1));
      gt[i] = uint8_t(rng.uniform_int(0, classes - 1));
    }
    std::vector<std::vector<int64_t>> conf(size_t(classes),
                                           std::vector<int64_t>(size_t(classes), 0));
    for (size_t i = 0; i < n; ++i) ++conf[gt[i]][pred[i]];
    auto m = seg_metrics(pred, gt, classes);
    double total = 0;
    size_t seen = 0;
    for (int c = 0; c < classes; ++c) {
      int64_t row = 0, col = 0;
      for (int k = 0; k < classes; ++k) {
        row += conf[size_t(c)][size_t(k)];
        col += conf[size_t(k)][size_t(c)];
      }
      const int64_t inter = conf[size_t(c)][size_t(c)], uni = row + col - inter;
      if (uni == 0) continue;
      const double iou = double(inter) / double(uni);
      if (seen >= m.per_class_iou.size() || m.per_class_iou[seen].first != c ||
          m.per_class_iou[seen].second != iou) {
        note = "confusion-matrix oracle mismatch (exactness required)";
        return false;
      }
      total += iou;
      ++seen;
    }
    if (m.per_class_iou.size() != seen || m.miou != total / double(seen)) {
      note = "miou differs from confusion-matrix mean";
      return false;
    }
  }

  char buf[96];
  std::snprintf(buf, sizeof buf, "worst depth-oracle gap %.3g, seg exact", worst_depth);
  note = buf;
  return true;
}

// ---------------------------------------------------------------------------
// 6. CLI determinism
// ---------------------------------------------------------------------------

bool run_session(const fs::path& dir, std::string& why) {
  auto cfg = [&](const std::string& name, const std::string& body) {
    std::ofstream(dir / name) << body;
  };
  cfg("style.cfg",
      "stage = style\ndata_dir = data\nout_dir = run\nseed = 11\nsteps = 2\nbatch_size = 1\n");
  cfg("nce.cfg",
      "stage = contrastive\ndata_dir = data\nout_dir = run\nseed = 11\nsteps = 2\n"
      "batch_size = 2\nqueue_capacity = 4\nstyle_checkpoint = run/style.ckpt\n");
  cfg("task_dacl.cfg",
      "stage = task\ndata_dir = data\nout_dir = run/dacl\nseed = 11\nsteps = 2\n"
      "batch_size = 2\nstyle_checkpoint = run/style.ckpt\n"
      "contrastive_checkpoint = run/contrastive.ckpt\n");
  cfg("task_base.cfg",
      "stage = task\ndata_dir = data\nout_dir = run/base\nseed = 11\nsteps = 2\n"
      "batch_size = 2\n");

  const std::string cd = "cd " + dir.string() + " && " + g_cli + " ";
  const std::vector<std::string> cmds = {
      "gen-data --out data --seed 11 --train 6 --test 2 2>/dev/null",
      "train-style --config style.cfg > style.log",
      "train-contrastive --config nce.cfg > nce.log",
      "train-task --config task_dacl.cfg > task_dacl.log",
      "train-task --config task_base.cfg > task_base.log",
      "eval --task depth --ckpt run/dacl/task.ckpt --data data --cap 80 --out dacl.metrics "
      "2>/dev/null",
      "eval --task depth --ckpt run/base/task.ckpt --data data --cap 80 --out base.metrics "
      "2>/dev/null",
      "report --metrics dacl.metrics --baseline base.metrics > report.txt"};
  for (const auto& c : cmds) {
    if (sh(cd + c) != 0) {
      why = "command failed: " + c;
      return false;
    }
  }
  return true;
}

bool c6_cli_determinism(std::string& note) {
  auto a = scratch("cli_a"), b = scratch("cli_b");
  std::string why;
  if (!run_session(a, why) || !run_session(b, why)) {
    note = why;
    return false;
  }
  const std::vector<std::string> files = {
      "data/manifest",       "run/style.ckpt", "run/contrastive.ckpt",
      "run/dacl/task.ckpt",  "run/base/task.ckpt", "dacl.metrics",
      "base.metrics",        "report.txt",     "style.log",
      "nce.log",             "task_dacl.log",  "task_base.log"};
  int compared = 0;
  for (const auto& f : files) {
    if (slurp(a / f) != slurp(b / f)) {
      note = "byte mismatch in " + f;
      return false;
    }
    ++compared;
  }
  // the dataset trees themselves, record by record
  for (auto& ent : fs::recursive_directory_iterator(a / "data")) {
    if (!ent.is_regular_file()) continue;
    const auto rel = fs::relative(ent.path(), a);
    if (slurp(a / rel) != slurp(b / rel)) {
      note = "byte mismatch in " + rel.string();
      return false;
    }
    ++compared;
  }
  note = std::to_string(compared) + " artifacts byte-identical across sessions";
  return true;
}

// ---------------------------------------------------------------------------
// 7. end-to-end adaptation effect
// ---------------------------------------------------------------------------

bool c7_adaptation(std::string& note) {
  const double budget_minutes = 45.0;    // pinned
  const double min_mean_rel = 0.10;      // pinned: >= 10% mean abs-rel improvement
  const double min_miou_gain = 0.02;     // pinned: >= 2 absolute mIoU points
  const std::clock_t cpu0 = std::clock();
  const auto t0 = clk::now();

  auto dir = scratch("adapt");
  const std::string data = (dir / "data").string();
  write_dataset(data, 1234, 500, 48);

  std::vector<double> rel_gains, miou_gains;
  bool all_lower = true;
  for (uint64_t seed : {1, 2, 3}) {
    const std::string out = (dir / ("s" + std::to_string(seed))).string();

    TrainConfig s;
    s.stage = Stage::style;
    s.data_dir = data;
    s.out_dir = out;
    s.seed = seed;
    train_style(s, nullptr);

    TrainConfig c;
    c.stage = Stage::contrastive;
    c.data_dir = data;
    c.out_dir = out;
    c.seed = seed;
    c.direction = Direction::source_to_target;
    c.style_checkpoint = out + "/style.ckpt";
    train_contrastive(c, nullptr);

    auto task_run = [&](Task task, bool dacl) {
      TrainConfig k;
      k.stage = Stage::task;
      k.data_dir = data;
      k.out_dir = out + "/" + task_name(task) + (dacl ? "_dacl" : "_base");
      k.seed = seed;
      k.task = task;
      if (dacl) {
        k.style_checkpoint = out + "/style.ckpt";
        k.contrastive_checkpoint = out + "/contrastive.ckpt";
      }
      train_task(k, nullptr);
      return evaluate(task, k.out_dir + "/task.ckpt", data, "test", 80.0);
    };

    auto db = task_run(Task::depth, false), dd = task_run(Task::depth, true);
    auto sb = task_run(Task::seg, false), sd = task_run(Task::seg, true);

    all_lower = all_lower && dd.depth.abs_rel < db.depth.abs_rel;
    rel_gains.push_back((db.depth.abs_rel - dd.depth.abs_rel) / db.depth.abs_rel);
    miou_gains.push_back(sd.seg.miou - sb.seg.miou);
    std::printf("    seed %llu: abs_rel %.4f -> %.4f (%+.1f%%), miou %.4f -> %.4f (%+.2f pts)\n",
                (unsigned long long)seed, db.depth.abs_rel, dd.depth.abs_rel,
                100.0 * rel_gains.back(), sb.seg.miou, sd.seg.miou, 100.0 * miou_gains.back());
    std::fflush(stdout);
  }

  double mean_rel = 0, mean_miou = 0;
  for (double g : rel_gains) mean_rel += g / double(rel_gains.size());
  for (double g : miou_gains) mean_miou += g / double(miou_gains.size());
  const double cpu_min = double(std::clock() - cpu0) / CLOCKS_PER_SEC / 60.0;
  const double wall_min = std::chrono::duration<double>(clk::now() - t0).count() / 60.0;

  char buf[200];
  std::snprintf(buf, sizeof buf,
                "%s, mean abs_rel %+0.1f%%, mean miou %+.2f pts, %.1f cpu-min (%.1f wall)",
                all_lower ? "3/3 seeds lower" : "a seed regressed", 100.0 * mean_rel,
                100.0 * mean_miou, cpu_min, wall_min);
  note = buf;
  return all_lower && mean_rel >= min_mean_rel && mean_miou >= min_miou_gain &&
         cpu_min <= budget_minutes;
}

// ---------------------------------------------------------------------------
// 8. stage isolation
// ---------------------------------------------------------------------------

bool c8_stage_isolation(std::string& note) {
  auto dir = scratch("isolation");
  const std::string data = (dir / "data").string();
  write_dataset(data, 7, 6, 2);

  TrainConfig s;
  s.stage = Stage::style;
  s.data_dir = data;
  s.out_dir = dir.string();
  s.seed = 21;
  s.steps = 2;
  s.batch_size = 1;
  train_style(s, nullptr);
  const std::string style_path = (dir / "style.ckpt").string();
  const std::string style_bytes = slurp(style_path);

  TrainConfig c;
  c.stage = Stage::contrastive;
  c.data_dir = data;
  c.out_dir = dir.string();
  c.seed = 21;
  c.steps = 2;
  c.batch_size = 2;
  c.queue_capacity = 4;
  c.style_checkpoint = style_path;
  train_contrastive(c, nullptr);
  if (slurp(style_path) != style_bytes) {
    note = "stage 2 rewrote the style checkpoint";
    return false;
  }
  const std::string nce_bytes = slurp((dir / "contrastive.ckpt").string());

  auto nce = load_checkpoint((dir / "contrastive.ckpt").string());
  for (const auto& n : nce.nets) {
    if (n.arch_id != ArchId::encoder) {
      note = "stage-2 checkpoint holds a non-encoder network (" +
             std::string(arch_id_name(n.arch_id)) + ")";
      return false;
    }
    for (const auto& key : n.order)
      if (key.rfind("fc", 0) == 0) {
        note = "projection-head parameters leaked into the stage-2 checkpoint";
        return false;
      }
  }

  TrainConfig k;
  k.stage = Stage::task;
  k.data_dir = data;
  k.out_dir = (dir / "task").string();
  k.seed = 21;
  k.steps = 2;
  k.batch_size = 2;
  k.style_checkpoint = style_path;
  k.contrastive_checkpoint = (dir / "contrastive.ckpt").string();
  train_task(k, nullptr);
  if (slurp(style_path) != style_bytes) {
    note = "stage 3 rewrote the style checkpoint";
    return false;
  }
  if (slurp((dir / "contrastive.ckpt").string()) != nce_bytes) {
    note = "stage 3 rewrote the contrastive checkpoint";
    return false;
  }
  auto task = load_checkpoint((dir / "task" / "task.ckpt").string());
  for (const auto& n : task.nets)
    if (n.arch_id == ArchId::generator || n.arch_id == ArchId::discriminator) {
      note = "stage-3 checkpoint carries stage-1 networks";
      return false;
    }

  note = "style/contrastive artifacts byte-stable; later checkpoints carry no stage-1 nets, "
         "no heads";
  return true;
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::fprintf(stderr, "usage: %s <path-to-dacl-cli> [criterion-filter]\n", argv[0]);
    return 2;
  }
  g_cli = fs::absolute(argv[1]).string();
  const std::string filter = argc > 2 ? argv[2] : "";
  g_work = fs::temp_directory_path() / "dacl_acceptance";
  fs::create_directories(g_work);

  struct Criterion {
    int idx;
    const char* name;
    bool (*fn)(std::string&);
  };
  const Criterion all[] = {
      {1, "gradient suite", c1_gradients},
      {2, "infonce oracle", c2_infonce},
      {3, "momentum and queue suite", c3_momentum_queue},
      {4, "loss identities", c4_loss_identities},
      {5, "metric oracles", c5_metric_oracles},
      {6, "cli determinism", c6_cli_determinism},
      {7, "end-to-end adaptation effect", c7_adaptation},
      {8, "stage isolation", c8_stage_isolation},
  };

  for (const auto& c : all) {
    if (!filter.empty() && std::string(c.name).find(filter) == std::string::npos) continue;
    std::string note;
    bool ok = false;
    try {
      ok = c.fn(note);
    } catch (const std::exception& e) {
      note = std::string("threw: ") + e.what();
    }
    verdict(c.idx, c.name, ok, note);
  }

  fs::remove_all(g_work);
  return g_all_ok ? 0 : 1;
}
