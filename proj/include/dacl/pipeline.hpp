#pragma once

#include <iostream>
#include <sstream>

#include "dacl/config.hpp"
#include "dacl/contrastive.hpp"
#include "dacl/data.hpp"
#include "dacl/losses.hpp"
#include "dacl/optim.hpp"
#include "dacl/serialize.hpp"

// Training orchestration for the three stages. Every batch index stream is a
// pure function of (seed, stage tag, step), so runs are deterministic and a
// resumed run continues the exact same stream the original would have seen.

namespace dacl {

namespace detail {

inline std::vector<int64_t> batch_indices(uint64_t seed, const std::string& tag, int64_t step,
                                          int64_t count, int64_t batch) {
  if (count < 1) throw DataError("empty split while drawing batch for " + tag);
  Rng rng(seed_chain(seed_chain(seed_chain(seed, "batch"), tag), uint64_t(step)));
  std::vector<int64_t> idx;
  idx.resize(size_t(batch));
  for (auto& i : idx) i = rng.uniform_int(0, count - 1);
  return idx;
}

inline TensorF stack_images(const std::vector<TensorF>& images, const std::vector<int64_t>& idx) {
  const auto& s0 = images.at(size_t(idx.at(0))).shape;
  TensorF out = TensorF::zeros({int64_t(idx.size()), s0[0], s0[1], s0[2]});
  const int64_t per = s0[0] * s0[1] * s0[2];
  for (size_t b = 0; b < idx.size(); ++b)
    std::memcpy(out.data.data() + int64_t(b) * per, images[size_t(idx[b])].data.data(),
                size_t(per) * 4);
  return out;
}

inline void log_line(std::ostream* log, int64_t step, Stage stage, const std::string& name,
                     double value) {
  if (!log) return;
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld, %s, %s, %.10g\n", (long long)step, stage_name(stage),
                name.c_str(), value);
  (*log) << buf;
}

// On a non-finite loss the offending batch goes to disk so the failure can be
// replayed; the rethrown error carries the dump path.
inline std::string dump_batch(const std::string& out_dir, Stage stage, int64_t step,
                              const std::vector<std::pair<std::string, TensorF>>& tensors) {
  std::string out;
  out.append("DDMP", 4);
  put<uint32_t>(out, 1);
  put<uint8_t>(out, uint8_t(stage));
  put<uint64_t>(out, uint64_t(step));
  put<uint32_t>(out, uint32_t(tensors.size()));
  for (const auto& [name, t] : tensors) {
    put_str(out, name);
    put_tensor(out, t);
  }
  std::filesystem::create_directories(out_dir);
  const auto path =
      std::filesystem::path(out_dir) / ("diagnostic_step" + std::to_string(step) + ".bin");
  write_file(path, out);
  return path.string();
}

template <class F>
void guarded_step(const TrainConfig& cfg, int64_t step, F&& body,
                  const std::vector<std::pair<std::string, TensorF>>& batch) {
  try {
    body();
  } catch (const NumericError& e) {
    const auto path = dump_batch(cfg.out_dir, cfg.stage, step, batch);
    throw NumericError(std::string(e.what()) + " at " + stage_name(cfg.stage) + " step " +
                       std::to_string(step) + "; offending batch dumped to " + path);
  }
}

// Rebuild a trainable network from a checkpoint blob through a fresh builder
// so a stale or mismatched checkpoint fails loudly instead of half-loading.
inline Network<float> adopt_net(Network<float> built, Checkpoint& ckpt, const std::string& name) {
  auto& stored = ckpt.net(name);
  if (stored.arch_id != built.arch_id)
    throw ConfigError("checkpoint network '" + name + "' is a " + arch_id_name(stored.arch_id) +
                      ", expected " + arch_id_name(built.arch_id));
  copy_params_from(built, stored);
  return built;
}

inline std::vector<TensorF> sample_images(const std::vector<Sample>& split) {
  std::vector<TensorF> out;
  out.reserve(split.size());
  for (const auto& s : split) out.push_back(s.image);
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage 1: adversarial style transfer
// ---------------------------------------------------------------------------

inline Checkpoint train_style(const TrainConfig& cfg_in, std::ostream* log = nullptr,
                              const std::string& resume = "") {
  TrainConfig cfg = cfg_in;
  cfg.resolve();
  if (cfg.stage != Stage::style) throw ConfigError("train_style requires stage = style");
  const bool bidi = cfg.direction == Direction::bidirectional;
  const LossWeights w{cfg.lambda_cyc, cfg.lambda_idt, cfg.tau};
  w.validate();

  auto g_st = build_generator<float>(seed_chain(cfg.seed, "g_st"));
  auto g_ts = build_generator<float>(seed_chain(cfg.seed, "g_ts"));
  auto d_s = build_discriminator<float>(seed_chain(cfg.seed, "d_s"));
  auto d_t = build_discriminator<float>(seed_chain(cfg.seed, "d_t"));
  g_st.name = "g_st";
  g_ts.name = "g_ts";
  d_s.name = "d_s";
  d_t.name = "d_t";

  std::vector<Var<float>> g_params = g_st.param_list();
  std::vector<Var<float>> d_params;
  if (bidi)
    for (auto& p : g_ts.param_list()) g_params.push_back(p);
  if (bidi)
    for (auto& p : d_s.param_list()) d_params.push_back(p);
  for (auto& p : d_t.param_list()) d_params.push_back(p);
  Adam<float> opt_g(g_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
  Adam<float> opt_d(d_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);

  int64_t start = 0;
  if (!resume.empty()) {
    auto ckpt = load_checkpoint(resume);
    if (ckpt.stage != Stage::style)
      throw ConfigError("cannot resume style training from a " +
                        std::string(stage_name(ckpt.stage)) + " checkpoint");
    g_st = detail::adopt_net(std::move(g_st), ckpt, "g_st");
    d_t = detail::adopt_net(std::move(d_t), ckpt, "d_t");
    if (bidi) {
      g_ts = detail::adopt_net(std::move(g_ts), ckpt, "g_ts");
      d_s = detail::adopt_net(std::move(d_s), ckpt, "d_s");
    }
    // adoption rebuilt the parameter leaves, so the optimizers rebind too
    g_params = g_st.param_list();
    d_params.clear();
    if (bidi)
      for (auto& p : g_ts.param_list()) g_params.push_back(p);
    if (bidi)
      for (auto& p : d_s.param_list()) d_params.push_back(p);
    for (auto& p : d_t.param_list()) d_params.push_back(p);
    opt_g = Adam<float>(g_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    opt_d = Adam<float>(d_params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    const auto& og = ckpt.opt("opt_g");
    const auto& od = ckpt.opt("opt_d");
    opt_g.restore(og.steps, og.m, og.v);
    opt_d.restore(od.steps, od.m, od.v);
    start = ckpt.step;
  }

  const auto src = detail::sample_images(load_split(cfg.data_dir, "train", Domain::source));
  const auto tgt = detail::sample_images(load_split(cfg.data_dir, "train", Domain::target));

  for (int64_t t = start; t < cfg.steps; ++t) {
    const auto is = detail::batch_indices(cfg.seed, "style-src", t, int64_t(src.size()), cfg.batch_size);
    const auto it = detail::batch_indices(cfg.seed, "style-tgt", t, int64_t(tgt.size()), cfg.batch_size);
    TensorF xs = detail::stack_images(src, is);
    TensorF xt = detail::stack_images(tgt, it);
    detail::guarded_step(cfg, t, [&] {
      auto vxs = VarF::leaf(xs, false);
      auto vxt = VarF::leaf(xt, false);
      auto fake_t = generator_forward(g_st, vxs);
      Var<float> fake_s;
      if (bidi) fake_s = generator_forward(g_ts, vxt);

      // discriminators first, on detached fakes
      auto real_t = discriminator_forward(d_t, vxt);
      auto [ld_t, lg_unused_t] = adversarial_losses(real_t, discriminator_forward(d_t, fake_t.detach()));
      Var<float> loss_d = ld_t;
      Var<float> ld_s;
      if (bidi) {
        auto real_s = discriminator_forward(d_s, vxs);
        auto pr = adversarial_losses(real_s, discriminator_forward(d_s, fake_s.detach()));
        ld_s = pr.first;
        loss_d = add(loss_d, ld_s);
      }
      opt_d.zero_grad();
      backward(loss_d);
      opt_d.step();

      // generators second; discriminator parameters drop off the tape
      d_s.set_requires_grad(false);
      d_t.set_requires_grad(false);
      auto score_ft = discriminator_forward(d_t, fake_t);
      auto adv = adversarial_losses(score_ft, score_ft).second;
      Var<float> cyc, idt;
      if (bidi) {
        auto score_fs = discriminator_forward(d_s, fake_s);
        adv = add(adv, adversarial_losses(score_fs, score_fs).second);
        cyc = add(cycle_loss(vxs, generator_forward(g_ts, fake_t)),
                  cycle_loss(vxt, generator_forward(g_st, fake_s)));
        idt = add(identity_loss(vxt, generator_forward(g_st, vxt)),
                  identity_loss(vxs, generator_forward(g_ts, vxs)));
      } else {
        cyc = VarF::leaf(TensorF::scalar(0.0f), false);
        idt = identity_loss(vxt, generator_forward(g_st, vxt));
      }
      auto loss_g = style_total(adv, cyc, idt, w);
      opt_g.zero_grad();
      backward(loss_g);
      opt_g.step();
      d_s.set_requires_grad(true);
      d_t.set_requires_grad(true);

      detail::log_line(log, t, cfg.stage, "loss_d_t", ld_t.scalar());
      if (bidi) detail::log_line(log, t, cfg.stage, "loss_d_s", ld_s.scalar());
      detail::log_line(log, t, cfg.stage, "loss_g_adv", adv.scalar());
      detail::log_line(log, t, cfg.stage, "loss_g_cyc", cfg.lambda_cyc * double(cyc.scalar()));
      detail::log_line(log, t, cfg.stage, "loss_g_idt", cfg.lambda_idt * double(idt.scalar()));
      detail::log_line(log, t, cfg.stage, "loss_g_total", loss_g.scalar());
    }, {{"x_s", xs}, {"x_t", xt}});
  }

  Checkpoint out;
  out.stage = Stage::style;
  out.step = std::max(start, cfg.steps);
  out.config_text = cfg.canonical();
  out.nets.push_back(g_st);
  if (bidi) out.nets.push_back(g_ts);
  if (bidi) out.nets.push_back(d_s);
  out.nets.push_back(d_t);
  out.opts.push_back({"opt_g", opt_g.steps_taken(), opt_g.moment1(), opt_g.moment2()});
  out.opts.push_back({"opt_d", opt_d.steps_taken(), opt_d.moment1(), opt_d.moment2()});
  save_checkpoint((std::filesystem::path(cfg.out_dir) / "style.ckpt").string(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 2: momentum contrastive feature learning on frozen translations
// ---------------------------------------------------------------------------

namespace detail {

// Frozen-generator translation of a whole split, done once up front. The
// generator is deterministic, so caching changes nothing but the run time.
inline std::vector<TensorF> translate_split(Network<float>& g_frozen,
                                            const std::vector<TensorF>& images) {
  std::vector<TensorF> out;
  out.resize(images.size());
  parallel_for(int64_t(images.size()), [&](int64_t i) {
    const auto& img = images[size_t(i)];
    TensorF batched = img;
    batched.shape = {1, img.shape[0], img.shape[1], img.shape[2]};
    auto fake = generator_forward(g_frozen, VarF::leaf(batched, false));
    if (fake.requires_grad())
      throw ContractError("stage-2/3 generator must be frozen");
    TensorF flat = fake.value();
    flat.shape = img.shape;
    out[size_t(i)] = flat;
  });
  return out;
}

}  // namespace detail

inline Checkpoint train_contrastive(const TrainConfig& cfg_in, std::ostream* log = nullptr,
                                    const std::string& resume = "") {
  TrainConfig cfg = cfg_in;
  cfg.resolve();
  if (cfg.stage != Stage::contrastive)
    throw ConfigError("train_contrastive requires stage = contrastive");
  if (cfg.style_checkpoint.empty())
    throw ConfigError("train_contrastive requires style_checkpoint");
  const bool bidi = cfg.direction == Direction::bidirectional;

  auto style = load_checkpoint(cfg.style_checkpoint);
  if (style.stage != Stage::style)
    throw ConfigError("style_checkpoint does not hold a style-stage checkpoint");
  auto g_st = detail::adopt_net(build_generator<float>(0), style, "g_st");
  g_st.set_requires_grad(false);
  Network<float> g_ts;
  if (bidi) {
    g_ts = detail::adopt_net(build_generator<float>(0), style, "g_ts");
    g_ts.set_requires_grad(false);
  }

  const auto src = detail::sample_images(load_split(cfg.data_dir, "train", Domain::source));
  const auto tgt = detail::sample_images(load_split(cfg.data_dir, "train", Domain::target));
  const auto fake_t_cache = detail::translate_split(g_st, src);
  std::vector<TensorF> fake_s_cache;
  if (bidi) fake_s_cache = detail::translate_split(g_ts, tgt);

  auto pair_t = EncoderPair<float>::make(seed_chain(cfg.seed, "f_T"), cfg.momentum_m);
  ContrastiveQueue<float> queue_t(cfg.queue_capacity, 128);
  EncoderPair<float> pair_s;
  ContrastiveQueue<float> queue_s(1, 128);
  if (bidi) {
    pair_s = EncoderPair<float>::make(seed_chain(cfg.seed, "f_S"), cfg.momentum_m);
    queue_s = ContrastiveQueue<float>(cfg.queue_capacity, 128);
  }

  int64_t start = 0;
  if (!resume.empty()) {
    auto ckpt = load_checkpoint(resume);
    if (ckpt.stage != Stage::contrastive)
      throw ConfigError("cannot resume contrastive training from a " +
                        std::string(stage_name(ckpt.stage)) + " checkpoint");
    // the checkpoint holds encoders only: queues rebuild from empty, heads
    // and optimizer moments restart, and the key nets resync to the query
    copy_params_from(pair_t.query_net, ckpt.net("f_t"));
    copy_params_from(pair_t.key_net, ckpt.net("f_t"));
    if (bidi) {
      copy_params_from(pair_s.query_net, ckpt.net("f_s"));
      copy_params_from(pair_s.key_net, ckpt.net("f_s"));
    }
    start = ckpt.step;
  }

  auto make_opt = [&](EncoderPair<float>& p) {
    auto params = p.query_net.param_list();
    for (auto& v : p.query_head.param_list()) params.push_back(v);
    return Adam<float>(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
  };
  auto opt_t = make_opt(pair_t);
  Adam<float> opt_s({}, 1.0, 0.5, 0.5);
  if (bidi) opt_s = make_opt(pair_s);

  for (int64_t t = start; t < cfg.steps; ++t) {
    const auto it = detail::batch_indices(cfg.seed, "nce-t", t, int64_t(src.size()), cfg.batch_size);
    TensorF q_t = detail::stack_images(fake_t_cache, it);
    TensorF k_t = detail::stack_images(src, it);
    detail::guarded_step(cfg, t, [&] {
      double loss = contrastive_step_images(q_t, k_t, pair_t, queue_t, cfg.tau, opt_t);
      detail::log_line(log, t, cfg.stage, "loss_nce_t", loss);
    }, {{"query", q_t}, {"positive", k_t}});
    if (bidi) {
      const auto is = detail::batch_indices(cfg.seed, "nce-s", t, int64_t(tgt.size()), cfg.batch_size);
      TensorF q_s = detail::stack_images(fake_s_cache, is);
      TensorF k_s = detail::stack_images(tgt, is);
      detail::guarded_step(cfg, t, [&] {
        double loss = contrastive_step_images(q_s, k_s, pair_s, queue_s, cfg.tau, opt_s);
        detail::log_line(log, t, cfg.stage, "loss_nce_s", loss);
      }, {{"query", q_s}, {"positive", k_s}});
    }
  }

  // projection heads are scaffolding: only the feature extractors survive
  Checkpoint out;
  out.stage = Stage::contrastive;
  out.step = std::max(start, cfg.steps);
  out.config_text = cfg.canonical();
  auto f_t = pair_t.query_net;
  f_t.name = "f_t";
  out.nets.push_back(std::move(f_t));
  if (bidi) {
    auto f_s = pair_s.query_net;
    f_s.name = "f_s";
    out.nets.push_back(std::move(f_s));
  }
  save_checkpoint((std::filesystem::path(cfg.out_dir) / "contrastive.ckpt").string(), out);
  return out;
}

// ---------------------------------------------------------------------------
// Stage 3: task finetuning on translated source images
// ---------------------------------------------------------------------------

inline Checkpoint train_task(const TrainConfig& cfg_in, std::ostream* log = nullptr,
                             const std::string& resume = "") {
  TrainConfig cfg = cfg_in;
  cfg.resolve();
  if (cfg.stage != Stage::task) throw ConfigError("train_task requires stage = task");
  const bool baseline = cfg.contrastive_checkpoint.empty();
  if (baseline && !cfg.style_checkpoint.empty())
    throw ConfigError("source-only baseline must not use a style checkpoint");
  if (!baseline && cfg.style_checkpoint.empty())
    throw ConfigError("DACL task training requires style_checkpoint");

  auto enc = build_encoder<float>(seed_chain(cfg.seed, "task-encoder"));
  enc.name = "encoder";
  if (!baseline) {
    auto cc = load_checkpoint(cfg.contrastive_checkpoint);
    if (cc.stage != Stage::contrastive)
      throw ConfigError("contrastive_checkpoint does not hold a contrastive-stage checkpoint");
    enc = detail::adopt_net(std::move(enc), cc, "f_t");
    enc.name = "encoder";
  }
  auto dec = build_task_decoder<float>(cfg.task, int(cfg.num_classes),
                                       seed_chain(cfg.seed, "task-decoder"));
  dec.name = "decoder";

  const auto samples = load_split(cfg.data_dir, "train", Domain::source);
  auto images = detail::sample_images(samples);
  if (!baseline) {
    auto style = load_checkpoint(cfg.style_checkpoint);
    if (style.stage != Stage::style)
      throw ConfigError("style_checkpoint does not hold a style-stage checkpoint");
    auto g_st = detail::adopt_net(build_generator<float>(0), style, "g_st");
    g_st.set_requires_grad(false);
    images = detail::translate_split(g_st, images);
  }

  auto params = enc.param_list();
  for (auto& v : dec.param_list()) params.push_back(v);
  Adam<float> opt(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);

  int64_t start = 0;
  if (!resume.empty()) {
    auto ckpt = load_checkpoint(resume);
    if (ckpt.stage != Stage::task)
      throw ConfigError("cannot resume task training from a " +
                        std::string(stage_name(ckpt.stage)) + " checkpoint");
    enc = detail::adopt_net(std::move(enc), ckpt, "encoder");
    dec = detail::adopt_net(std::move(dec), ckpt, "decoder");
    params = enc.param_list();
    for (auto& v : dec.param_list()) params.push_back(v);
    opt = Adam<float>(params, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2);
    const auto& os = ckpt.opt("opt_task");
    opt.restore(os.steps, os.m, os.v);
    start = ckpt.step;
  }

  const std::string loss_name = cfg.task == Task::depth ? "loss_depth" : "loss_seg";
  for (int64_t t = start; t < cfg.steps; ++t) {
    const auto idx =
        detail::batch_indices(cfg.seed, "task", t, int64_t(samples.size()), cfg.batch_size);
    TensorF x = detail::stack_images(images, idx);
    TensorF gt_depth;
    std::vector<uint8_t> gt_classes;
    if (cfg.task == Task::depth) {
      gt_depth = TensorF::zeros({int64_t(idx.size()), cfg.height, cfg.width});
      const int64_t per = cfg.height * cfg.width;
      for (size_t b = 0; b < idx.size(); ++b)
        std::memcpy(gt_depth.data.data() + int64_t(b) * per,
                    samples[size_t(idx[b])].depth().data.data(), size_t(per) * 4);
    } else {
      for (int64_t i : idx) {
        const auto& c = samples[size_t(i)].classes();
        gt_classes.insert(gt_classes.end(), c.begin(), c.end());
      }
    }
    detail::guarded_step(cfg, t, [&] {
      auto preds = decoder_forward(dec, encoder_forward(enc, VarF::leaf(x, false)));
      Var<float> loss = cfg.task == Task::depth
                            ? depth_loss(preds, gt_depth)
                            : seg_loss_multiscale(preds, gt_classes, cfg.height, cfg.width,
                                                  int(cfg.num_classes));
      opt.zero_grad();
      backward(loss);
      opt.step();
      detail::log_line(log, t, cfg.stage, loss_name, loss.scalar());
    }, {{"x", x}});
  }

  Checkpoint out;
  out.stage = Stage::task;
  out.step = std::max(start, cfg.steps);
  out.config_text = cfg.canonical();
  out.nets.push_back(enc);
  out.nets.push_back(dec);
  out.opts.push_back({"opt_task", opt.steps_taken(), opt.moment1(), opt.moment2()});
  save_checkpoint((std::filesystem::path(cfg.out_dir) / "task.ckpt").string(), out);
  return out;
}

}  // namespace dacl
