#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dacl/config.hpp"
#include "dacl/data.hpp"
#include "dacl/network.hpp"
#include "dacl/serialize.hpp"

namespace dacl {

// ---------------------------------------------------------------------------
// Metric computation
// ---------------------------------------------------------------------------

struct DepthMetrics {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  double cap_m = 0;
  int64_t n_pixels = 0;
};

struct SegMetrics {
  std::vector<std::pair<int, double>> per_class_iou;  // classes with a nonempty union
  double miou = 0;
  int64_t n_pixels = 0;
};

/// Standard capped depth metrics. Only pixels with 0 < gt <= cap_m count;
/// predictions are clamped to [kDepthMin, cap_m] first. All accumulation is
/// 64-bit regardless of the map's scalar type.
template <class S>
DepthMetrics depth_metrics(const Tensor<S>& pred, const Tensor<S>& gt, double cap_m) {
  if (!pred.same_shape(gt))
    throw DimensionError("depth_metrics: pred " + shape_str(pred.shape) + " vs gt " +
                         shape_str(gt.shape));
  double s_abs = 0, s_sq = 0, s_se = 0, s_sel = 0;
  int64_t d1 = 0, d2 = 0, d3 = 0, n = 0;
  for (int64_t i = 0; i < gt.numel(); ++i) {
    const double g = double(gt[i]);
    if (!(g > 0.0 && g <= cap_m)) continue;
    double p = double(pred[i]);
    p = std::min(std::max(p, double(kDepthMin)), cap_m);
    const double diff = p - g;
    s_abs += std::abs(diff) / g;
    s_sq += diff * diff / g;
    s_se += diff * diff;
    const double dl = std::log(p) - std::log(g);
    s_sel += dl * dl;
    const double ratio = std::max(p / g, g / p);
    d1 += ratio < 1.25;
    d2 += ratio < 1.25 * 1.25;
    d3 += ratio < 1.25 * 1.25 * 1.25;
    ++n;
  }
  if (n == 0) throw DataError("depth_metrics: no pixels with 0 < gt <= cap");
  DepthMetrics m;
  m.abs_rel = s_abs / double(n);
  m.sq_rel = s_sq / double(n);
  m.rmse = std::sqrt(s_se / double(n));
  m.rmse_log = std::sqrt(s_sel / double(n));
  m.delta1 = double(d1) / double(n);
  m.delta2 = double(d2) / double(n);
  m.delta3 = double(d3) / double(n);
  m.cap_m = cap_m;
  m.n_pixels = n;
  return m;
}

/// Per-class intersection over union. A class missing from both maps is
/// skipped rather than counted as a free 0 (or 1); miou averages the rest.
inline SegMetrics seg_metrics(const std::vector<uint8_t>& pred_ids,
                              const std::vector<uint8_t>& gt_ids, int num_classes) {
  if (pred_ids.size() != gt_ids.size())
    throw DimensionError("seg_metrics: pred has " + std::to_string(pred_ids.size()) +
                         " pixels, gt has " + std::to_string(gt_ids.size()));
  if (pred_ids.empty()) throw DataError("seg_metrics: empty maps");
  std::vector<int64_t> inter(size_t(num_classes), 0), uni(size_t(num_classes), 0);
  for (size_t i = 0; i < gt_ids.size(); ++i) {
    const int p = pred_ids[i], g = gt_ids[i];
    if (p >= num_classes || g >= num_classes)
      throw DataError("seg_metrics: class id out of range (pred " + std::to_string(p) + ", gt " +
                      std::to_string(g) + ", num_classes " + std::to_string(num_classes) + ")");
    if (p == g) {
      ++inter[size_t(p)];
      ++uni[size_t(p)];
    } else {
      ++uni[size_t(p)];
      ++uni[size_t(g)];
    }
  }
  SegMetrics m;
  double total = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (uni[size_t(c)] == 0) continue;
    const double iou = double(inter[size_t(c)]) / double(uni[size_t(c)]);
    m.per_class_iou.emplace_back(c, iou);
    total += iou;
  }
  m.miou = total / double(m.per_class_iou.size());
  m.n_pixels = int64_t(pred_ids.size());
  return m;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricsReport {
  Task task = Task::depth;
  std::string split = "test";
  int64_t n_samples = 0;
  DepthMetrics depth;  // task == depth
  SegMetrics seg;      // task == seg
};

namespace detail {

inline std::string fnum(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Line-delimited key = value text; field order is fixed so regenerated
/// reports compare bit-for-bit. Depth fields follow the usual table order:
/// abs_rel, sq_rel, rmse, rmse_log, then the three delta accuracies.
inline std::string encode_report(const MetricsReport& r) {
  std::string out = "format = dacl-metrics-1\n";
  out += "task = " + std::string(task_name(r.task)) + "\n";
  out += "split = " + r.split + "\n";
  out += "samples = " + std::to_string(r.n_samples) + "\n";
  if (r.task == Task::depth) {
    out += "cap = " + detail::fnum(r.depth.cap_m) + "\n";
    out += "pixels = " + std::to_string(r.depth.n_pixels) + "\n";
    out += "abs_rel = " + detail::fnum(r.depth.abs_rel) + "\n";
    out += "sq_rel = " + detail::fnum(r.depth.sq_rel) + "\n";
    out += "rmse = " + detail::fnum(r.depth.rmse) + "\n";
    out += "rmse_log = " + detail::fnum(r.depth.rmse_log) + "\n";
    out += "delta1 = " + detail::fnum(r.depth.delta1) + "\n";
    out += "delta2 = " + detail::fnum(r.depth.delta2) + "\n";
    out += "delta3 = " + detail::fnum(r.depth.delta3) + "\n";
  } else {
    out += "pixels = " + std::to_string(r.seg.n_pixels) + "\n";
    out += "miou = " + detail::fnum(r.seg.miou) + "\n";
    for (const auto& [c, iou] : r.seg.per_class_iou)
      out += "iou_" + std::to_string(c) + " = " + detail::fnum(iou) + "\n";
  }
  return out;
}

inline MetricsReport parse_report(const std::string& text, const std::string& where) {
  MetricsReport r;
  std::istringstream in(text);
  std::string line;
  bool saw_format = false, saw_task = false;
  auto bad = [&](const std::string& why) { return DataError(where + ": " + why); };
  while (std::getline(in, line)) {
    line = detail::trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw bad("malformed line '" + line + "'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string val = detail::trim(line.substr(eq + 1));
    if (key == "format") {
      if (val != "dacl-metrics-1") throw bad("unsupported format '" + val + "'");
      saw_format = true;
    } else if (key == "task") {
      r.task = task_from_name(val);
      saw_task = true;
    } else if (key == "split") {
      r.split = val;
    } else if (key == "samples") {
      r.n_samples = detail::parse_int(key, val);
    } else if (key == "cap") {
      r.depth.cap_m = detail::parse_num(key, val);
    } else if (key == "pixels") {
      r.depth.n_pixels = detail::parse_int(key, val);
      r.seg.n_pixels = r.depth.n_pixels;
    } else if (key == "abs_rel") {
      r.depth.abs_rel = detail::parse_num(key, val);
    } else if (key == "sq_rel") {
      r.depth.sq_rel = detail::parse_num(key, val);
    } else if (key == "rmse") {
      r.depth.rmse = detail::parse_num(key, val);
    } else if (key == "rmse_log") {
      r.depth.rmse_log = detail::parse_num(key, val);
    } else if (key == "delta1") {
      r.depth.delta1 = detail::parse_num(key, val);
    } else if (key == "delta2") {
      r.depth.delta2 = detail::parse_num(key, val);
    } else if (key == "delta3") {
      r.depth.delta3 = detail::parse_num(key, val);
    } else if (key.rfind("iou_", 0) == 0) {
      r.seg.per_class_iou.emplace_back(int(detail::parse_int(key, key.substr(4))),
                                       detail::parse_num(key, val));
    } else if (key == "miou") {
      r.seg.miou = detail::parse_num(key, val);
    } else {
      throw bad("unknown key '" + key + "'");
    }
  }
  if (!saw_format || !saw_task) throw bad("not a metrics report");
  return r;
}

inline void save_report(const std::string& path, const MetricsReport& r) {
  detail::write_file(path, encode_report(r));
}

inline MetricsReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open report " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_report(ss.str(), path);
}

// ---------------------------------------------------------------------------
// Checkpoint evaluation
// ---------------------------------------------------------------------------

namespace detail {

inline void ppm_pixel(std::string& buf, size_t off, double r, double g, double b) {
  auto q = [](double v) {
    return char(int(std::min(std::max(v, 0.0), 1.0) * 255.0 + 0.5));
  };
  buf[off] = q(r);
  buf[off + 1] = q(g);
  buf[off + 2] = q(b);
}

/// Side-by-side input / prediction / ground-truth panel as a binary PPM.
/// Depth maps render as gray ramps against the cap; class maps use the
/// dataset palette.
inline void dump_eval_image(const std::string& path, const Sample& s, Task task,
                            const TensorF& pred_depth, const std::vector<uint8_t>& pred_ids,
                            double cap_m) {
  const int64_t h = s.image.shape[1], w = s.image.shape[2];
  std::string pix(size_t(3 * h * 3 * w), '\0');
  auto at = [&](int64_t y, int64_t panel, int64_t x) {
    return size_t(3 * (y * 3 * w + panel * w + x));
  };
  const auto& pal = class_palette();
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x) {
      const int64_t i = y * w + x;
      ppm_pixel(pix, at(y, 0, x), 0.5 * (double(s.image[0 * h * w + i]) + 1.0),
                0.5 * (double(s.image[1 * h * w + i]) + 1.0),
                0.5 * (double(s.image[2 * h * w + i]) + 1.0));
      if (task == Task::depth) {
        const double p = double(pred_depth[i]) / cap_m;
        const double g = double(s.depth()[i]) / cap_m;
        ppm_pixel(pix, at(y, 1, x), p, p, p);
        ppm_pixel(pix, at(y, 2, x), g, g, g);
      } else {
        const auto& pc = pal[pred_ids[size_t(i)]];
        const auto& gc = pal[s.classes()[size_t(i)]];
        ppm_pixel(pix, at(y, 1, x), 0.5 * (pc[0] + 1.0), 0.5 * (pc[1] + 1.0),
                  0.5 * (pc[2] + 1.0));
        ppm_pixel(pix, at(y, 2, x), 0.5 * (gc[0] + 1.0), 0.5 * (gc[1] + 1.0),
                  0.5 * (gc[2] + 1.0));
      }
    }
  }
  char head[64];
  std::snprintf(head, sizeof head, "P6\n%lld %lld\n255\n", (long long)(3 * w), (long long)h);
  write_file(path, std::string(head) + pix);
}

}  // namespace detail

/// Run a task checkpoint over the target-domain samples of a split and pool
/// the metrics over every valid pixel (not per-image averages). Evaluation is
/// always on raw target images; translation is a training-time device.
/// A nonempty dump_dir additionally writes one PPM panel per sample.
inline MetricsReport evaluate(Task task, const std::string& ckpt_path,
                              const std::string& data_dir, const std::string& split,
                              double cap_m, const std::string& dump_dir = "") {
  auto ckpt = load_checkpoint(ckpt_path);
  if (ckpt.stage != Stage::task)
    throw ConfigError("cannot evaluate a " + std::string(stage_name(ckpt.stage)) +
                      "-stage checkpoint");
  const auto& dec_saved = ckpt.net("decoder");
  const ArchId want = task == Task::depth ? ArchId::decoder_depth : ArchId::decoder_seg;
  if (dec_saved.arch_id != want)
    throw ConfigError("checkpoint decoder is a " + std::string(arch_id_name(dec_saved.arch_id)) +
                      ", cannot evaluate task " + std::string(task_name(task)));
  const int num_classes =
      task == Task::seg ? int(dec_saved.p("p1.w").shape()[0]) : kNumClasses;

  auto enc = build_encoder<float>(0);
  copy_params_from(enc, ckpt.net("encoder"));
  enc.set_requires_grad(false);
  auto dec = build_task_decoder<float>(task, num_classes, 0);
  copy_params_from(dec, dec_saved);
  dec.set_requires_grad(false);

  const auto samples = load_split(data_dir, split, Domain::target);
  const int64_t h = samples.at(0).image.shape[1], w = samples.at(0).image.shape[2];

  std::vector<TensorF> pred_depths(samples.size());
  std::vector<std::vector<uint8_t>> pred_maps(samples.size());
  parallel_for(int64_t(samples.size()), [&](int64_t i) {
    const auto& s = samples[size_t(i)];
    TensorF batched = s.image;
    batched.shape = {1, 3, h, w};
    auto feats = encoder_forward(enc, VarF::leaf(batched, false));
    auto full = decoder_forward(dec, feats).back().value();
    if (task == Task::depth) {
      TensorF flat = full;
      flat.shape = {h, w};
      pred_depths[size_t(i)] = flat;
    } else {
      std::vector<uint8_t> ids(size_t(h * w));
      for (int64_t p = 0; p < h * w; ++p) {
        int best = 0;
        for (int c = 1; c < num_classes; ++c)
          if (full[int64_t(c) * h * w + p] > full[int64_t(best) * h * w + p]) best = c;
        ids[size_t(p)] = uint8_t(best);
      }
      pred_maps[size_t(i)] = std::move(ids);
    }
  });

  if (!dump_dir.empty()) {
    std::filesystem::create_directories(dump_dir);
    for (size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      auto path = std::filesystem::path(dump_dir) /
                  (std::to_string(s.scene_id) + ".ppm");
      detail::dump_eval_image(path.string(), s, task, pred_depths[i], pred_maps[i], cap_m);
    }
  }

  MetricsReport r;
  r.task = task;
  r.split = split;
  r.n_samples = int64_t(samples.size());
  if (task == Task::depth) {
    TensorF all_pred = TensorF::zeros({int64_t(samples.size()), h, w});
    TensorF all_gt = TensorF::zeros({int64_t(samples.size()), h, w});
    for (size_t i = 0; i < samples.size(); ++i) {
      std::memcpy(all_pred.data.data() + int64_t(i) * h * w, pred_depths[i].data.data(),
                  size_t(h * w) * 4);
      std::memcpy(all_gt.data.data() + int64_t(i) * h * w, samples[i].depth().data.data(),
                  size_t(h * w) * 4);
    }
    r.depth = depth_metrics(all_pred, all_gt, cap_m);
  } else {
    std::vector<uint8_t> all_pred, all_gt;
    all_pred.reserve(samples.size() * size_t(h * w));
    all_gt.reserve(samples.size() * size_t(h * w));
    for (size_t i = 0; i < samples.size(); ++i) {
      all_pred.insert(all_pred.end(), pred_maps[i].begin(), pred_maps[i].end());
      all_gt.insert(all_gt.end(), samples[i].classes().begin(), samples[i].classes().end());
    }
    r.seg = seg_metrics(all_pred, all_gt, num_classes);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Table rendering
// ---------------------------------------------------------------------------

/// Table-style comparison text. With a baseline, a trailing row shows the
/// relative improvement per column, signed so that positive always means the
/// main result is better (errors shrink, accuracies grow).
inline std::string render_report(const MetricsReport& ours, const MetricsReport* baseline) {
  if (baseline && baseline->task != ours.task)
    throw ConfigError("cannot compare a " + std::string(task_name(ours.task)) +
                      " report against a " + std::string(task_name(baseline->task)) +
                      " baseline");
  std::string out;
  char buf[256];
  if (ours.task == Task::depth) {
    std::snprintf(buf, sizeof buf, "Task: depth   cap %gm   split %s\n\n", ours.depth.cap_m,
                  ours.split.c_str());
    out += buf;
    std::snprintf(buf, sizeof buf, "%-12s %9s %9s %9s %9s %9s %9s %9s\n", "method", "abs_rel",
                  "sq_rel", "rmse", "rmse_log", "d<1.25", "d<1.25^2", "d<1.25^3");
    out += buf;
    auto row = [&](const char* name, const DepthMetrics& m) {
      std::snprintf(buf, sizeof buf, "%-12s %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f %9.4f\n", name,
                    m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3);
      out += buf;
    };
    if (baseline) row("baseline", baseline->depth);
    row("ours", ours.depth);
    if (baseline) {
      auto lower = [](double base, double now) { return 100.0 * (base - now) / base; };
      auto higher = [](double base, double now) { return 100.0 * (now - base) / base; };
      const auto& b = baseline->depth;
      const auto& m = ours.depth;
      std::snprintf(buf, sizeof buf, "%-12s %8.1f%% %8.1f%% %8.1f%% %8.1f%% %8.1f%% %8.1f%% %8.1f%%\n",
                    "improvement", lower(b.abs_rel, m.abs_rel), lower(b.sq_rel, m.sq_rel),
                    lower(b.rmse, m.rmse), lower(b.rmse_log, m.rmse_log),
                    higher(b.delta1, m.delta1), higher(b.delta2, m.delta2),
                    higher(b.delta3, m.delta3));
      out += buf;
    }
  } else {
    std::snprintf(buf, sizeof buf, "Task: seg   split %s\n\n", ours.split.c_str());
    out += buf;
    auto cell = [&](const SegMetrics* m, int c) -> std::string {
      if (m)
        for (const auto& [cid, iou] : m->per_class_iou)
          if (cid == c) {
            std::snprintf(buf, sizeof buf, "%9.4f", iou);
            return buf;
          }
      return "        -";
    };
    if (baseline) {
      std::snprintf(buf, sizeof buf, "%-12s %9s %9s\n", "method", "baseline", "ours");
      out += buf;
      std::snprintf(buf, sizeof buf, "%-12s %9.4f %9.4f\n", "miou", baseline->seg.miou,
                    ours.seg.miou);
      out += buf;
      std::snprintf(buf, sizeof buf, "%-12s %9s %8.1f%%\n", "improvement", "",
                    100.0 * (ours.seg.miou - baseline->seg.miou) / baseline->seg.miou);
      out += buf;
      out += "\nPer-class IoU:\n";
      for (int c = 0; c < kNumClasses; ++c) {
        const std::string bv = cell(&baseline->seg, c), ov = cell(&ours.seg, c);
        if (bv[8] == '-' && ov[8] == '-') continue;
        std::snprintf(buf, sizeof buf, "%-12s %s %s\n", class_names()[size_t(c)].c_str(),
                      bv.c_str(), ov.c_str());
        out += buf;
      }
    } else {
      std::snprintf(buf, sizeof buf, "%-12s %9.4f\n", "miou", ours.seg.miou);
      out += buf;
      out += "\nPer-class IoU:\n";
      for (int c = 0; c < kNumClasses; ++c) {
        const std::string ov = cell(&ours.seg, c);
        if (ov[8] == '-') continue;
        std::snprintf(buf, sizeof buf, "%-12s %s\n", class_names()[size_t(c)].c_str(),
                      ov.c_str());
        out += buf;
      }
    }
  }
  return out;
}

}  // namespace dacl
