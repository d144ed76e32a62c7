#pragma once

#include <array>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dacl/common.hpp"
#include "dacl/network.hpp"
#include "dacl/tensor.hpp"

// Procedural two-domain dataset. Geometry (objects over a receding ground
// plane) is shared between domains; only the rendering style differs. Source
// renders flat per-class colors with hard edges, target renders the same
// scene through a hue rotation, a low-frequency intensity field, gamma
// jitter, and pixel noise. Depth and class maps are identical across the two
// renders, which is what lets evaluation treat the source labels as oracles
// for the target.

namespace dacl {

enum class Domain { source, target };

inline const char* domain_name(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain domain_from_name(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain: " + s);
}

constexpr int64_t kNumClasses = 12;

inline const std::array<std::string, kNumClasses>& class_names() {
  static const std::array<std::string, kNumClasses> names = {
      "sky",  "road", "terrain", "building", "vehicle", "pole",
      "sign", "bush", "barrier", "rock",     "crate",   "drum"};
  return names;
}

// Flat palette in [-1,1] RGB, one entry per class. Values are arbitrary but
// deliberately spread out so the source domain has strong, distinct colors.
inline const std::array<std::array<float, 3>, kNumClasses>& class_palette() {
  static const std::array<std::array<float, 3>, kNumClasses> pal = {{
      {0.20f, 0.60f, 1.00f},     // sky
      {-0.45f, -0.45f, -0.45f},  // road
      {-0.10f, 0.45f, -0.20f},   // terrain
      {1.00f, -0.60f, -0.60f},   // building
      {-0.70f, -0.20f, 1.00f},   // vehicle
      {1.00f, 0.80f, -0.50f},    // pole
      {-0.90f, 0.90f, 0.90f},    // sign
      {-0.30f, -0.80f, 0.40f},   // bush
      {0.90f, -0.20f, 0.90f},    // barrier
      {0.30f, 0.10f, -0.80f},    // rock
      {0.70f, 0.40f, 0.10f},     // crate
      {-0.60f, -0.90f, -0.10f},  // drum
  }};
  return pal;
}

struct SceneObject {
  bool ellipse = false;  // otherwise an axis-aligned rectangle
  double cx = 0, cy = 0; // center in normalized [0,1] image coordinates
  double rx = 0, ry = 0; // half extents, normalized
  int cls = 3;           // class id in [3, 12)
  double depth = 1;      // meters, constant over the object
};

struct SceneGeometry {
  uint64_t seed = 0;
  int64_t scene_id = 0;
  int64_t variant = 0;    // bumped by the class-coverage repair pass
  double horizon = 0.4;   // y of the horizon line, normalized from the top
  double depth_k = 2.0;   // ground depth d(y) = depth_k / (y - horizon)
  double road_center = 0.5;
  double road_half = 0.25;  // half width of the road wedge at the bottom row
  std::vector<SceneObject> objects;
};

inline SceneGeometry generate_scene_variant(uint64_t seed, int64_t scene_id, int64_t variant) {
  SceneGeometry g;
  g.seed = seed;
  g.scene_id = scene_id;
  g.variant = variant;
  Rng rng(seed_chain(seed_chain(seed_chain(seed, "scene"), uint64_t(scene_id)), uint64_t(variant)));
  g.horizon = rng.uniform(0.30, 0.45);
  // pick the bottom-row depth, then solve for the plane scale
  g.depth_k = rng.uniform(2.0, 5.0) * (1.0 - g.horizon);
  g.road_center = rng.uniform(0.35, 0.65);
  g.road_half = rng.uniform(0.15, 0.35);
  int64_t n = rng.uniform_int(2, 6);
  g.objects.resize(size_t(n));
  for (auto& o : g.objects) {
    o.ellipse = rng.uniform() < 0.5;
    o.cls = int(rng.uniform_int(3, kNumClasses - 1));
    o.depth = rng.uniform(1.0, 75.0);
    // screen size falls off with distance: s0 is the world-scale half height
    double s0 = rng.uniform(0.4, 1.0);
    o.ry = std::clamp(1.5 * s0 / o.depth, 0.02, 0.45);
    o.rx = std::clamp(o.ry * rng.uniform(0.6, 1.8), 0.02, 0.45);
    o.cx = rng.uniform(0.05, 0.95);
    o.cy = rng.uniform(0.10, 0.90);
  }
  return g;
}

inline SceneGeometry generate_scene(uint64_t seed, int64_t scene_id) {
  return generate_scene_variant(seed, scene_id, 0);
}

namespace detail {

inline double ground_depth(const SceneGeometry& g, double y) {
  if (y <= g.horizon) return double(kDepthMax);  // sky rows read as far plane
  return std::clamp(g.depth_k / (y - g.horizon), double(kDepthMin), double(kDepthMax));
}

// Depth and class maps from geometry alone; both domains share these bits.
inline void rasterize_labels(const SceneGeometry& g, int64_t h, int64_t w, TensorF& depth,
                             std::vector<uint8_t>& classes) {
  depth = TensorF::zeros({h, w});
  classes.assign(size_t(h * w), 0);
  for (int64_t i = 0; i < h; ++i) {
    double y = (double(i) + 0.5) / double(h);
    for (int64_t j = 0; j < w; ++j) {
      double x = (double(j) + 0.5) / double(w);
      double d = ground_depth(g, y);
      uint8_t cls = 0;
      if (y > g.horizon) {
        // road wedge narrows linearly from the bottom row to the horizon
        double t = (y - g.horizon) / (1.0 - g.horizon);
        cls = std::fabs(x - g.road_center) <= g.road_half * t ? 1 : 2;
      }
      for (const auto& o : g.objects) {
        bool hit;
        if (o.ellipse) {
          double ex = (x - o.cx) / o.rx, ey = (y - o.cy) / o.ry;
          hit = ex * ex + ey * ey <= 1.0;
        } else {
          hit = std::fabs(x - o.cx) <= o.rx && std::fabs(y - o.cy) <= o.ry;
        }
        // z-buffer: strict < keeps the earlier object at exact depth ties
        if (hit && o.depth < d) {
          d = o.depth;
          cls = uint8_t(o.cls);
        }
      }
      depth[i * w + j] = float(d);
      classes[size_t(i * w + j)] = cls;
    }
  }
}

}  // namespace detail

struct Sample {
  TensorF image;  // [3,H,W] in [-1,1]
  Domain domain = Domain::source;
  int64_t scene_id = 0;

  bool has_labels() const { return labeled_; }
  const TensorF& depth() const {
    require_labels();
    return depth_;
  }
  const std::vector<uint8_t>& classes() const {
    require_labels();
    return classes_;
  }
  void set_labels(TensorF depth, std::vector<uint8_t> classes) {
    depth_ = std::move(depth);
    classes_ = std::move(classes);
    labeled_ = true;
  }

 private:
  void require_labels() const {
    if (!labeled_)
      throw ContractError("sample " + std::to_string(scene_id) + " (" + domain_name(domain) +
                          "/train) carries no labels");
  }
  TensorF depth_;
  std::vector<uint8_t> classes_;
  bool labeled_ = false;
};

inline Sample render(const SceneGeometry& g, Domain dom, int64_t h, int64_t w) {
  if (h % 16 != 0 || w % 16 != 0)
    throw ContractError("render dims must be divisible by 16, got " + std::to_string(h) + "x" +
                        std::to_string(w));
  TensorF depth;
  std::vector<uint8_t> classes;
  detail::rasterize_labels(g, h, w, depth, classes);

  Sample s;
  s.domain = dom;
  s.scene_id = g.scene_id;
  s.image = TensorF::zeros({3, h, w});
  const auto& pal = class_palette();
  for (int64_t i = 0; i < h * w; ++i) {
    const auto& rgb = pal[classes[size_t(i)]];
    for (int64_t c = 0; c < 3; ++c) s.image[c * h * w + i] = rgb[size_t(c)];
  }

  if (dom == Domain::target) {
    Rng rng(seed_chain(seed_chain(seed_chain(g.seed, "style"), uint64_t(g.scene_id)), 1));
    // hue rotation about the gray axis, 30..60 degrees either way
    double theta = rng.uniform(30.0, 60.0) * (3.14159265358979323846 / 180.0);
    if (rng.uniform() < 0.5) theta = -theta;
    const double c = std::cos(theta), sn = std::sin(theta);
    // Rodrigues rotation about (1,1,1)/sqrt(3)
    const double a = c + (1 - c) / 3.0;
    const double b1 = (1 - c) / 3.0 - sn / std::sqrt(3.0);
    const double b2 = (1 - c) / 3.0 + sn / std::sqrt(3.0);
    const double rot[3][3] = {{a, b1, b2}, {b2, a, b1}, {b1, b2, a}};
    double amp = rng.uniform(0.10, 0.25);
    double fx = rng.uniform(0.5, 1.5), fy = rng.uniform(0.5, 1.5);
    double px = rng.uniform(), py = rng.uniform();
    double gamma = rng.uniform(0.8, 1.25);
    const double two_pi = 6.283185307179586476925286766559;
    for (int64_t i = 0; i < h; ++i) {
      double y = (double(i) + 0.5) / double(h);
      for (int64_t j = 0; j < w; ++j) {
        double x = (double(j) + 0.5) / double(w);
        double field = 1.0 + amp * std::sin(two_pi * (fx * x + px)) * std::sin(two_pi * (fy * y + py));
        double v01[3];
        for (int64_t ch = 0; ch < 3; ++ch)
          v01[ch] = (double(s.image[ch * h * w + i * w + j]) + 1.0) * 0.5;
        for (int64_t ch = 0; ch < 3; ++ch) {
          double r = 0.5;
          for (int64_t k = 0; k < 3; ++k) r += rot[ch][k] * (v01[k] - 0.5);
          r = std::clamp(r * field, 0.0, 1.0);
          r = std::pow(r, gamma);
          double v = 2.0 * r - 1.0 + 0.05 * rng.normal();
          s.image[ch * h * w + i * w + j] = float(std::clamp(v, -1.0, 1.0));
        }
      }
    }
  }

  s.set_labels(std::move(depth), std::move(classes));
  return s;
}

// ---------------------------------------------------------------------------
// On-disk format
// ---------------------------------------------------------------------------
//
// {dir}/{split}/{domain}/{scene_id}.rec plus {dir}/manifest. A record is a
// fixed little-endian header followed by raw payload:
//   "DREC"  u32 version=1  u64 scene_id  u8 domain  u8 flags  u16 zero
//   u32 channels=3  u32 height  u32 width
//   image   3*H*W f32
//   depth   H*W f32        (flags bit 0)
//   classes H*W u8         (flags bit 1)
// Target/train records are written image-only; the loader refuses label
// access on them.

constexpr uint32_t kRecordVersion = 1;
constexpr char kRecordMagic[4] = {'D', 'R', 'E', 'C'};

struct DatasetManifest {
  uint32_t version = kRecordVersion;
  uint64_t seed = 0;
  int64_t height = 0, width = 0;
  int64_t n_train = 0, n_test = 0;
  // per split/domain record counts, redundant with n_train/n_test by design
  int64_t count_train_source = 0, count_train_target = 0;
  int64_t count_test_source = 0, count_test_target = 0;
};

namespace detail {

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& s, size_t& off, const std::string& path) {
  if (off + sizeof(T) > s.size()) throw DataError("truncated record: " + path);
  T v;
  std::memcpy(&v, s.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + p.string() + " for writing");
  out.write(bytes.data(), std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw DataError("failed to write " + p.string());
}

}  // namespace detail

inline std::string encode_record(const Sample& s, bool with_labels) {
  const auto& sh = s.image.shape;
  if (sh.size() != 3 || sh[0] != 3) throw ContractError("record image must be [3,H,W]");
  std::string out;
  out.append(kRecordMagic, 4);
  detail::put<uint32_t>(out, kRecordVersion);
  detail::put<uint64_t>(out, uint64_t(s.scene_id));
  detail::put<uint8_t>(out, s.domain == Domain::source ? 0 : 1);
  detail::put<uint8_t>(out, with_labels ? 0x3 : 0x0);
  detail::put<uint16_t>(out, 0);
  detail::put<uint32_t>(out, 3);
  detail::put<uint32_t>(out, uint32_t(sh[1]));
  detail::put<uint32_t>(out, uint32_t(sh[2]));
  out.append(reinterpret_cast<const char*>(s.image.data.data()), s.image.data.size() * 4);
  if (with_labels) {
    const auto& d = s.depth();
    out.append(reinterpret_cast<const char*>(d.data.data()), d.data.size() * 4);
    const auto& c = s.classes();
    out.append(reinterpret_cast<const char*>(c.data()), c.size());
  }
  return out;
}

inline Sample decode_record(const std::string& bytes, const std::string& path) {
  size_t off = 0;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kRecordMagic, 4) != 0)
    throw DataError("bad record magic: " + path);
  off = 4;
  uint32_t version = detail::take<uint32_t>(bytes, off, path);
  if (version != kRecordVersion)
    throw DataError("unsupported record version " + std::to_string(version) + ": " + path);
  uint64_t scene_id = detail::take<uint64_t>(bytes, off, path);
  uint8_t dom = detail::take<uint8_t>(bytes, off, path);
  uint8_t flags = detail::take<uint8_t>(bytes, off, path);
  detail::take<uint16_t>(bytes, off, path);
  uint32_t ch = detail::take<uint32_t>(bytes, off, path);
  uint32_t h = detail::take<uint32_t>(bytes, off, path);
  uint32_t w = detail::take<uint32_t>(bytes, off, path);
  if (ch != 3 || dom > 1 || (flags & ~0x3u) != 0) throw DataError("malformed record header: " + path);
  if ((flags == 0x1) || (flags == 0x2))
    throw DataError("record has only one label channel: " + path);

  Sample s;
  s.scene_id = int64_t(scene_id);
  s.domain = dom == 0 ? Domain::source : Domain::target;
  const size_t hw = size_t(h) * size_t(w);
  s.image = TensorF::zeros({3, int64_t(h), int64_t(w)});
  if (off + 3 * hw * 4 > bytes.size()) throw DataError("truncated record: " + path);
  std::memcpy(s.image.data.data(), bytes.data() + off, 3 * hw * 4);
  off += 3 * hw * 4;
  if (flags & 0x1) {
    TensorF depth = TensorF::zeros({int64_t(h), int64_t(w)});
    if (off + hw * 4 > bytes.size()) throw DataError("truncated record: " + path);
    std::memcpy(depth.data.data(), bytes.data() + off, hw * 4);
    off += hw * 4;
    std::vector<uint8_t> classes;
    classes.resize(hw);
    if (off + hw > bytes.size()) throw DataError("truncated record: " + path);
    std::memcpy(classes.data(), bytes.data() + off, hw);
    off += hw;
    for (uint8_t id : classes)
      if (id >= kNumClasses) throw DataError("class id out of range: " + path);
    if (!all_finite(depth)) throw DataError("non-finite depth values: " + path);
    s.set_labels(std::move(depth), std::move(classes));
  }
  if (off != bytes.size()) throw DataError("trailing bytes in record: " + path);
  return s;
}

inline std::string encode_manifest(const DatasetManifest& m) {
  std::string out;
  out += "version=" + std::to_string(m.version) + "\n";
  out += "seed=" + std::to_string(m.seed) + "\n";
  out += "height=" + std::to_string(m.height) + "\n";
  out += "width=" + std::to_string(m.width) + "\n";
  out += "classes=" + std::to_string(kNumClasses) + "\n";
  std::string names;
  for (const auto& n : class_names()) names += (names.empty() ? "" : ",") + n;
  out += "class_names=" + names + "\n";
  out += "train=" + std::to_string(m.n_train) + "\n";
  out += "test=" + std::to_string(m.n_test) + "\n";
  out += "count_train_source=" + std::to_string(m.count_train_source) + "\n";
  out += "count_train_target=" + std::to_string(m.count_train_target) + "\n";
  out += "count_test_source=" + std::to_string(m.count_test_source) + "\n";
  out += "count_test_target=" + std::to_string(m.count_test_target) + "\n";
  return out;
}

inline DatasetManifest read_manifest(const std::string& dir) {
  const auto path = std::filesystem::path(dir) / "manifest";
  if (!std::filesystem::exists(path)) throw DataError("missing manifest: " + path.string());
  std::string text = detail::read_file(path);
  DatasetManifest m;
  std::string expect_names;
  for (const auto& n : class_names()) expect_names += (expect_names.empty() ? "" : ",") + n;
  size_t pos = 0;
  int seen = 0;
  while (pos < text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError("malformed manifest line '" + line + "': " + path.string());
    std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "version") m.version = uint32_t(std::stoul(val));
      else if (key == "seed") m.seed = std::stoull(val);
      else if (key == "height") m.height = std::stoll(val);
      else if (key == "width") m.width = std::stoll(val);
      else if (key == "classes") {
        if (std::stoll(val) != kNumClasses)
          throw DataError("manifest class count mismatch: " + path.string());
      } else if (key == "class_names") {
        if (val != expect_names) throw DataError("manifest class table mismatch: " + path.string());
      } else if (key == "train") m.n_train = std::stoll(val);
      else if (key == "test") m.n_test = std::stoll(val);
      else if (key == "count_train_source") m.count_train_source = std::stoll(val);
      else if (key == "count_train_target") m.count_train_target = std::stoll(val);
      else if (key == "count_test_source") m.count_test_source = std::stoll(val);
      else if (key == "count_test_target") m.count_test_target = std::stoll(val);
      else throw DataError("unknown manifest key '" + key + "': " + path.string());
    } catch (const std::invalid_argument&) {
      throw DataError("malformed manifest value '" + line + "': " + path.string());
    } catch (const std::out_of_range&) {
      throw DataError("malformed manifest value '" + line + "': " + path.string());
    }
    ++seen;
  }
  if (seen < 12) throw DataError("incomplete manifest: " + path.string());
  if (m.version != kRecordVersion)
    throw DataError("unsupported manifest version " + std::to_string(m.version) + ": " + path.string());
  if (m.height % 16 != 0 || m.width % 16 != 0 || m.height <= 0 || m.width <= 0)
    throw DataError("manifest dims not divisible by 16: " + path.string());
  return m;
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

namespace detail {

inline uint16_t class_mask(uint64_t seed, int64_t scene_id, int64_t variant, int64_t h, int64_t w) {
  TensorF depth;
  std::vector<uint8_t> classes;
  rasterize_labels(generate_scene_variant(seed, scene_id, variant), h, w, depth, classes);
  uint16_t mask = 0;
  for (uint8_t c : classes) mask |= uint16_t(1u << c);
  return mask;
}

}  // namespace detail

constexpr int64_t kCoverageMinScenes = 200;

// Geometry variant per training scene. Normally all zero; when a class id
// never shows up across a large training set, the tail scenes are redrawn
// with bumped variants until every id is present. Deterministic in (seed,
// n_train, dims), so dataset generation stays reproducible byte for byte.
inline std::vector<int64_t> plan_train_variants(uint64_t seed, int64_t n_train, int64_t h,
                                                int64_t w) {
  std::vector<int64_t> variants;
  variants.assign(size_t(n_train), 0);
  if (n_train < kCoverageMinScenes) return variants;

  std::vector<uint16_t> masks;
  masks.resize(size_t(n_train));
  parallel_for(n_train, [&](int64_t i) { masks[size_t(i)] = detail::class_mask(seed, i, 0, h, w); });

  const uint16_t full = uint16_t((1u << kNumClasses) - 1);
  const int64_t window = std::min<int64_t>(32, n_train);
  for (int64_t iter = 0; iter < 1000; ++iter) {
    uint16_t seen = 0;
    for (uint16_t m : masks) seen |= m;
    if (seen == full) return variants;
    int64_t s = n_train - 1 - (iter % window);
    variants[size_t(s)] += 1;
    masks[size_t(s)] = detail::class_mask(seed, s, variants[size_t(s)], h, w);
  }
  throw DataError("class coverage repair did not converge for seed " + std::to_string(seed));
}

inline void write_dataset(const std::string& dir, uint64_t seed, int64_t n_train, int64_t n_test,
                          int64_t h = 32, int64_t w = 64) {
  if (n_train < 1 || n_test < 1) throw ContractError("dataset needs at least one scene per split");
  if (h % 16 != 0 || w % 16 != 0)
    throw ContractError("dataset dims must be divisible by 16, got " + std::to_string(h) + "x" +
                        std::to_string(w));
  namespace fs = std::filesystem;
  const fs::path root(dir);
  for (const char* split : {"train", "test"})
    for (const char* dom : {"source", "target"}) fs::create_directories(root / split / dom);

  auto variants = plan_train_variants(seed, n_train, h, w);

  struct Job {
    const char* split;
    Domain dom;
    int64_t scene_id;
    int64_t variant;
    bool labels;
  };
  std::vector<Job> jobs;
  for (int64_t i = 0; i < n_train; ++i) {
    jobs.push_back({"train", Domain::source, i, variants[size_t(i)], true});
    jobs.push_back({"train", Domain::target, i, variants[size_t(i)], false});
  }
  for (int64_t i = 0; i < n_test; ++i) {
    jobs.push_back({"test", Domain::source, n_train + i, 0, true});
    jobs.push_back({"test", Domain::target, n_train + i, 0, true});
  }

  std::vector<std::string> encoded;
  encoded.resize(jobs.size());
  parallel_for(int64_t(jobs.size()), [&](int64_t j) {
    const Job& job = jobs[size_t(j)];
    auto g = generate_scene_variant(seed, job.scene_id, job.variant);
    encoded[size_t(j)] = encode_record(render(g, job.dom, h, w), job.labels);
  });
  for (size_t j = 0; j < jobs.size(); ++j) {
    const Job& job = jobs[j];
    detail::write_file(root / job.split / domain_name(job.dom) /
                           (std::to_string(job.scene_id) + ".rec"),
                       encoded[j]);
  }

  DatasetManifest m;
  m.seed = seed;
  m.height = h;
  m.width = w;
  m.n_train = n_train;
  m.n_test = n_test;
  m.count_train_source = m.count_train_target = n_train;
  m.count_test_source = m.count_test_target = n_test;
  detail::write_file(root / "manifest", encode_manifest(m));
}

inline std::vector<Sample> load_split(const std::string& dir, const std::string& split,
                                      Domain dom) {
  if (split != "train" && split != "test") throw ConfigError("unknown split: " + split);
  auto m = read_manifest(dir);
  const int64_t count = split == "train"
                            ? (dom == Domain::source ? m.count_train_source : m.count_train_target)
                            : (dom == Domain::source ? m.count_test_source : m.count_test_target);
  const int64_t first = split == "train" ? 0 : m.n_train;
  const bool expect_labels = !(split == "train" && dom == Domain::target);

  std::vector<Sample> out;
  out.resize(size_t(count));
  const auto base = std::filesystem::path(dir) / split / domain_name(dom);
  for (int64_t i = 0; i < count; ++i) {
    const auto path = base / (std::to_string(first + i) + ".rec");
    Sample s = decode_record(detail::read_file(path), path.string());
    if (s.scene_id != first + i) throw DataError("scene id mismatch: " + path.string());
    if (s.domain != dom) throw DataError("domain mismatch: " + path.string());
    if (s.image.shape[1] != m.height || s.image.shape[2] != m.width)
      throw DataError("record dims disagree with manifest: " + path.string());
    if (s.has_labels() != expect_labels)
      throw DataError(expect_labels ? "record is missing labels: " + path.string()
                                    : "target train record carries labels: " + path.string());
    out[size_t(i)] = std::move(s);
  }
  return out;
}

}  // namespace dacl
