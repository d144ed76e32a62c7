#pragma once

#include <cstdio>
#include <set>
#include <string>

#include "dacl/data.hpp"
#include "dacl/network.hpp"

namespace dacl {

enum class Stage { style, contrastive, task };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::style: return "style";
    case Stage::contrastive: return "contrastive";
    case Stage::task: return "task";
  }
  throw ContractError("unknown stage");
}

inline Stage stage_from_name(const std::string& s) {
  if (s == "style") return Stage::style;
  if (s == "contrastive") return Stage::contrastive;
  if (s == "task") return Stage::task;
  throw ConfigError("unknown stage: " + s);
}

enum class Direction { bidirectional, source_to_target };

inline const char* direction_name(Direction d) {
  return d == Direction::bidirectional ? "bidirectional" : "source_to_target";
}

inline Direction direction_from_name(const std::string& s) {
  if (s == "bidirectional") return Direction::bidirectional;
  if (s == "source_to_target") return Direction::source_to_target;
  throw ConfigError("unknown direction: " + s);
}

// Training configuration, parsed from `key = value` lines. Per-stage numeric
// defaults (steps, batch size, optimizer settings) are filled in by resolve()
// when a key is absent; everything else has fixed defaults. Unknown keys are
// rejected rather than ignored so a typo cannot silently fall back to a
// default.
struct TrainConfig {
  uint64_t seed = 1;
  std::string data_dir;
  std::string out_dir;
  int64_t height = 32, width = 64;
  Stage stage = Stage::style;
  int64_t steps = -1;        // -1: stage default (2000 / 1000 / 2000)
  int64_t batch_size = -1;   // -1: stage default (1 / 16 / 8)
  double learning_rate = -1; // -1: stage default (2e-4 / 1e-3 / 1e-3)
  double adam_beta1 = -1;    // -1: stage default (0.5 / 0.9 / 0.9)
  double adam_beta2 = -1;    // -1: stage default (0.999)
  double lambda_cyc = 10.0;
  double lambda_idt = 5.0;
  double tau = 0.07;
  double momentum_m = 0.99;
  int64_t queue_capacity = 512;
  Task task = Task::depth;
  int64_t num_classes = kNumClasses;
  Direction direction = Direction::bidirectional;
  std::string style_checkpoint;        // stage 2 and DACL stage-3 input
  std::string contrastive_checkpoint;  // DACL stage-3 input; empty = baseline

  void resolve() {
    if (steps < 0) steps = stage == Stage::contrastive ? 1000 : 2000;
    if (batch_size < 0) batch_size = stage == Stage::style ? 1 : (stage == Stage::contrastive ? 16 : 8);
    if (learning_rate < 0) learning_rate = stage == Stage::style ? 2e-4 : 1e-3;
    if (adam_beta1 < 0) adam_beta1 = stage == Stage::style ? 0.5 : 0.9;
    if (adam_beta2 < 0) adam_beta2 = 0.999;

    if (data_dir.empty()) throw ConfigError("data_dir is required");
    if (out_dir.empty()) throw ConfigError("out_dir is required");
    if (height <= 0 || width <= 0 || height % 16 != 0 || width % 16 != 0)
      throw ConfigError("height/width must be positive multiples of 16");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (adam_beta1 < 0 || adam_beta1 >= 1 || adam_beta2 < 0 || adam_beta2 >= 1)
      throw ConfigError("adam betas must lie in [0,1)");
    if (lambda_cyc < 0 || lambda_idt < 0) throw ConfigError("loss weights must be >= 0");
    if (tau <= 0) throw ConfigError("tau must be > 0");
    if (momentum_m < 0 || momentum_m > 1) throw ConfigError("momentum_m must lie in [0,1]");
    if (queue_capacity < 1) throw ConfigError("queue_capacity must be >= 1");
    if (num_classes < 2 || num_classes > 255) throw ConfigError("num_classes must lie in [2,255]");
  }

  /// Canonical serialized form (resolved values, fixed key order). Stored
  /// verbatim in checkpoints; reparsing it reproduces the same config.
  std::string canonical() const {
    auto fnum = [](double v) {
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    std::string s;
    s += "stage = " + std::string(stage_name(stage)) + "\n";
    s += "seed = " + std::to_string(seed) + "\n";
    s += "data_dir = " + data_dir + "\n";
    s += "out_dir = " + out_dir + "\n";
    s += "height = " + std::to_string(height) + "\n";
    s += "width = " + std::to_string(width) + "\n";
    s += "steps = " + std::to_string(steps) + "\n";
    s += "batch_size = " + std::to_string(batch_size) + "\n";
    s += "learning_rate = " + fnum(learning_rate) + "\n";
    s += "adam_beta1 = " + fnum(adam_beta1) + "\n";
    s += "adam_beta2 = " + fnum(adam_beta2) + "\n";
    s += "lambda_cyc = " + fnum(lambda_cyc) + "\n";
    s += "lambda_idt = " + fnum(lambda_idt) + "\n";
    s += "tau = " + fnum(tau) + "\n";
    s += "momentum_m = " + fnum(momentum_m) + "\n";
    s += "queue_capacity = " + std::to_string(queue_capacity) + "\n";
    s += "task = " + std::string(task_name(task)) + "\n";
    s += "num_classes = " + std::to_string(num_classes) + "\n";
    s += "direction = " + std::string(direction_name(direction)) + "\n";
    if (!style_checkpoint.empty()) s += "style_checkpoint = " + style_checkpoint + "\n";
    if (!contrastive_checkpoint.empty())
      s += "contrastive_checkpoint = " + contrastive_checkpoint + "\n";
    return s;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    int64_t r = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

inline double parse_num(const std::string& key, const std::string& v) {
  try {
    size_t used = 0;
    double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

}  // namespace detail

inline TrainConfig parse_config_text(const std::string& text) {
  TrainConfig cfg;
  std::set<std::string> seen;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = detail::trim(text.substr(pos, eol - pos));
    pos = eol + 1;
    if (line.empty() || line[0] == '#') {
      if (pos > text.size()) break;
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value, got '" + line + "'");
    std::string key = detail::trim(line.substr(0, eq));
    std::string val = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("duplicate config key: " + key);

    if (key == "seed") cfg.seed = uint64_t(detail::parse_int(key, val));
    else if (key == "data_dir") cfg.data_dir = val;
    else if (key == "out_dir") cfg.out_dir = val;
    else if (key == "height") cfg.height = detail::parse_int(key, val);
    else if (key == "width") cfg.width = detail::parse_int(key, val);
    else if (key == "stage") cfg.stage = stage_from_name(val);
    else if (key == "steps") cfg.steps = detail::parse_int(key, val);
    else if (key == "batch_size") cfg.batch_size = detail::parse_int(key, val);
    else if (key == "learning_rate") cfg.learning_rate = detail::parse_num(key, val);
    else if (key == "adam_beta1") cfg.adam_beta1 = detail::parse_num(key, val);
    else if (key == "adam_beta2") cfg.adam_beta2 = detail::parse_num(key, val);
    else if (key == "lambda_cyc") cfg.lambda_cyc = detail::parse_num(key, val);
    else if (key == "lambda_idt") cfg.lambda_idt = detail::parse_num(key, val);
    else if (key == "tau") cfg.tau = detail::parse_num(key, val);
    else if (key == "momentum_m") cfg.momentum_m = detail::parse_num(key, val);
    else if (key == "queue_capacity") cfg.queue_capacity = detail::parse_int(key, val);
    else if (key == "task") cfg.task = task_from_name(val);
    else if (key == "num_classes") cfg.num_classes = detail::parse_int(key, val);
    else if (key == "direction") cfg.direction = direction_from_name(val);
    else if (key == "style_checkpoint") cfg.style_checkpoint = val;
    else if (key == "contrastive_checkpoint") cfg.contrastive_checkpoint = val;
    else throw ConfigError("unknown config key: " + key);
    if (pos > text.size()) break;
  }
  cfg.resolve();
  return cfg;
}

inline TrainConfig load_config(const std::string& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("missing config file: " + path);
  return parse_config_text(detail::read_file(path));
}

}  // namespace dacl
