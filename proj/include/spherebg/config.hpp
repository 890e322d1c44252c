#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spherebg/error.hpp"
#include "spherebg/fields.hpp"
#include "spherebg/renderer.hpp"

namespace spherebg {

struct TrainConfig {
  int steps = 20000;
  int batch_rays = 1024;
  double learning_rate = 5e-4;
  double learning_rate_final = 5e-5;  // exponential decay target at the last step
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double lambda_fg_final = 0.25;
  double lambda_bg_final = 1.0;
  int ramp_steps = -1;  // -1: half of `steps`
  double ramp_curvature = 5.0;
  double sphere_radius = 3.0;
  double orbit_radius = 2.0;
  double near = 0.5;
  double far = 3.5;
  int coarse_samples = 48;
  int fine_samples = 48;
  std::uint64_t seed = 0;
  int log_every = 100;
  int eval_every = 0;  // 0: no held-out evaluation during training
  std::vector<int> fg_widths = std::vector<int>(8, 256);
  int fg_position_levels = 10;
  int fg_direction_levels = 4;
  std::string fg_hidden_activation = "relu";
  std::vector<int> bg_widths = {64, 64, 64, 64};
  int bg_levels = 10;
  std::string bg_hidden_activation = "relu";

  int effective_ramp_steps() const { return ramp_steps < 0 ? steps / 2 : ramp_steps; }

  MlpSpec foreground_spec() const {
    MlpSpec s = spherebg::foreground_spec(fg_widths, fg_position_levels, fg_direction_levels, 3);
    s.hidden_activation = activation_from_string(fg_hidden_activation);
    return s;
  }
  MlpSpec background_spec() const {
    MlpSpec s = spherebg::background_spec(3, bg_levels, bg_widths);
    s.hidden_activation = activation_from_string(bg_hidden_activation);
    return s;
  }

  /// Sampling used for training rays (jittered) or evaluation (midpoints).
  SamplingConfig sampling(bool deterministic, std::uint64_t sampling_seed = 0) const {
    SamplingConfig c;
    c.near = near;
    c.far = far;
    c.coarse_count = coarse_samples;
    c.fine_count = fine_samples;
    c.deterministic = deterministic;
    c.seed = sampling_seed;
    return c;
  }

  /// `allow_zero_steps` admits the no-op training run.
  void validate(bool allow_zero_steps = false) const {
    auto check = [](bool ok, const std::string& field, const std::string& what) {
      require(ok, ErrorCode::InvariantViolation, "config field '" + field + "': " + what);
    };
    check(steps >= (allow_zero_steps ? 0 : 1), "steps", "must be >= 1");
    check(batch_rays >= 1, "batch_rays", "must be >= 1");
    check(learning_rate > 0.0 && learning_rate_final > 0.0, "learning_rate", "must be positive");
    check(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1", "must lie in [0, 1)");
    check(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2", "must lie in [0, 1)");
    check(adam_epsilon > 0.0, "adam_epsilon", "must be positive");
    check(lambda_fg_final >= 0.0, "lambda_fg_final", "must be non-negative");
    check(lambda_bg_final >= 0.0, "lambda_bg_final", "must be non-negative");
    check(ramp_steps >= -1, "ramp_steps", "must be >= 0 (or -1 for steps / 2)");
    check(effective_ramp_steps() <= steps, "ramp_steps", "must not exceed steps");
    check(ramp_curvature > 0.0, "ramp_curvature", "must be positive");
    check(sphere_radius > orbit_radius && orbit_radius > 0.0, "sphere_radius", "must exceed orbit_radius > 0");
    check(near > 0.0 && near < far, "near/far", "need 0 < near < far");
    check(near < sphere_radius - orbit_radius, "near", "must be smaller than sphere_radius - orbit_radius");
    check(coarse_samples >= 1, "coarse_samples", "must be >= 1");
    check(fine_samples >= 0, "fine_samples", "must be >= 0");
    check(log_every >= 1, "log_every", "must be >= 1");
    check(eval_every >= 0, "eval_every", "must be >= 0");
    for (const auto* w : {&fg_widths, &bg_widths}) {
      check(!w->empty(), "widths", "need at least one hidden layer");
      for (int x : *w) check(x >= 1, "widths", "must be positive");
    }
    check(fg_position_levels >= 1, "fg_position_levels", "must be >= 1");
    check(fg_direction_levels >= 0, "fg_direction_levels", "must be >= 0");
    check(bg_levels >= 1, "bg_levels", "must be >= 1");
    for (const auto& [field, act] : {std::pair{"fg_hidden_activation", fg_hidden_activation},
                                     std::pair{"bg_hidden_activation", bg_hidden_activation}}) {
      check(act == "relu" || act == "softplus", field, "must be 'relu' or 'softplus'");
    }
  }

  bool operator==(const TrainConfig&) const = default;
};

#define SPHEREBG_CONFIG_FIELDS(X)                                                                          \
  X(steps) X(batch_rays) X(learning_rate) X(learning_rate_final) X(adam_beta1) X(adam_beta2) X(adam_epsilon) \
  X(lambda_fg_final) X(lambda_bg_final) X(ramp_steps) X(ramp_curvature) X(sphere_radius) X(orbit_radius)    \
  X(near) X(far) X(coarse_samples) X(fine_samples) X(seed) X(log_every) X(eval_every) X(fg_widths)           \
  X(fg_position_levels) X(fg_direction_levels) X(fg_hidden_activation) X(bg_widths) X(bg_levels)            \
  X(bg_hidden_activation)

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
#define X(name) j[#name] = c.name;
  SPHEREBG_CONFIG_FIELDS(X)
#undef X
  return j;
}

/// Unknown keys are rejected; absent keys keep their defaults.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::ParseError, "config: top level must be a JSON object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    try {
#define X(name)                                       \
  if (key == #name) {                                 \
    c.name = value.get<decltype(TrainConfig::name)>(); \
    known = true;                                     \
  }
      SPHEREBG_CONFIG_FIELDS(X)
#undef X
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseError, "config field '" + key + "': " + e.what());
    }
    require(known, ErrorCode::ParseError, "config: unknown key '" + key + "'");
  }
  c.validate();
  return c;
}

#undef SPHEREBG_CONFIG_FIELDS

inline TrainConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    // e.byte is the offset of the failing character; report it as a line.
    std::size_t line = 1;
    for (std::size_t i = 0; i < std::min(e.byte, text.size()); ++i) line += text[i] == '\n';
    fail(ErrorCode::ParseError, "config: line " + std::to_string(line) + ": " + e.what());
  }
  return config_from_json(j);
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::IoFailure, "cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

}  // namespace spherebg
