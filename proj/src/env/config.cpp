#include "bridge/env/config.hpp"

#include <cmath>

#include "bridge/error.hpp"

namespace bridge::env {

std::string to_string(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::Canny: return "canny";
    case DetectorKind::Cnn: return "cnn";
    case DetectorKind::Oracle: return "oracle";
  }
  return "?";
}

DetectorKind parse_detector(std::string_view name) {
  if (name == "canny") return DetectorKind::Canny;
  if (name == "cnn") return DetectorKind::Cnn;
  if (name == "oracle") return DetectorKind::Oracle;
  throw ConfigError("unknown detector '" + std::string(name) + "' (expected canny, cnn or oracle)");
}

namespace {

int cells_along(double extent, double cell) { return int(std::lround(extent / cell)); }

bool whole_multiple(double extent, double cell) {
  const double q = extent / cell;
  return q >= 1.0 && std::abs(q - std::round(q)) < 1e-9;
}

}  // namespace

int ScenarioConfig::cols() const { return cells_along(length_m, cell_m); }
int ScenarioConfig::rows() const { return cells_along(breadth_m, cell_m); }

void validate(const ScenarioConfig& c) {
  auto finite_positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!finite_positive(c.cell_m)) throw ConfigError("cell_m must be positive");
  if (!finite_positive(c.length_m) || !whole_multiple(c.length_m, c.cell_m))
    throw ConfigError("length_m must be a positive multiple of cell_m");
  if (!finite_positive(c.breadth_m) || !whole_multiple(c.breadth_m, c.cell_m))
    throw ConfigError("breadth_m must be a positive multiple of cell_m");
  if (c.cells() < 2) throw ConfigError("grid needs at least 2 cells");
  if (!finite_positive(c.uav_height_m)) throw ConfigError("uav_height_m must be positive");
  if (!finite_positive(c.uav_speed_mps)) throw ConfigError("uav_speed_mps must be positive");
  if (c.n_cracks < 0 || c.n_false_cracks < 0 || c.n_cars < 0) throw ConfigError("counts must be non-negative");
  if (c.pause_limit < 1) throw ConfigError("pause_limit must be >= 1");
  if (c.max_steps < 1) throw ConfigError("max_steps must be >= 1");
}

ScenarioConfig take_scenario(KeyValues& kv) {
  ScenarioConfig c;
  auto take = [&kv](const char* key, auto&& apply) {
    if (auto it = kv.find(key); it != kv.end()) {
      apply(key, it->second);
      kv.erase(it);
    }
  };
  auto as_int = [](std::string_view key, const std::string& v) {
    const long long x = parse_int(key, v);
    if (x < -2147483647LL || x > 2147483647LL) throw ConfigError("key '" + std::string(key) + "' out of range");
    return int(x);
  };
  take("length_m", [&](auto k, auto& v) { c.length_m = parse_double(k, v); });
  take("breadth_m", [&](auto k, auto& v) { c.breadth_m = parse_double(k, v); });
  take("cell_m", [&](auto k, auto& v) { c.cell_m = parse_double(k, v); });
  take("uav_height_m", [&](auto k, auto& v) { c.uav_height_m = parse_double(k, v); });
  take("uav_speed_mps", [&](auto k, auto& v) { c.uav_speed_mps = parse_double(k, v); });
  take("n_cracks", [&](auto k, auto& v) { c.n_cracks = as_int(k, v); });
  take("n_false_cracks", [&](auto k, auto& v) { c.n_false_cracks = as_int(k, v); });
  take("n_cars", [&](auto k, auto& v) { c.n_cars = as_int(k, v); });
  take("pause_limit", [&](auto k, auto& v) { c.pause_limit = as_int(k, v); });
  take("max_steps", [&](auto k, auto& v) { c.max_steps = as_int(k, v); });
  take("seed", [&](auto k, auto& v) { c.seed = parse_u64(k, v); });
  take("detector", [&](auto, auto& v) { c.detector = parse_detector(v); });
  take("temporal_penalty_on_pause", [&](auto k, auto& v) { c.temporal_penalty_on_pause = parse_bool(k, v); });
  validate(c);
  return c;
}

ScenarioConfig parse_scenario(std::string_view text) {
  KeyValues kv = parse_key_values(text);
  ScenarioConfig c = take_scenario(kv);
  if (!kv.empty()) throw ConfigError("unknown key '" + kv.begin()->first + "'");
  return c;
}

ScenarioConfig load_scenario(const std::filesystem::path& path) { return parse_scenario(read_file(path)); }

KeyValues to_key_values(const ScenarioConfig& c) {
  return {
      {"length_m", format_number(c.length_m)},
      {"breadth_m", format_number(c.breadth_m)},
      {"cell_m", format_number(c.cell_m)},
      {"uav_height_m", format_number(c.uav_height_m)},
      {"uav_speed_mps", format_number(c.uav_speed_mps)},
      {"n_cracks", std::to_string(c.n_cracks)},
      {"n_false_cracks", std::to_string(c.n_false_cracks)},
      {"n_cars", std::to_string(c.n_cars)},
      {"pause_limit", std::to_string(c.pause_limit)},
      {"max_steps", std::to_string(c.max_steps)},
      {"seed", std::to_string(c.seed)},
      {"detector", to_string(c.detector)},
      {"temporal_penalty_on_pause", c.temporal_penalty_on_pause ? "true" : "false"},
  };
}

}  // namespace bridge::env
