#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "bridge/io.hpp"

namespace bridge::env {

enum class DetectorKind { Canny, Cnn, Oracle };

std::string to_string(DetectorKind kind);
DetectorKind parse_detector(std::string_view name);

/// Deck geometry, traffic and episode limits. x runs along the length
/// (columns), y along the breadth (rows).
struct ScenarioConfig {
  double length_m = 800.0;
  double breadth_m = 600.0;
  double cell_m = 100.0;  // one scan covers one cell
  double uav_height_m = 50.0;
  double uav_speed_mps = 25.0;
  int n_cracks = 5;
  int n_false_cracks = 0;
  int n_cars = 2;
  int pause_limit = 200;
  int max_steps = 500;
  std::uint64_t seed = 1;
  DetectorKind detector = DetectorKind::Canny;
  bool temporal_penalty_on_pause = true;
  /// Subtracted (as r_fp) when the detector fires on a cell holding no true
  /// crack. Not a file key.
  int false_positive_penalty = 0;

  int cols() const;
  int rows() const;
  int cells() const { return cols() * rows(); }
  /// Seconds per step: the time to fly one cell at full speed.
  double tick_s() const { return cell_m / uav_speed_mps; }
};

/// Throws ConfigError on the first violated invariant.
void validate(const ScenarioConfig& config);

/// Consumes the scenario keys from kv (removing them). Remaining keys are left
/// for the caller, which must reject what it does not understand.
ScenarioConfig take_scenario(KeyValues& kv);

/// Strict: any key that is not a scenario key is rejected.
ScenarioConfig parse_scenario(std::string_view text);
ScenarioConfig load_scenario(const std::filesystem::path& path);

KeyValues to_key_values(const ScenarioConfig& config);

}  // namespace bridge::env
