#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bridge/detect/detection.hpp"
#include "bridge/env/config.hpp"
#include "bridge/env/crack.hpp"

namespace bridge::env {

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

inline int cell_index(const Cell& c, const ScenarioConfig& config) { return c.y * config.cols() + c.x; }
inline Cell cell_at(int index, const ScenarioConfig& config) {
  return {index % config.cols(), index / config.cols()};
}

struct CarState {
  int lane = 0;           // cell row the car drives along
  double position = 0.0;  // metres along the length, in [0, length]
  double speed = 10.0;    // m/s, > 0
  int direction = 1;      // +1 or -1
};

/// Hidden ground truth. Only car states change during an episode.
struct WorldState {
  ScenarioConfig config;
  std::uint64_t seed = 0;
  std::vector<CrackSpec> cracks;               // true cracks first, then false ones
  std::vector<std::vector<int>> crack_cells;   // per crack, ascending cell indices
  std::vector<std::vector<int>> cell_cracks;   // per cell, crack ids intersecting it
  std::vector<CarState> cars;

  int true_crack_count() const;
  /// Ids of true (resp. false) cracks intersecting a cell.
  std::vector<int> true_cracks_in(int cell) const;
  std::vector<int> false_cracks_in(int cell) const;
};

enum class Action { Up, Down, Left, Right, Pause };
inline constexpr int kActionCount = 5;
std::string to_string(Action a);

/// Integer reward components; each is either 0 or its defined constant
/// (r_c is +10 per newly detected crack).
struct RewardBreakdown {
  int r_m = 0;   // temporal, -1
  int r_p = 0;   // pause, 0
  int r_v = 0;   // revisit, -1
  int r_c = 0;   // crack, +10 each
  int r_nl = 0;  // new location, +5
  int r_e = 0;   // episode end, +20
  int r_fp = 0;  // configurable false-positive penalty, 0 by default

  int total() const { return r_m + r_p + r_v + r_c + r_nl + r_e + r_fp; }
};

/// Agent-visible state.
struct EnvState {
  Cell uav;
  int traffic = 0;                   // s_t
  std::vector<std::uint8_t> visited;  // per cell
  int visited_count = 0;
  std::vector<std::uint8_t> detected;        // per crack id (true cracks only)
  std::vector<std::uint8_t> detected_cells;  // cells where a true crack was confirmed
  int detected_count = 0;
  int t_pause = 0;
  int step = 0;
  bool done = false;

  // Episode accounting.
  double sim_seconds = 0.0;
  int scans = 0;
  int pauses = 0;
  int revisits = 0;
  int false_positives = 0;
  std::vector<int> false_positive_cells;
};

struct StepInfo {
  std::vector<int> new_cracks;
  bool traffic_blocked = false;  // entered or paused at an unscanned cell under traffic
  bool boundary_clamped = false;
  bool scanned = false;
  bool false_positive = false;
};

struct StepOutcome {
  EnvState state;
  RewardBreakdown reward;
  bool done = false;
  StepInfo info;
};

/// How the UAV judges a scanned cell. scan_seed is unique per (episode, step,
/// cell) so renders differ between visits but replay identically.
struct Scanner {
  std::function<detect::Detection(const WorldState&, int cell, std::uint64_t scan_seed)> scan;
  double latency_s = 0.0;  // added to simulated time per scan
};

/// Places cracks and cars from seeded randomness. True cracks avoid the base
/// cell; false cracks avoid every cell holding a true crack. Throws
/// ConfigError if a crack cannot be placed in 1000 attempts.
std::pair<WorldState, EnvState> reset(const ScenarioConfig& config, std::uint64_t seed);

/// Moves each car speed * tick along its lane, mirroring at the deck ends.
void advance_traffic(WorldState& world);

/// True when a car in the UAV's row is in its cell or a row-adjacent one.
bool traffic_at(const WorldState& world, const Cell& cell);

/// Pause is legal only under traffic and below the pause limit.
std::array<bool, kActionCount> action_mask(const EnvState& state, const ScenarioConfig& config);

/// One MDP transition. Throws StateError on a finished episode or a masked
/// action.
StepOutcome step(WorldState& world, const EnvState& state, Action action, const Scanner& scanner);

inline constexpr int kObservationSize = 23;

/// [x, y normalised; s_t; t_pause / limit; visited fraction; 3x3 visited
/// flags (out of bounds = 1); 3x3 detected-crack flags], row-major
/// neighbourhood from (-1,-1) to (+1,+1).
std::array<double, kObservationSize> observe(const EnvState& state, const ScenarioConfig& config);

struct TraceRow {
  int step = 0;
  Cell uav;
  Action action = Action::Pause;
  int traffic = 0;
  RewardBreakdown reward;
  int cracks_detected_cum = 0;
};

long long episode_return(const std::vector<RewardBreakdown>& trace);
long long episode_return(const std::vector<TraceRow>& trace);

/// step,x,y,action,s_t,r_m,r_p,r_v,r_c,r_nl,r_e,r_total,cracks_detected_cum
std::string trace_csv(const std::vector<TraceRow>& trace);
std::vector<TraceRow> parse_trace_csv(std::string_view text);

/// Convenience wrapper owning one episode at a time.
class Environment {
 public:
  Environment(ScenarioConfig config, Scanner scanner);

  const EnvState& reset(std::uint64_t seed);
  StepOutcome step(Action action);

  const ScenarioConfig& config() const { return config_; }
  const WorldState& world() const { return world_; }
  const EnvState& state() const { return state_; }
  std::array<double, kObservationSize> observe() const { return env::observe(state_, config_); }
  std::array<bool, kActionCount> mask() const { return action_mask(state_, config_); }

 private:
  ScenarioConfig config_;
  Scanner scanner_;
  WorldState world_;
  EnvState state_;
};

}  // namespace bridge::env
