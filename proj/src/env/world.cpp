#include "bridge/env/world.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bridge/error.hpp"
#include "bridge/hash.hpp"

namespace bridge::env {

namespace {

// Independent random streams so that changing one count (say, false cracks)
// leaves the other draws untouched across scenarios.
constexpr std::uint64_t kTrueCrackStream = 1;
constexpr std::uint64_t kFalseCrackStream = 2;
constexpr std::uint64_t kCarStream = 3;
constexpr std::uint64_t kScanStream = 4;

constexpr int kPlacementAttempts = 1000;

constexpr double kMinCarSpeed = 5.0;
constexpr double kMaxCarSpeed = 20.0;

bool intersects(const std::vector<int>& a, const std::vector<std::uint8_t>& mark) {
  return std::any_of(a.begin(), a.end(), [&](int c) { return mark[std::size_t(c)] != 0; });
}

int car_column(const CarState& car, const ScenarioConfig& c) {
  return std::clamp(int(std::floor(car.position / c.cell_m)), 0, c.cols() - 1);
}

}  // namespace

std::string to_string(Action a) {
  switch (a) {
    case Action::Up: return "up";
    case Action::Down: return "down";
    case Action::Left: return "left";
    case Action::Right: return "right";
    case Action::Pause: return "pause";
  }
  return "?";
}

int WorldState::true_crack_count() const {
  return int(std::count_if(cracks.begin(), cracks.end(), [](const CrackSpec& c) { return !c.is_false; }));
}

std::vector<int> WorldState::true_cracks_in(int cell) const {
  std::vector<int> ids;
  for (int id : cell_cracks[std::size_t(cell)])
    if (!cracks[std::size_t(id)].is_false) ids.push_back(id);
  return ids;
}

std::vector<int> WorldState::false_cracks_in(int cell) const {
  std::vector<int> ids;
  for (int id : cell_cracks[std::size_t(cell)])
    if (cracks[std::size_t(id)].is_false) ids.push_back(id);
  return ids;
}

std::pair<WorldState, EnvState> reset(const ScenarioConfig& config, std::uint64_t seed) {
  validate(config);
  WorldState world;
  world.config = config;
  world.seed = seed;
  const int cells = config.cells();
  world.cell_cracks.assign(std::size_t(cells), {});

  std::vector<std::uint8_t> blocked(std::size_t(cells), 0);
  blocked[0] = 1;  // the UAV starts here without scanning it
  auto place = [&](int count, bool is_false, std::uint64_t stream, bool mark_blocked) {
    std::mt19937_64 rng(derive_seed(seed, {stream}));
    for (int i = 0; i < count; ++i) {
      bool placed = false;
      for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
        CrackSpec crack = generate_crack(std::nullopt, rng, config);
        std::vector<int> cells_hit = crack_cells(crack, config);
        if (intersects(cells_hit, blocked)) continue;
        crack.is_false = is_false;
        const int id = int(world.cracks.size());
        for (int c : cells_hit) world.cell_cracks[std::size_t(c)].push_back(id);
        world.cracks.push_back(std::move(crack));
        world.crack_cells.push_back(std::move(cells_hit));
        placed = true;
      }
      if (!placed)
        throw ConfigError(std::string("could not place ") + (is_false ? "false" : "true") + " crack " +
                          std::to_string(i) + " within " + std::to_string(kPlacementAttempts) + " attempts");
    }
    if (mark_blocked)
      for (const auto& cs : world.crack_cells)
        for (int c : cs) blocked[std::size_t(c)] = 1;
  };
  place(config.n_cracks, false, kTrueCrackStream, true);
  place(config.n_false_cracks, true, kFalseCrackStream, false);

  std::mt19937_64 car_rng(derive_seed(seed, {kCarStream}));
  std::uniform_int_distribution<int> lane(0, config.rows() - 1);
  std::uniform_real_distribution<double> pos(0.0, config.length_m), speed(kMinCarSpeed, kMaxCarSpeed);
  for (int i = 0; i < config.n_cars; ++i) {
    CarState car;
    car.lane = lane(car_rng);
    car.position = pos(car_rng);
    car.speed = speed(car_rng);
    car.direction = (car_rng() & 1) ? 1 : -1;
    world.cars.push_back(car);
  }

  EnvState state;
  state.visited.assign(std::size_t(cells), 0);
  state.visited[0] = 1;
  state.visited_count = 1;
  state.detected.assign(world.cracks.size(), 0);
  state.detected_cells.assign(std::size_t(cells), 0);
  state.traffic = traffic_at(world, state.uav) ? 1 : 0;
  return {std::move(world), std::move(state)};
}

void advance_traffic(WorldState& world) {
  const double length = world.config.length_m;
  const double tick = world.config.tick_s();
  for (CarState& car : world.cars) {
    double p = car.position + car.direction * car.speed * tick;
    while (p < 0.0 || p > length) {
      if (p > length) {
        p = 2.0 * length - p;
        car.direction = -1;
      } else {
        p = -p;
        car.direction = 1;
      }
    }
    car.position = p;
  }
}

bool traffic_at(const WorldState& world, const Cell& cell) {
  return std::any_of(world.cars.begin(), world.cars.end(), [&](const CarState& car) {
    return car.lane == cell.y && std::abs(car_column(car, world.config) - cell.x) <= 1;
  });
}

std::array<bool, kActionCount> action_mask(const EnvState& state, const ScenarioConfig& config) {
  return {true, true, true, true, state.traffic == 1 && state.t_pause < config.pause_limit};
}

StepOutcome step(WorldState& world, const EnvState& state, Action action, const Scanner& scanner) {
  if (state.done) throw StateError("step called on a finished episode");
  const ScenarioConfig& config = world.config;
  const int a = int(action);
  if (a < 0 || a >= kActionCount) throw StateError("invalid action " + std::to_string(a));
  if (!action_mask(state, config)[std::size_t(a)])
    throw StateError("action " + to_string(action) + " is masked (s_t=" + std::to_string(state.traffic) +
                     ", t_pause=" + std::to_string(state.t_pause) + ")");

  StepOutcome out;
  out.state = state;
  EnvState& s = out.state;
  RewardBreakdown& r = out.reward;
  const bool pause = action == Action::Pause;

  r.r_m = (pause && !config.temporal_penalty_on_pause) ? 0 : -1;
  if (pause) {
    r.r_p = 0;
    ++s.t_pause;
    ++s.pauses;
  } else {
    Cell target = s.uav;
    switch (action) {
      case Action::Up: --target.y; break;
      case Action::Down: ++target.y; break;
      case Action::Left: --target.x; break;
      case Action::Right: ++target.x; break;
      case Action::Pause: break;
    }
    const Cell clamped{std::clamp(target.x, 0, config.cols() - 1), std::clamp(target.y, 0, config.rows() - 1)};
    out.info.boundary_clamped = !(clamped == target);
    s.uav = clamped;
    s.t_pause = 0;
  }

  advance_traffic(world);
  s.traffic = traffic_at(world, s.uav) ? 1 : 0;

  const int cell = cell_index(s.uav, config);
  const bool was_visited = s.visited[std::size_t(cell)] != 0;
  if (!pause && was_visited) {
    r.r_v = -1;
    ++s.revisits;
  }
  // Moving always scans the cell entered; pausing only retries a cell whose
  // scan was blocked.
  const bool want_scan = !pause || !was_visited;
  if (want_scan && s.traffic) {
    out.info.traffic_blocked = true;
  } else if (want_scan) {
    const detect::Detection det =
        scanner.scan(world, cell, derive_seed(world.seed, {kScanStream, std::uint64_t(s.step), std::uint64_t(cell)}));
    out.info.scanned = true;
    ++s.scans;
    s.sim_seconds += scanner.latency_s;
    if (!was_visited) {
      s.visited[std::size_t(cell)] = 1;
      ++s.visited_count;
      r.r_nl = 5;
    }
    if (det.present) {
      const std::vector<int> truth = world.true_cracks_in(cell);
      if (truth.empty()) {
        out.info.false_positive = true;
        ++s.false_positives;
        s.false_positive_cells.push_back(cell);
        r.r_fp = -config.false_positive_penalty;
      } else {
        s.detected_cells[std::size_t(cell)] = 1;
        for (int id : truth) {
          if (s.detected[std::size_t(id)]) continue;
          s.detected[std::size_t(id)] = 1;
          ++s.detected_count;
          out.info.new_cracks.push_back(id);
          r.r_c += 10;
        }
      }
    }
  }

  s.sim_seconds += config.tick_s();
  ++s.step;
  if (s.visited_count == config.cells()) {
    r.r_e = 20;
    s.done = true;
  }
  if (s.step >= config.max_steps) s.done = true;
  out.done = s.done;
  return out;
}

std::array<double, kObservationSize> observe(const EnvState& state, const ScenarioConfig& config) {
  std::array<double, kObservationSize> f{};
  const int cols = config.cols(), rows = config.rows();
  f[0] = double(state.uav.x) / std::max(1, cols - 1);
  f[1] = double(state.uav.y) / std::max(1, rows - 1);
  f[2] = state.traffic;
  f[3] = double(state.t_pause) / config.pause_limit;
  f[4] = double(state.visited_count) / config.cells();
  std::size_t k = 5;
  for (int pass = 0; pass < 2; ++pass) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int x = state.uav.x + dx, y = state.uav.y + dy;
        const bool inside = x >= 0 && x < cols && y >= 0 && y < rows;
        if (pass == 0)
          f[k++] = inside ? state.visited[std::size_t(y * cols + x)] : 1.0;
        else
          f[k++] = inside ? state.detected_cells[std::size_t(y * cols + x)] : 0.0;
      }
    }
  }
  return f;
}

long long episode_return(const std::vector<RewardBreakdown>& trace) {
  long long total = 0;
  for (const auto& r : trace) total += r.total();
  return total;
}

long long episode_return(const std::vector<TraceRow>& trace) {
  long long total = 0;
  for (const auto& row : trace) total += row.reward.total();
  return total;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "step,x,y,action,s_t,r_m,r_p,r_v,r_c,r_nl,r_e,r_total,cracks_detected_cum\n";
  for (const auto& t : trace) {
    const auto& r = t.reward;
    os << t.step << ',' << t.uav.x << ',' << t.uav.y << ',' << to_string(t.action) << ',' << t.traffic << ','
       << r.r_m << ',' << r.r_p << ',' << r.r_v << ',' << r.r_c << ',' << r.r_nl << ',' << r.r_e << ','
       << r.total() << ',' << t.cracks_detected_cum << '\n';
  }
  return os.str();
}

std::vector<TraceRow> parse_trace_csv(std::string_view text) {
  std::vector<TraceRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("step,x,y,action", 0) != 0) throw FormatError("trace CSV lacks header");
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 13) throw FormatError("trace CSV line " + std::to_string(line_no) + ": expected 13 fields");
    auto num = [&](std::size_t i) { return int(parse_int("trace", f[i])); };
    TraceRow t;
    t.step = num(0);
    t.uav = {num(1), num(2)};
    const auto& a = f[3];
    if (a == "up") t.action = Action::Up;
    else if (a == "down") t.action = Action::Down;
    else if (a == "left") t.action = Action::Left;
    else if (a == "right") t.action = Action::Right;
    else if (a == "pause") t.action = Action::Pause;
    else throw FormatError("trace CSV line " + std::to_string(line_no) + ": unknown action '" + a + "'");
    t.traffic = num(4);
    t.reward = {num(5), num(6), num(7), num(8), num(9), num(10), 0};
    t.reward.r_fp = num(11) - t.reward.total();
    t.cracks_detected_cum = num(12);
    rows.push_back(t);
  }
  return rows;
}

Environment::Environment(ScenarioConfig config, Scanner scanner)
    : config_(std::move(config)), scanner_(std::move(scanner)) {
  reset(config_.seed);
}

const EnvState& Environment::reset(std::uint64_t seed) {
  std::tie(world_, state_) = env::reset(config_, seed);
  return state_;
}

StepOutcome Environment::step(Action action) {
  StepOutcome out = env::step(world_, state_, action, scanner_);
  state_ = out.state;
  return out;
}

}  // namespace bridge::env
