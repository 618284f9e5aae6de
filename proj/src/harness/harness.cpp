#include "bridge/harness/harness.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "bridge/detect/classifier.hpp"
#include "bridge/error.hpp"
#include "bridge/hash.hpp"
#include "bridge/io.hpp"
#include "bridge/nn/serialize.hpp"

namespace bridge::harness {

namespace {

// Evaluation episodes draw layouts from a stream disjoint from training.
constexpr std::uint64_t kEvalStream = 0xe7;

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) return out;
    start = pos + 1;
  }
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

std::string to_string(PolicyKind kind) { return kind == PolicyKind::Ppo ? "ppo" : "random"; }

PolicyKind parse_policy(std::string_view name) {
  if (name == "ppo") return PolicyKind::Ppo;
  if (name == "random") return PolicyKind::Random;
  throw ConfigError("unknown policy '" + std::string(name) + "' (expected ppo or random)");
}

std::vector<std::uint64_t> ExperimentSpec::seeds() const {
  std::vector<std::uint64_t> s;
  for (int i = 0; i < n_seeds; ++i) s.push_back(scenario.seed + std::uint64_t(i));
  return s;
}

void validate(const ExperimentSpec& spec) {
  env::validate(spec.scenario);
  ppo::validate(spec.ppo);
  if (spec.n_seeds < 1) throw ConfigError("n_seeds must be >= 1");
  if (spec.eval_episodes < 1) throw ConfigError("eval_episodes must be >= 1");
  if (!(spec.oracle_flip >= 0.0 && spec.oracle_flip <= 0.5)) throw ConfigError("oracle_flip must lie in [0, 0.5]");
  if (spec.scenario.detector == env::DetectorKind::Cnn && spec.model.empty())
    throw ConfigError("detector cnn needs a trained model (model=<path>)");
}

ExperimentSpec parse_experiment(std::string_view text) {
  KeyValues kv = parse_key_values(text);
  ExperimentSpec spec;
  spec.scenario = env::take_scenario(kv);
  if (kv.count("episodes") && kv.count("ppo.total_episodes"))
    throw ConfigError("give the episode budget once: 'episodes' or 'ppo.total_episodes'");
  if (auto it = kv.find("episodes"); it != kv.end()) {
    kv["ppo.total_episodes"] = it->second;
    kv.erase("episodes");
  }
  spec.ppo = ppo::take_ppo(kv);
  auto take = [&kv](const char* key, auto&& apply) {
    if (auto it = kv.find(key); it != kv.end()) {
      apply(key, it->second);
      kv.erase(it);
    }
  };
  take("policy", [&](auto, auto& v) { spec.policy = parse_policy(v); });
  take("n_seeds", [&](auto k, auto& v) { spec.n_seeds = int(parse_int(k, v)); });
  take("eval_episodes", [&](auto k, auto& v) { spec.eval_episodes = int(parse_int(k, v)); });
  take("eval_deterministic", [&](auto k, auto& v) { spec.eval_deterministic = parse_bool(k, v); });
  take("model", [&](auto, auto& v) { spec.model = v; });
  take("oracle_flip", [&](auto k, auto& v) { spec.oracle_flip = parse_double(k, v); });
  if (!kv.empty()) throw ConfigError("unknown key '" + kv.begin()->first + "'");
  spec.ppo.seed = spec.scenario.seed;
  validate(spec);
  return spec;
}

ExperimentSpec load_experiment(const std::filesystem::path& path) { return parse_experiment(read_file(path)); }

KeyValues to_key_values(const ExperimentSpec& spec) {
  KeyValues kv = env::to_key_values(spec.scenario);
  for (auto& [k, v] : ppo::to_key_values(spec.ppo))
    if (k != "ppo.total_episodes") kv[k] = v;
  kv["episodes"] = std::to_string(spec.ppo.total_episodes);
  kv["policy"] = to_string(spec.policy);
  kv["n_seeds"] = std::to_string(spec.n_seeds);
  kv["eval_episodes"] = std::to_string(spec.eval_episodes);
  kv["eval_deterministic"] = spec.eval_deterministic ? "true" : "false";
  kv["oracle_flip"] = format_number(spec.oracle_flip);
  if (!spec.model.empty()) kv["model"] = spec.model.string();
  return kv;
}

env::Scanner make_scanner(const ExperimentSpec& spec) {
  detect::ScannerOptions so;
  so.kind = spec.scenario.detector;
  so.oracle_flip = spec.oracle_flip;
  if (so.kind == env::DetectorKind::Cnn) {
    if (spec.model.empty()) throw ConfigError("detector cnn needs a trained model (model=<path>)");
    so.classifier = std::make_shared<const detect::Classifier>(detect::load_classifier(spec.model));
  }
  return detect::make_scanner(so);
}

Policy random_policy() {
  return [](const env::Environment& e, std::mt19937_64& rng) {
    const auto mask = e.mask();
    int legal[env::kActionCount];
    int n = 0;
    for (int a = 0; a < env::kActionCount; ++a)
      if (mask[std::size_t(a)]) legal[n++] = a;
    return legal[std::uniform_int_distribution<int>(0, n - 1)(rng)];
  };
}

Policy ppo_policy(const ppo::Networks& nets, bool deterministic) {
  return [&nets, deterministic](const env::Environment& e, std::mt19937_64& rng) {
    return ppo::act(nets, e.observe(), e.mask(), deterministic, rng);
  };
}

std::vector<EpisodeMetrics> evaluate(const Policy& policy, env::Environment& e, int n_episodes, std::uint64_t seed,
                                     std::vector<std::vector<env::TraceRow>>* traces) {
  if (n_episodes < 1) throw ConfigError("evaluation needs at least one episode");
  std::mt19937_64 rng(derive_seed(seed, {kEvalStream, 0xac}));
  std::vector<EpisodeMetrics> rows;
  for (int k = 0; k < n_episodes; ++k) {
    e.reset(derive_seed(seed, {kEvalStream, std::uint64_t(k)}));
    EpisodeMetrics m;
    m.seed = seed;
    m.episode = k;
    m.total_cracks = e.world().true_crack_count();
    std::vector<env::TraceRow> trace;
    while (!e.state().done) {
      const auto a = env::Action(policy(e, rng));
      const env::StepOutcome out = e.step(a);
      m.total_reward += out.reward.total();
      if (traces)
        trace.push_back({out.state.step, out.state.uav, a, out.state.traffic, out.reward, out.state.detected_count});
    }
    const env::EnvState& s = e.state();
    m.steps = s.step;
    m.completed = s.visited_count == e.config().cells();
    m.sim_seconds = s.sim_seconds;
    m.cracks_detected = s.detected_count;
    m.false_positives = s.false_positives;
    m.pauses = s.pauses;
    m.revisits = s.revisits;
    rows.push_back(m);
    if (traces) traces->push_back(std::move(trace));
  }
  return rows;
}

std::vector<EpisodeMetrics> evaluate(const ppo::Networks& nets, env::Environment& e, int n_episodes,
                                     bool deterministic, std::uint64_t seed) {
  return evaluate(ppo_policy(nets, deterministic), e, n_episodes, seed);
}

std::vector<EpisodeMetrics> random_baseline(const env::ScenarioConfig& scenario, const env::Scanner& scanner,
                                            int n_episodes, std::uint64_t seed) {
  env::Environment e(scenario, scanner);
  return evaluate(random_policy(), e, n_episodes, seed);
}

MetricsSummary summarize(const std::vector<EpisodeMetrics>& rows) {
  if (rows.empty()) throw ConfigError("cannot summarise zero episodes");
  MetricsSummary s;
  s.episodes = rows.size();
  const double n = double(rows.size());
  for (const auto& r : rows) {
    s.reward_mean += double(r.total_reward);
    s.steps_mean += r.steps;
    s.completion_rate += r.completed ? 1.0 : 0.0;
    s.sim_seconds_mean += r.sim_seconds;
    s.cracks_detected_mean += r.cracks_detected;
    s.total_cracks_mean += r.total_cracks;
    s.false_positives_mean += r.false_positives;
    s.pauses_mean += r.pauses;
    s.revisits_mean += r.revisits;
  }
  for (double* v : {&s.reward_mean, &s.steps_mean, &s.completion_rate, &s.sim_seconds_mean, &s.cracks_detected_mean,
                    &s.total_cracks_mean, &s.false_positives_mean, &s.pauses_mean, &s.revisits_mean})
    *v /= n;
  for (const auto& r : rows) {
    s.reward_std += (double(r.total_reward) - s.reward_mean) * (double(r.total_reward) - s.reward_mean);
    s.sim_seconds_std += (r.sim_seconds - s.sim_seconds_mean) * (r.sim_seconds - s.sim_seconds_mean);
  }
  s.reward_std = std::sqrt(s.reward_std / n);
  s.sim_seconds_std = std::sqrt(s.sim_seconds_std / n);
  return s;
}

std::string episodes_csv(const std::vector<EpisodeMetrics>& rows) {
  std::string out =
      "seed,episode,total_reward,steps,completed,sim_seconds,cracks_detected,total_cracks,false_positives,pauses,"
      "revisits\n";
  for (const auto& r : rows)
    out += std::to_string(r.seed) + "," + std::to_string(r.episode) + "," + std::to_string(r.total_reward) + "," +
           std::to_string(r.steps) + "," + (r.completed ? "1" : "0") + "," + format_number(r.sim_seconds) + "," +
           std::to_string(r.cracks_detected) + "," + std::to_string(r.total_cracks) + "," +
           std::to_string(r.false_positives) + "," + std::to_string(r.pauses) + "," + std::to_string(r.revisits) +
           "\n";
  return out;
}

std::vector<EpisodeMetrics> parse_episodes_csv(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line) || line.rfind("seed,episode,total_reward", 0) != 0)
    throw FormatError("episodes CSV lacks header");
  std::vector<EpisodeMetrics> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split(line, ',');
    if (f.size() != 11) throw FormatError("episodes CSV line " + std::to_string(line_no) + ": expected 11 fields");
    try {
      EpisodeMetrics m;
      m.seed = parse_u64("seed", f[0]);
      m.episode = int(parse_int("episode", f[1]));
      m.total_reward = parse_int("total_reward", f[2]);
      m.steps = int(parse_int("steps", f[3]));
      m.completed = parse_bool("completed", f[4]);
      m.sim_seconds = parse_double("sim_seconds", f[5]);
      m.cracks_detected = int(parse_int("cracks_detected", f[6]));
      m.total_cracks = int(parse_int("total_cracks", f[7]));
      m.false_positives = int(parse_int("false_positives", f[8]));
      m.pauses = int(parse_int("pauses", f[9]));
      m.revisits = int(parse_int("revisits", f[10]));
      rows.push_back(m);
    } catch (const ConfigError& e) {
      throw FormatError("episodes CSV line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return rows;
}

std::string summary_csv(const MetricsSummary& s) {
  return "episodes,reward_mean,reward_std,steps_mean,completion_rate,sim_seconds_mean,sim_seconds_std,"
         "cracks_detected_mean,total_cracks_mean,false_positives_mean,pauses_mean,revisits_mean\n" +
         std::to_string(s.episodes) + "," + format_number(s.reward_mean) + "," + format_number(s.reward_std) + "," +
         format_number(s.steps_mean) + "," + format_number(s.completion_rate) + "," +
         format_number(s.sim_seconds_mean) + "," + format_number(s.sim_seconds_std) + "," +
         format_number(s.cracks_detected_mean) + "," + format_number(s.total_cracks_mean) + "," +
         format_number(s.false_positives_mean) + "," + format_number(s.pauses_mean) + "," +
         format_number(s.revisits_mean) + "\n";
}

RunResult run_scenario(const ExperimentSpec& spec, const std::filesystem::path& out, const RunOptions& options) {
  validate(spec);
  const env::Scanner scanner = make_scanner(spec);
  auto say = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };
  RunResult result;
  KeyValues manifest = to_key_values(spec);
  std::string seed_list;
  for (auto s : spec.seeds()) seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
  manifest["run.seeds"] = seed_list;

  for (const std::uint64_t seed : spec.seeds()) {
    SeedRun run;
    run.seed = seed;
    env::Environment eval_env(spec.scenario, scanner);
    std::vector<std::vector<env::TraceRow>> traces;
    std::vector<EpisodeMetrics> episodes;
    if (spec.policy == PolicyKind::Ppo) {
      ppo::PPOConfig pc = spec.ppo;
      pc.seed = seed;
      say("seed " + std::to_string(seed) + ": training");
      ppo::TrainResult tr = ppo::train([&] { return env::Environment(spec.scenario, scanner); }, pc, options.train);
      run.log = std::move(tr.log);
      run.training_returns = std::move(tr.episode_returns);
      run.nets = std::move(tr.nets);
      say("seed " + std::to_string(seed) + ": evaluating");
      episodes = evaluate(ppo_policy(run.nets, spec.eval_deterministic), eval_env, spec.eval_episodes, seed, &traces);
    } else {
      say("seed " + std::to_string(seed) + ": random policy");
      episodes = evaluate(random_policy(), eval_env, spec.eval_episodes, seed, &traces);
    }
    if (!out.empty()) {
      const auto dir = out / seed_dir(seed);
      if (spec.policy == PolicyKind::Ppo) {
        write_file_atomic(dir / "training_log.csv", ppo::training_log_csv(run.log));
        std::string returns = "episode,return\n";
        for (std::size_t i = 0; i < run.training_returns.size(); ++i)
          returns += std::to_string(i) + "," + format_number(run.training_returns[i]) + "\n";
        write_file_atomic(dir / "training_returns.csv", returns);
        nn::save_params(run.nets.actor_spec, run.nets.actor, dir / "actor.bin");
        nn::save_params(run.nets.critic_spec, run.nets.critic, dir / "critic.bin");
      }
      write_file_atomic(dir / "trace.csv", env::trace_csv(traces.front()));
    }
    result.episodes.insert(result.episodes.end(), episodes.begin(), episodes.end());
    result.runs.push_back(std::move(run));
  }
  if (!out.empty()) {
    write_file_atomic(out / "episodes.csv", episodes_csv(result.episodes));
    write_file_atomic(out / "summary.csv", summary_csv(summarize(result.episodes)));
    write_file_atomic(out / "run_manifest", format_key_values(manifest));
  }
  return result;
}

std::vector<ComparisonRow> compare(const std::vector<NamedRun>& runs, const std::string& reference) {
  const auto ref = std::find_if(runs.begin(), runs.end(), [&](const NamedRun& r) { return r.name == reference; });
  if (ref == runs.end()) throw ConfigError("reference run '" + reference + "' is not among the compared runs");
  const double ref_time = summarize(ref->episodes).sim_seconds_mean;
  std::vector<ComparisonRow> rows;
  for (const auto& r : runs) {
    ComparisonRow row;
    row.name = r.name;
    row.detector = env::to_string(r.spec.scenario.detector);
    row.policy = to_string(r.spec.policy);
    row.cracks = r.spec.scenario.n_cracks;
    row.false_cracks = r.spec.scenario.n_false_cracks;
    row.cars = r.spec.scenario.n_cars;
    row.summary = summarize(r.episodes);
    if (!(row.summary.sim_seconds_mean > 0.0)) throw ConfigError("run '" + r.name + "' has zero mission time");
    row.relative_time_pct = &r == &*ref ? 100.0 : 100.0 * ref_time / row.summary.sim_seconds_mean;
    rows.push_back(row);
  }
  return rows;
}

std::vector<NamedRun> load_runs(const std::vector<std::filesystem::path>& dirs) {
  std::vector<std::string> missing;
  for (const auto& d : dirs)
    for (const char* f : {"run_manifest", "episodes.csv"})
      if (!std::filesystem::is_regular_file(d / f)) missing.push_back((d / f).string());
  if (!missing.empty()) {
    std::string msg = "missing run outputs:";
    for (const auto& m : missing) msg += " " + m;
    throw IoError(msg);
  }
  std::vector<NamedRun> runs;
  for (const auto& d : dirs) {
    NamedRun r;
    r.name = d.lexically_normal().filename().string();
    if (r.name.empty()) r.name = d.lexically_normal().parent_path().filename().string();
    KeyValues kv = parse_key_values(read_file(d / "run_manifest"));
    for (auto it = kv.begin(); it != kv.end();) it = it->first.rfind("run.", 0) == 0 ? kv.erase(it) : std::next(it);
    r.spec = parse_experiment(format_key_values(kv));
    r.episodes = parse_episodes_csv(read_file(d / "episodes.csv"));
    runs.push_back(std::move(r));
  }
  return runs;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
  // relative_time_pct = 100 * reference mean sim_seconds / run mean sim_seconds
  std::string out =
      "name,detector,policy,cracks,false_cracks,cars,episodes,reward_mean,reward_std,sim_seconds_mean,"
      "sim_seconds_std,relative_time_pct_ref_over_run,cracks_detected_mean,false_positives_mean\n";
  for (const auto& r : rows)
    out += r.name + "," + r.detector + "," + r.policy + "," + std::to_string(r.cracks) + "," +
           std::to_string(r.false_cracks) + "," + std::to_string(r.cars) + "," + std::to_string(r.summary.episodes) +
           "," + format_number(r.summary.reward_mean) + "," + format_number(r.summary.reward_std) + "," +
           format_number(r.summary.sim_seconds_mean) + "," + format_number(r.summary.sim_seconds_std) + "," +
           format_number(r.relative_time_pct) + "," + format_number(r.summary.cracks_detected_mean) + "," +
           format_number(r.summary.false_positives_mean) + "\n";
  return out;
}

namespace {

struct Frame {
  const env::TraceRow* row;
  std::vector<std::string> grid;  // rows top (y = 0) to bottom
  int surveyed;
  long long total;
};

template <typename Emit>
void walk_trace(const std::vector<env::TraceRow>& trace, const env::ScenarioConfig& sc, Emit emit) {
  const int cols = sc.cols(), rows = sc.rows();
  std::vector<std::uint8_t> surveyed(std::size_t(cols * rows), 0);
  surveyed[0] = 1;  // the base cell
  int count = 1;
  long long total = 0;
  for (const auto& r : trace) {
    if (r.uav.x < 0 || r.uav.x >= cols || r.uav.y < 0 || r.uav.y >= rows)
      throw FormatError("trace step " + std::to_string(r.step) + " leaves the " + std::to_string(cols) + "x" +
                        std::to_string(rows) + " grid");
    const std::size_t here = std::size_t(env::cell_index(r.uav, sc));
    if (r.traffic == 0 && !surveyed[here]) {
      surveyed[here] = 1;
      ++count;
    }
    total += r.reward.total();
    Frame f{&r, {}, count, total};
    for (int y = 0; y < rows; ++y) {
      std::string line;
      for (int x = 0; x < cols; ++x) {
        const bool uav = x == r.uav.x && y == r.uav.y;
        line += uav ? (r.traffic ? '!' : 'U') : surveyed[std::size_t(y * cols + x)] ? 'o' : '.';
      }
      f.grid.push_back(line);
    }
    emit(f);
  }
}

}  // namespace

std::string replay_text(const std::vector<env::TraceRow>& trace, const env::ScenarioConfig& scenario) {
  std::string out;
  walk_trace(trace, scenario, [&](const Frame& f) {
    out += "step " + std::to_string(f.row->step) + "  " + env::to_string(f.row->action) + "  reward " +
           std::to_string(f.row->reward.total()) + "  return " + std::to_string(f.total) + "  surveyed " +
           std::to_string(f.surveyed) + "/" + std::to_string(scenario.cells()) + "  cracks " +
           std::to_string(f.row->cracks_detected_cum) + (f.row->traffic ? "  traffic" : "") + "\n";
    for (const auto& line : f.grid) out += "  " + line + "\n";
    out += "\n";
  });
  return out;
}

std::string replay_csv(const std::vector<env::TraceRow>& trace, const env::ScenarioConfig& scenario) {
  std::string out = "step,x,y,action,s_t,surveyed,r_total,return,cracks_detected_cum,grid\n";
  walk_trace(trace, scenario, [&](const Frame& f) {
    std::string grid;
    for (const auto& line : f.grid) grid += (grid.empty() ? "" : "/") + line;
    out += std::to_string(f.row->step) + "," + std::to_string(f.row->uav.x) + "," + std::to_string(f.row->uav.y) +
           "," + env::to_string(f.row->action) + "," + std::to_string(f.row->traffic) + "," +
           std::to_string(f.surveyed) + "," + std::to_string(f.row->reward.total()) + "," +
           std::to_string(f.total) + "," + std::to_string(f.row->cracks_detected_cum) + "," + grid + "\n";
  });
  return out;
}

}  // namespace bridge::harness
