#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "bridge/detect/detectors.hpp"
#include "bridge/env/world.hpp"
#include "bridge/ppo/ppo.hpp"

namespace bridge::harness {

enum class PolicyKind { Ppo, Random };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy(std::string_view name);

/// One experiment: a scenario, how the UAV scans, how it acts, and how many
/// independent seeds to run. Seed i uses scenario.seed + i.
struct ExperimentSpec {
  env::ScenarioConfig scenario;
  PolicyKind policy = PolicyKind::Ppo;
  int n_seeds = 1;
  ppo::PPOConfig ppo;           // ppo.seed is overwritten per run seed
  int eval_episodes = 100;
  bool eval_deterministic = true;
  std::filesystem::path model;  // classifier parameters, required for cnn
  double oracle_flip = 0.0;

  std::vector<std::uint64_t> seeds() const;
};

/// Throws ConfigError.
void validate(const ExperimentSpec& spec);

/// Scenario keys, ppo.* keys and the harness keys policy, n_seeds, episodes
/// (training episode budget), eval_episodes, eval_deterministic, model,
/// oracle_flip. Unknown keys are rejected.
ExperimentSpec parse_experiment(std::string_view text);
ExperimentSpec load_experiment(const std::filesystem::path& path);

/// Every resolved setting, including the run seeds (run_manifest content).
KeyValues to_key_values(const ExperimentSpec& spec);

/// Scanner for spec's detector. Loads the classifier for cnn; a missing
/// model path is a ConfigError.
env::Scanner make_scanner(const ExperimentSpec& spec);

/// Chooses an action for the environment's current state.
using Policy = std::function<int(const env::Environment&, std::mt19937_64&)>;

/// Uniform over the legal actions (Pause masked exactly as for the agent).
Policy random_policy();
Policy ppo_policy(const ppo::Networks& nets, bool deterministic);

struct EpisodeMetrics {
  std::uint64_t seed = 0;
  int episode = 0;
  long long total_reward = 0;
  int steps = 0;
  bool completed = false;  // every cell surveyed before max_steps
  double sim_seconds = 0.0;
  int cracks_detected = 0;
  int total_cracks = 0;
  int false_positives = 0;
  int pauses = 0;
  int revisits = 0;
};

/// Runs n episodes with episode k reset from derive_seed(seed, {k}) on an
/// evaluation stream. When traces is non-null it receives one per episode.
/// n < 1 is a ConfigError.
std::vector<EpisodeMetrics> evaluate(const Policy& policy, env::Environment& env, int n_episodes,
                                     std::uint64_t seed, std::vector<std::vector<env::TraceRow>>* traces = nullptr);
std::vector<EpisodeMetrics> evaluate(const ppo::Networks& nets, env::Environment& env, int n_episodes,
                                     bool deterministic, std::uint64_t seed);

std::vector<EpisodeMetrics> random_baseline(const env::ScenarioConfig& scenario, const env::Scanner& scanner,
                                            int n_episodes, std::uint64_t seed);

struct MetricsSummary {
  std::size_t episodes = 0;
  double reward_mean = 0.0;
  double reward_std = 0.0;  // population standard deviation
  double steps_mean = 0.0;
  double completion_rate = 0.0;
  double sim_seconds_mean = 0.0;
  double sim_seconds_std = 0.0;
  double cracks_detected_mean = 0.0;
  double total_cracks_mean = 0.0;
  double false_positives_mean = 0.0;
  double pauses_mean = 0.0;
  double revisits_mean = 0.0;
};

/// Throws ConfigError on an empty set.
MetricsSummary summarize(const std::vector<EpisodeMetrics>& rows);

/// seed,episode,total_reward,steps,completed,sim_seconds,cracks_detected,total_cracks,false_positives,pauses,revisits
std::string episodes_csv(const std::vector<EpisodeMetrics>& rows);
std::vector<EpisodeMetrics> parse_episodes_csv(std::string_view text);
std::string summary_csv(const MetricsSummary& summary);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<ppo::TrainLogRow> log;     // empty for the random policy
  std::vector<double> training_returns;  // every finished training episode
  ppo::Networks nets;
};

struct RunResult {
  std::vector<SeedRun> runs;
  std::vector<EpisodeMetrics> episodes;  // evaluation, all seeds in order
};

struct RunOptions {
  ppo::TrainOptions train;
  std::function<void(const std::string&)> progress;
};

/// Trains (ppo) and evaluates every seed. When out is non-empty writes
/// run_manifest, episodes.csv, summary.csv, and per seed seed_<s>/ with
/// training_log.csv, training_returns.csv, actor.bin, critic.bin and
/// trace.csv (first evaluation episode).
RunResult run_scenario(const ExperimentSpec& spec, const std::filesystem::path& out = {},
                       const RunOptions& options = {});

/// A finished run as compare() sees it.
struct NamedRun {
  std::string name;
  ExperimentSpec spec;
  std::vector<EpisodeMetrics> episodes;
};

struct ComparisonRow {
  std::string name;
  std::string detector;
  std::string policy;
  int cracks = 0;
  int false_cracks = 0;
  int cars = 0;
  MetricsSummary summary;
  double relative_time_pct = 0.0;  // 100 * reference mean time / this mean time
};

/// Aggregates each run across its seeds. The reference must be among runs
/// (ConfigError otherwise); its relative time is exactly 100.
std::vector<ComparisonRow> compare(const std::vector<NamedRun>& runs, const std::string& reference);

/// Loads run directories written by run_scenario (or `evaluate`). Manifest
/// keys under "run." are bookkeeping and ignored. Every missing manifest or
/// episodes file is listed in one IoError.
std::vector<NamedRun> load_runs(const std::vector<std::filesystem::path>& dirs);

/// Header documents the relative-time convention.
std::string comparison_csv(const std::vector<ComparisonRow>& rows);

/// Step-by-step text frames of a trace on the scenario grid: U = UAV,
/// o = surveyed, . = not yet surveyed, ! = UAV held back by traffic.
std::string replay_text(const std::vector<env::TraceRow>& trace, const env::ScenarioConfig& scenario);
/// One row per step: step,x,y,action,s_t,surveyed,r_total,return,cracks_detected_cum,grid
/// (grid rows joined by '/').
std::string replay_csv(const std::vector<env::TraceRow>& trace, const env::ScenarioConfig& scenario);

}  // namespace bridge::harness
