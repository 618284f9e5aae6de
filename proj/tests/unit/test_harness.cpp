#include <cmath>
#include <filesystem>

#include "bridge/error.hpp"
#include "bridge/harness/harness.hpp"
#include "bridge/io.hpp"
#include "bridge/nn/serialize.hpp"
#include "doctest.h"

using namespace bridge;
using namespace bridge::harness;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("bridge_harness_" + name);
  std::filesystem::remove_all(p);
  return p;
}

ExperimentSpec oracle_spec(PolicyKind policy) {
  ExperimentSpec s = parse_experiment(
      "detector=oracle\nn_cars=0\nmax_steps=80\nn_seeds=2\neval_episodes=3\n"
      "ppo.hidden=8\nppo.rollout_length=64\nppo.minibatch_size=32\nppo.buffer_capacity=64\n"
      "ppo.epochs=1\nppo.max_updates=2\n");
  s.policy = policy;
  return s;
}

}  // namespace

TEST_CASE("experiment config") {
  const ExperimentSpec s = parse_experiment("n_cracks=10\npolicy=random\nn_seeds=3\nepisodes=500\ndetector=oracle\n");
  CHECK(s.scenario.n_cracks == 10);
  CHECK(s.policy == PolicyKind::Random);
  CHECK(s.seeds() == std::vector<std::uint64_t>{1, 2, 3});
  CHECK(s.ppo.total_episodes == 500);
  const ExperimentSpec back = parse_experiment(format_key_values(to_key_values(s)));
  CHECK(to_key_values(back) == to_key_values(s));

  CHECK_THROWS_AS(parse_experiment("bogus=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("detector=cnn\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("n_seeds=0\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("policy=greedy\n"), ConfigError);
  CHECK_THROWS_AS(parse_experiment("episodes=5\nppo.total_episodes=5\n"), ConfigError);
  ExperimentSpec cnn = s;
  cnn.scenario.detector = env::DetectorKind::Cnn;
  cnn.model = "/nonexistent/model.bin";
  CHECK_THROWS_AS(make_scanner(cnn), IoError);
}

TEST_CASE("evaluation metrics") {
  ExperimentSpec spec = oracle_spec(PolicyKind::Random);
  spec.scenario.max_steps = 2000;
  env::Environment e(spec.scenario, make_scanner(spec));
  CHECK_THROWS_AS(evaluate(random_policy(), e, 0, 1), ConfigError);
  std::vector<std::vector<env::TraceRow>> traces;
  const auto rows = evaluate(random_policy(), e, 20, 5, &traces);
  REQUIRE(rows.size() == 20);
  int completed = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    CHECK(r.cracks_detected <= r.total_cracks);
    CHECK(r.sim_seconds > 0.0);
    CHECK(r.pauses == 0);  // no cars, so pause is never legal
    CHECK(r.total_reward == env::episode_return(traces[i]));
    CHECK(int(traces[i].size()) == r.steps);
    // Oracle without flips: full coverage finds every crack.
    if (r.completed) {
      ++completed;
      CHECK(r.cracks_detected == r.total_cracks);
    }
  }
  CHECK(completed > 0);
  CHECK(episodes_csv(evaluate(random_policy(), e, 20, 5)) == episodes_csv(rows));
  CHECK(episodes_csv(evaluate(random_policy(), e, 20, 6)) != episodes_csv(rows));
}

TEST_CASE("summary matches recomputation and CSV round trip") {
  ExperimentSpec spec = oracle_spec(PolicyKind::Random);
  const auto rows = random_baseline(spec.scenario, make_scanner(spec), 30, 2);
  const MetricsSummary s = summarize(rows);
  double mean = 0, sq = 0, t = 0;
  for (const auto& r : rows) {
    mean += double(r.total_reward);
    t += r.sim_seconds;
  }
  mean /= 30;
  for (const auto& r : rows) sq += (double(r.total_reward) - mean) * (double(r.total_reward) - mean);
  CHECK(std::abs(s.reward_mean - mean) < 1e-9);
  CHECK(std::abs(s.reward_std - std::sqrt(sq / 30)) < 1e-9);
  CHECK(std::abs(s.sim_seconds_mean - t / 30) < 1e-9);
  CHECK(episodes_csv(parse_episodes_csv(episodes_csv(rows))) == episodes_csv(rows));
  CHECK_THROWS_AS(summarize({}), ConfigError);
  CHECK_THROWS_AS(parse_episodes_csv("nope\n"), FormatError);
  CHECK_THROWS_AS(parse_episodes_csv(episodes_csv(rows) + "1,2,3\n"), FormatError);
}

TEST_CASE("run_scenario writes reproducible outputs") {
  const auto a = scratch("run_a"), b = scratch("run_b");
  const ExperimentSpec spec = oracle_spec(PolicyKind::Ppo);
  const RunResult r = run_scenario(spec, a);
  run_scenario(spec, b);
  REQUIRE(r.runs.size() == 2);
  CHECK(r.runs[0].log.size() == 2);
  CHECK(r.episodes.size() == 6);
  for (const char* f : {"episodes.csv", "summary.csv", "run_manifest", "seed_1/training_log.csv",
                        "seed_1/training_returns.csv", "seed_1/actor.bin", "seed_1/critic.bin", "seed_2/trace.csv"}) {
    INFO(f);
    REQUIRE(std::filesystem::exists(a / f));
    CHECK(read_file(a / f) == read_file(b / f));
  }
  const auto actor = nn::load_params(r.runs[0].nets.actor_spec, a / "seed_1" / "actor.bin");
  CHECK((actor.layers[0].weight.array() == r.runs[0].nets.actor.layers[0].weight.array()).all());
  CHECK(parse_key_values(read_file(a / "run_manifest")).at("run.seeds") == "1,2");
  // Rerunning overwrites rather than appends.
  run_scenario(spec, a);
  CHECK(read_file(a / "episodes.csv") == read_file(b / "episodes.csv"));
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST_CASE("compare") {
  const auto ref = scratch("cmp_ref"), other = scratch("cmp_other");
  ExperimentSpec spec = oracle_spec(PolicyKind::Random);
  run_scenario(spec, ref);
  spec.scenario.n_cracks = 10;
  run_scenario(spec, other);
  const auto runs = load_runs({ref, other});
  const auto rows = compare(runs, ref.filename().string());
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].relative_time_pct == 100.0);
  CHECK(rows[1].relative_time_pct ==
        doctest::Approx(100.0 * rows[0].summary.sim_seconds_mean / rows[1].summary.sim_seconds_mean));
  CHECK(rows[1].cracks == 10);
  CHECK(compare({runs[0]}, runs[0].name)[0].relative_time_pct == 100.0);
  CHECK_THROWS_AS(compare(runs, "absent"), ConfigError);
  const std::string csv = comparison_csv(rows);
  CHECK(csv.rfind("name,detector,policy", 0) == 0);

  try {
    load_runs({ref, scratch("gone_1"), scratch("gone_2")});
    FAIL("expected IoError");
  } catch (const IoError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("gone_1") != std::string::npos);
    CHECK(msg.find("gone_2") != std::string::npos);
  }
  std::filesystem::remove_all(ref);
  std::filesystem::remove_all(other);
}

TEST_CASE("replay frames") {
  env::ScenarioConfig sc;
  sc.length_m = 300;
  sc.breadth_m = 200;
  std::vector<env::TraceRow> trace(3);
  trace[0] = {1, {1, 0}, env::Action::Right, 0, {}, 0};
  trace[1] = {2, {1, 1}, env::Action::Down, 1, {}, 0};
  trace[2] = {3, {1, 1}, env::Action::Pause, 0, {}, 1};
  trace[2].reward.r_c = 10;
  const std::string text = replay_text(trace, sc);
  CHECK(text.find("step 2  down") != std::string::npos);
  CHECK(text.find("  oU.\n  ...\n") != std::string::npos);
  CHECK(text.find("  oo.\n  .!.\n") != std::string::npos);
  CHECK(text.find("  oo.\n  .U.\n") != std::string::npos);
  const std::string csv = replay_csv(trace, sc);
  CHECK(csv.find("3,1,1,pause,0,3,10,10,1,oo./.U.\n") != std::string::npos);
  trace[1].uav = {5, 0};
  CHECK_THROWS_AS(replay_text(trace, sc), FormatError);
}
