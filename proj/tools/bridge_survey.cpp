// bridge-survey: command-line front end for the simulator, detectors and PPO.
//
// Errors go to stderr as one line, "error: <kind>: <message>", with exit
// status 2 (config), 3 (io), 4 (format), 5 (numeric/state) or 1 (other).

#include <cstdio>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "bridge/detect/classifier.hpp"
#include "bridge/detect/detectors.hpp"
#include "bridge/error.hpp"
#include "bridge/harness/harness.hpp"
#include "bridge/io.hpp"
#include "bridge/nn/serialize.hpp"
#include "bridge/render/patch.hpp"

using namespace bridge;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::string> detector;
};

harness::ExperimentSpec load_spec(const Globals& g) {
  harness::ExperimentSpec spec = g.config.empty() ? harness::parse_experiment("") : harness::load_experiment(g.config);
  if (g.seed) spec.scenario.seed = spec.ppo.seed = *g.seed;
  if (g.detector) spec.scenario.detector = env::parse_detector(*g.detector);
  return spec;
}

fs::path out_dir(const Globals& g, const char* fallback) { return g.out.empty() ? fs::path(fallback) : fs::path(g.out); }

void print_summary(const harness::MetricsSummary& s) {
  std::printf("episodes %zu  reward %.2f +- %.2f  steps %.1f  completed %.0f%%  sim %.1f s  cracks %.2f/%.2f\n",
              s.episodes, s.reward_mean, s.reward_std, s.steps_mean, 100 * s.completion_rate, s.sim_seconds_mean,
              s.cracks_detected_mean, s.total_cracks_mean);
}

int report(const std::exception& e) {
  const char* kind = "error";
  int code = 1;
  if (dynamic_cast<const ConfigError*>(&e)) kind = "config", code = 2;
  else if (dynamic_cast<const IoError*>(&e)) kind = "io", code = 3;
  else if (dynamic_cast<const FormatError*>(&e)) kind = "format", code = 4;
  else if (dynamic_cast<const NumericError*>(&e) || dynamic_cast<const StateError*>(&e) ||
           dynamic_cast<const ShapeError*>(&e))
    kind = "numeric", code = 5;
  std::string msg = e.what();
  for (char& c : msg)
    if (c == '\n') c = ' ';
  std::fprintf(stderr, "error: %s: %s\n", kind, msg.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV bridge-survey simulator: crack detectors, PPO agent and scenario harness"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Scenario/experiment file (key=value)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Base seed");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--detector", g.detector, "canny | cnn | oracle")
      ->check(CLI::IsMember({"canny", "cnn", "oracle"}));

  // train
  auto* train = app.add_subcommand("train", "Train PPO per seed, evaluate, write logs and checkpoints");
  std::optional<int> episodes, max_updates, n_seeds, eval_episodes;
  std::optional<std::string> policy, model;
  bool progress = false, real_wallclock = false;
  train->add_option("--episodes", episodes, "Training episode budget");
  train->add_option("--max-updates", max_updates, "Stop after this many PPO updates");
  train->add_option("--n-seeds", n_seeds, "Independent seeds");
  train->add_option("--eval-episodes", eval_episodes, "Evaluation episodes per seed");
  train->add_option("--policy", policy, "ppo | random")->check(CLI::IsMember({"ppo", "random"}));
  train->add_option("--model", model, "Classifier parameters (cnn detector)");
  train->add_flag("--progress", progress, "Print one line per update to stderr");
  train->add_flag("--real-wallclock", real_wallclock, "Log real seconds instead of mission seconds");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint or the random policy");
  std::string checkpoint;
  int eval_n = 100;
  bool stochastic = false;
  evaluate->add_option("--checkpoint", checkpoint, "Directory holding actor.bin (omit with --policy random)");
  evaluate->add_option("--episodes", eval_n, "Episodes")->check(CLI::PositiveNumber);
  evaluate->add_option("--policy", policy, "ppo | random")->check(CLI::IsMember({"ppo", "random"}));
  evaluate->add_option("--model", model, "Classifier parameters (cnn detector)");
  evaluate->add_flag("--stochastic", stochastic, "Sample actions instead of argmax");

  // bench-detectors
  auto* bench = app.add_subcommand("bench-detectors", "Accuracy and latency of the detectors on a corpus");
  std::string data;
  int repetitions = 3;
  bench->add_option("--data", data, "Corpus directory or manifest")->required();
  bench->add_option("--model", model, "Classifier parameters; adds the cnn row");
  bench->add_option("--repetitions", repetitions, "Timed passes after the warm-up")->check(CLI::PositiveNumber);

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "Render a labelled patch corpus (PGM + manifest.csv)");
  render::DatasetOptions dopt;
  gen->add_option("--n", dopt.n, "Patches");
  gen->add_option("--balance", dopt.balance, "Share of crack patches");
  gen->add_option("--false-fraction", dopt.false_fraction, "Share of non-crack patches showing a false crack");

  // train-classifier
  auto* tcls = app.add_subcommand("train-classifier", "Train the convolutional crack classifier");
  detect::ClassifierConfig ccfg;
  tcls->add_option("--data", data, "Corpus directory or manifest")->required();
  tcls->add_option("--epochs", ccfg.epochs, "Epochs");
  tcls->add_option("--batch-size", ccfg.batch_size, "Minibatch size");
  tcls->add_option("--lr", ccfg.learning_rate, "Adam learning rate");

  // compare
  auto* cmp = app.add_subcommand("compare", "Aggregate finished runs against a reference run");
  std::vector<std::string> runs;
  std::string reference;
  cmp->add_option("--runs", runs, "Run directories")->required();
  cmp->add_option("--reference", reference, "Reference run directory (default: first run)");

  // replay
  auto* replay = app.add_subcommand("replay", "Step-by-step view of an episode trace");
  std::string trace_path, format = "text";
  replay->add_option("--trace", trace_path, "trace.csv")->required()->check(CLI::ExistingFile);
  replay->add_option("--format", format, "text | csv")->check(CLI::IsMember({"text", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "%s", app.help().c_str());
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return e.get_exit_code() ? e.get_exit_code() : 1;
  }

  try {
    if (*train) {
      harness::ExperimentSpec spec = load_spec(g);
      if (episodes) spec.ppo.total_episodes = *episodes;
      if (max_updates) spec.ppo.max_updates = *max_updates;
      if (n_seeds) spec.n_seeds = *n_seeds;
      if (eval_episodes) spec.eval_episodes = *eval_episodes;
      if (policy) spec.policy = harness::parse_policy(*policy);
      if (model) spec.model = *model;
      harness::RunOptions opt;
      opt.train.real_wallclock = real_wallclock;
      if (progress) {
        opt.progress = [](const std::string& m) { std::fprintf(stderr, "%s\n", m.c_str()); };
        opt.train.on_update = [](const ppo::TrainLogRow& r) {
          std::fprintf(stderr, "update %d  episodes %ld  reward %.2f  entropy %.3f\n", r.update, r.episodes,
                       r.mean_ep_reward, r.entropy);
        };
      }
      const fs::path out = out_dir(g, "run");
      const auto result = harness::run_scenario(spec, out, opt);
      print_summary(harness::summarize(result.episodes));
      std::printf("wrote %s\n", out.string().c_str());
    } else if (*evaluate) {
      harness::ExperimentSpec spec = load_spec(g);
      if (model) spec.model = *model;
      if (policy) spec.policy = harness::parse_policy(*policy);
      else if (checkpoint.empty()) throw ConfigError("evaluate needs --checkpoint <dir> or --policy random");
      const env::Scanner scanner = harness::make_scanner(spec);
      env::Environment e(spec.scenario, scanner);
      std::vector<std::vector<env::TraceRow>> traces;
      std::vector<harness::EpisodeMetrics> rows;
      if (spec.policy == harness::PolicyKind::Random) {
        rows = harness::evaluate(harness::random_policy(), e, eval_n, spec.scenario.seed, &traces);
      } else {
        if (checkpoint.empty()) throw ConfigError("policy ppo needs --checkpoint <dir>");
        ppo::Networks nets = ppo::build_networks(spec.ppo);
        nets.actor = nn::load_params(nets.actor_spec, fs::path(checkpoint) / "actor.bin");
        nets.critic = nn::load_params(nets.critic_spec, fs::path(checkpoint) / "critic.bin");
        rows = harness::evaluate(harness::ppo_policy(nets, !stochastic), e, eval_n, spec.scenario.seed, &traces);
      }
      const fs::path out = out_dir(g, "eval");
      write_file_atomic(out / "episodes.csv", harness::episodes_csv(rows));
      write_file_atomic(out / "summary.csv", harness::summary_csv(harness::summarize(rows)));
      write_file_atomic(out / "trace.csv", env::trace_csv(traces.front()));
      KeyValues manifest = harness::to_key_values(spec);
      manifest["eval_episodes"] = std::to_string(eval_n);
      manifest["eval_deterministic"] = stochastic ? "false" : "true";
      manifest["run.seeds"] = std::to_string(spec.scenario.seed);
      if (!checkpoint.empty()) manifest["run.checkpoint"] = checkpoint;
      write_file_atomic(out / "run_manifest", format_key_values(manifest));
      print_summary(harness::summarize(rows));
      std::printf("wrote %s\n", out.string().c_str());
    } else if (*bench) {
      const auto corpus = detect::load_corpus(data);
      std::vector<detect::PatchDetector> detectors = {detect::canny_patch_detector({})};
      if (model)
        detectors.push_back(
            detect::classifier_patch_detector(std::make_shared<const detect::Classifier>(detect::load_classifier(*model))));
      const auto rows = detect::benchmark(detectors, corpus, repetitions);
      const fs::path out = out_dir(g, "bench");
      write_file_atomic(out / "bench.csv", detect::bench_csv(rows));
      for (const auto& r : rows)
        std::printf("%-8s accuracy %.4f  precision %.4f  recall %.4f  fpr(false) %.4f  latency %.3f ms (p95 %.3f)\n",
                    r.detector.c_str(), r.accuracy, r.precision, r.recall, r.fpr_false_cracks, r.latency_ms_mean,
                    r.latency_ms_p95);
      std::printf("wrote %s\n", (out / "bench.csv").string().c_str());
    } else if (*gen) {
      if (g.seed) dopt.seed = *g.seed;
      const fs::path out = out_dir(g, "dataset");
      const auto rows = render::gen_dataset(dopt, {}, out);
      std::printf("wrote %zu patches to %s\n", rows.size(), out.string().c_str());
    } else if (*tcls) {
      if (g.seed) ccfg.seed = *g.seed;
      const fs::path out = out_dir(g, "classifier");
      auto [m, rep] = detect::train_classifier(detect::load_corpus(data), ccfg);
      detect::save_classifier(m, out / "model.bin");
      write_file_atomic(out / "train_report.csv", detect::train_report_csv(rep));
      std::printf("validation accuracy %.4f (%zu train / %zu validation)\nwrote %s\n",
                  rep.epochs.back().validation_accuracy, rep.train_size, rep.validation_size,
                  (out / "model.bin").string().c_str());
    } else if (*cmp) {
      std::vector<fs::path> dirs(runs.begin(), runs.end());
      const auto loaded = harness::load_runs(dirs);
      const std::string ref = reference.empty() ? loaded.front().name
                                                : fs::path(reference).lexically_normal().filename().string();
      const auto rows = harness::compare(loaded, ref);
      const fs::path out = out_dir(g, "compare");
      write_file_atomic(out / "comparison.csv", harness::comparison_csv(rows));
      for (const auto& r : rows)
        std::printf("%-20s %-6s reward %8.2f  time %8.1f s  relative %6.1f%%\n", r.name.c_str(), r.detector.c_str(),
                    r.summary.reward_mean, r.summary.sim_seconds_mean, r.relative_time_pct);
      std::printf("wrote %s\n", (out / "comparison.csv").string().c_str());
    } else if (*replay) {
      const env::ScenarioConfig sc = load_spec(g).scenario;
      const auto trace = env::parse_trace_csv(read_file(trace_path));
      const std::string view = format == "csv" ? harness::replay_csv(trace, sc) : harness::replay_text(trace, sc);
      if (g.out.empty()) {
        std::fwrite(view.data(), 1, view.size(), stdout);
      } else {
        const fs::path file = fs::path(g.out) / (format == "csv" ? "replay.csv" : "replay.txt");
        write_file_atomic(file, view);
        std::printf("wrote %s\n", file.string().c_str());
      }
    }
  } catch (const std::exception& e) {
    return report(e);
  }
  return 0;
}
