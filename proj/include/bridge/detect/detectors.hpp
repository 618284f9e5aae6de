#pragma once

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "bridge/detect/canny.hpp"
#include "bridge/detect/classifier.hpp"
#include "bridge/env/world.hpp"

namespace bridge::detect {

/// Ground truth for the cell (any true crack present), flipped with the given
/// probability. Throws ConfigError unless flip is in [0, 0.5].
Detection oracle_detector(const env::WorldState& world, int cell, double flip, std::mt19937_64& rng);

/// Nominal per-scan latencies used for simulated mission time. Measured
/// latencies are hardware dependent and would break run-to-run determinism.
inline constexpr double kCannyLatencyS = 0.022;
inline constexpr double kClassifierLatencyS = 0.060;

struct ScannerOptions {
  env::DetectorKind kind = env::DetectorKind::Canny;
  render::RenderConfig render;
  CannyConfig canny;
  std::shared_ptr<const Classifier> classifier;  // required for Cnn
  double oracle_flip = 0.0;
};

/// Renders the scanned cell and runs the chosen detector on it (the oracle
/// skips rendering). Throws ConfigError when Cnn has no classifier.
env::Scanner make_scanner(const ScannerOptions& options);

/// A detector as the benchmark sees it: a labelled patch in, a verdict out.
struct PatchDetector {
  std::string name;
  std::function<Detection(const LabeledPatch&)> detect;
};

PatchDetector canny_patch_detector(const CannyConfig& config);
PatchDetector classifier_patch_detector(std::shared_ptr<const Classifier> model);
/// Reads the label (flip 0 is exact).
PatchDetector oracle_patch_detector(double flip, std::uint64_t seed);

struct BenchRow {
  std::string detector;
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fpr_false_cracks = 0.0;  // share of false-crack patches called cracks
  double latency_ms_mean = 0.0;
  double latency_ms_p95 = 0.0;
  std::size_t patches = 0;
};

/// Accuracy over the corpus; latency per patch averaged over `repetitions`
/// timed passes after one untimed warm-up pass.
std::vector<BenchRow> benchmark(const std::vector<PatchDetector>& detectors, const std::vector<LabeledPatch>& corpus,
                                int repetitions = 1);

/// detector,accuracy,precision,recall,fpr_false_cracks,latency_ms_mean,latency_ms_p95
std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace bridge::detect
