#include "bridge/detect/detectors.hpp"

#include <algorithm>
#include <chrono>

#include "bridge/error.hpp"
#include "bridge/io.hpp"

namespace bridge::detect {

Detection oracle_detector(const env::WorldState& world, int cell, double flip, std::mt19937_64& rng) {
  if (!(flip >= 0.0 && flip <= 0.5)) throw ConfigError("oracle flip probability must lie in [0, 0.5]");
  bool present = !world.true_cracks_in(cell).empty();
  if (flip > 0.0 && std::bernoulli_distribution(flip)(rng)) present = !present;
  Detection d;
  d.present = present;
  d.confidence = present ? 1.0 : 0.0;
  d.cells = {cell};
  return d;
}

env::Scanner make_scanner(const ScannerOptions& o) {
  switch (o.kind) {
    case env::DetectorKind::Oracle: {
      const double flip = o.oracle_flip;
      if (!(flip >= 0.0 && flip <= 0.5)) throw ConfigError("oracle flip probability must lie in [0, 0.5]");
      return {[flip](const env::WorldState& w, int cell, std::uint64_t seed) {
                std::mt19937_64 rng(seed);
                return oracle_detector(w, cell, flip, rng);
              },
              0.0};
    }
    case env::DetectorKind::Canny: {
      validate(o.canny);
      render::validate(o.render);
      return {[r = o.render, c = o.canny](const env::WorldState& w, int cell, std::uint64_t seed) {
                const auto patch = render::render_patch(w, cell, r, seed);
                return decide_canny(canny(patch.pixels, c), patch.pixels, c, cell);
              },
              kCannyLatencyS};
    }
    case env::DetectorKind::Cnn: {
      if (!o.classifier) throw ConfigError("the cnn detector needs a trained classifier");
      render::validate(o.render);
      if (o.classifier->resolution != o.render.resolution)
        throw ConfigError("classifier resolution does not match the render resolution");
      return {[r = o.render, m = o.classifier](const env::WorldState& w, int cell, std::uint64_t seed) {
                const auto patch = render::render_patch(w, cell, r, seed);
                return infer_classifier(*m, patch.pixels, cell);
              },
              kClassifierLatencyS};
    }
  }
  throw ConfigError("unknown detector kind");
}

PatchDetector canny_patch_detector(const CannyConfig& config) {
  validate(config);
  return {"canny", [config](const LabeledPatch& p) { return decide_canny(canny(p.pixels, config), p.pixels, config); }};
}

PatchDetector classifier_patch_detector(std::shared_ptr<const Classifier> model) {
  if (!model) throw ConfigError("classifier detector needs a model");
  return {"cnn", [model](const LabeledPatch& p) { return infer_classifier(*model, p.pixels); }};
}

PatchDetector oracle_patch_detector(double flip, std::uint64_t seed) {
  if (!(flip >= 0.0 && flip <= 0.5)) throw ConfigError("oracle flip probability must lie in [0, 0.5]");
  auto rng = std::make_shared<std::mt19937_64>(seed);
  return {"oracle", [flip, rng](const LabeledPatch& p) {
            bool present = p.crack();
            if (flip > 0.0 && std::bernoulli_distribution(flip)(*rng)) present = !present;
            Detection d;
            d.present = present;
            d.confidence = present ? 1.0 : 0.0;
            return d;
          }};
}

std::vector<BenchRow> benchmark(const std::vector<PatchDetector>& detectors, const std::vector<LabeledPatch>& corpus,
                                int repetitions) {
  if (repetitions < 1) throw ConfigError("benchmark needs repetitions >= 1");
  if (corpus.empty()) throw ConfigError("benchmark corpus is empty");
  using Clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (const PatchDetector& det : detectors) {
    BenchRow row;
    row.detector = det.name;
    row.patches = corpus.size();
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0, false_total = 0, false_hits = 0;
    for (const LabeledPatch& p : corpus) {  // warm-up pass doubles as the accuracy pass
      const bool said = det.detect(p).present;
      if (p.crack()) (said ? tp : fn)++;
      else (said ? fp : tn)++;
      if (p.label == render::Label::False) {
        ++false_total;
        false_hits += said;
      }
    }
    row.accuracy = double(tp + tn) / double(corpus.size());
    row.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    row.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    row.fpr_false_cracks = false_total ? double(false_hits) / double(false_total) : 0.0;

    std::vector<double> latency(corpus.size(), 0.0);
    for (int rep = 0; rep < repetitions; ++rep)
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        const auto t0 = Clock::now();
        const Detection d = det.detect(corpus[i]);
        const auto t1 = Clock::now();
        // Keep the call observable so it cannot be elided.
        if (d.confidence < -1.0) throw StateError("impossible confidence");
        latency[i] += std::chrono::duration<double, std::milli>(t1 - t0).count();
      }
    for (double& l : latency) l /= repetitions;
    double sum = 0.0;
    for (double l : latency) sum += l;
    row.latency_ms_mean = sum / double(latency.size());
    std::sort(latency.begin(), latency.end());
    row.latency_ms_p95 = latency[std::min(latency.size() - 1, std::size_t(0.95 * double(latency.size())))];
    rows.push_back(row);
  }
  return rows;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = "detector,accuracy,precision,recall,fpr_false_cracks,latency_ms_mean,latency_ms_p95\n";
  for (const auto& r : rows)
    out += r.detector + "," + format_number(r.accuracy) + "," + format_number(r.precision) + "," +
           format_number(r.recall) + "," + format_number(r.fpr_false_cracks) + "," + format_number(r.latency_ms_mean) +
           "," + format_number(r.latency_ms_p95) + "\n";
  return out;
}

}  // namespace bridge::detect
