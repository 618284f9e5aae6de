#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "bridge/detect/detection.hpp"
#include "bridge/nn/network.hpp"
#include "bridge/render/patch.hpp"

namespace bridge::detect {

struct ClassifierConfig {
  int resolution = 64;
  int epochs = 20;
  int batch_size = 8;
  double learning_rate = 2e-3;
  double validation_fraction = 0.2;
  std::uint64_t seed = 1;
};

void validate(const ClassifierConfig& config);

/// Conv 1->8 k3, ReLU, MaxPool 2, Conv 8->16 k3, ReLU, MaxPool 2, Flatten,
/// Dense -> 2, Softmax. Output row 1 is the crack class.
nn::NetworkSpec classifier_spec(int resolution);

struct Classifier {
  nn::NetworkSpec spec;
  nn::Parameters params;
  int resolution = 64;
};

struct LabeledPatch {
  render::Image pixels;
  render::Label label = render::Label::None;
  bool crack() const { return label == render::Label::Crack; }
};

/// Reads manifest.csv (or the given CSV) and every PGM it lists, relative
/// to the manifest's directory.
std::vector<LabeledPatch> load_corpus(const std::filesystem::path& manifest_or_dir);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double validation_accuracy = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  std::vector<std::size_t> validation_indices;  // into the corpus
};

/// 80/20 split by seeded shuffle, then softmax cross-entropy with Adam over
/// shuffled minibatches. Throws ConfigError on a single-class corpus, zero
/// epochs or a resolution mismatch.
std::pair<Classifier, TrainReport> train_classifier(const std::vector<LabeledPatch>& corpus,
                                                    const ClassifierConfig& config);
std::pair<Classifier, TrainReport> train_classifier(const std::filesystem::path& manifest,
                                                    const ClassifierConfig& config);

/// epoch,train_loss,train_accuracy,validation_accuracy
std::string train_report_csv(const TrainReport& report);

/// [P(no crack), P(crack)].
std::array<double, 2> classifier_probabilities(const Classifier& model, const render::Image& patch);

/// confidence = P(crack); present iff confidence >= 0.5. Throws ConfigError
/// when the patch resolution differs from the model's.
Detection infer_classifier(const Classifier& model, const render::Image& patch, int cell = 0);

void save_classifier(const Classifier& model, const std::filesystem::path& path);
Classifier load_classifier(const std::filesystem::path& path, int resolution = 64);

}  // namespace bridge::detect
