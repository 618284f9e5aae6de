#include "bridge/detect/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "bridge/error.hpp"
#include "bridge/hash.hpp"
#include "bridge/io.hpp"
#include "bridge/nn/adam.hpp"
#include "bridge/nn/serialize.hpp"

namespace bridge::detect {

namespace {

// Pixels are centred before entering the network.
constexpr double kInputOffset = 0.5;

void check_resolution(const render::Image& patch, int resolution) {
  if (patch.rows() != resolution || patch.cols() != resolution)
    throw ConfigError("patch is " + std::to_string(patch.rows()) + "x" + std::to_string(patch.cols()) +
                      ", classifier expects " + std::to_string(resolution) + "x" + std::to_string(resolution));
}

nn::MatrixX<double> batch_matrix(const std::vector<LabeledPatch>& corpus, const std::vector<std::size_t>& idx,
                                 std::size_t begin, std::size_t end, int resolution) {
  const Eigen::Index features = Eigen::Index(resolution) * resolution;
  nn::MatrixX<double> x(features, Eigen::Index(end - begin));
  for (std::size_t j = begin; j < end; ++j) {
    const auto& img = corpus[idx[j]].pixels;
    x.col(Eigen::Index(j - begin)) =
        Eigen::Map<const nn::VectorX<double>>(img.data(), features).array() - kInputOffset;
  }
  return x;
}

double accuracy(const Classifier& model, const std::vector<LabeledPatch>& corpus,
                const std::vector<std::size_t>& idx, std::size_t begin, std::size_t end) {
  if (begin == end) return 0.0;
  std::size_t correct = 0;
  constexpr std::size_t kChunk = 128;
  for (std::size_t b = begin; b < end; b += kChunk) {
    const std::size_t e = std::min(end, b + kChunk);
    const auto probs = nn::forward(model.spec, model.params, batch_matrix(corpus, idx, b, e, model.resolution));
    for (std::size_t j = b; j < e; ++j)
      correct += (probs(1, Eigen::Index(j - b)) >= 0.5) == corpus[idx[j]].crack();
  }
  return double(correct) / double(end - begin);
}

}  // namespace

void validate(const ClassifierConfig& c) {
  if (c.resolution < 16) throw ConfigError("classifier resolution must be >= 16");
  if (c.epochs < 1) throw ConfigError("classifier training needs epochs >= 1");
  if (c.batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(c.learning_rate >= 0.0) || !std::isfinite(c.learning_rate)) throw ConfigError("learning rate must be >= 0");
  if (!(c.validation_fraction > 0.0 && c.validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in (0, 1)");
}

nn::NetworkSpec classifier_spec(int resolution) {
  const nn::Index side = ((resolution - 2) / 2 - 2) / 2;
  return {{1, resolution, resolution},
          {nn::Conv2D{1, 8, 3, 1}, nn::Activation::ReLU, nn::MaxPool{2}, nn::Conv2D{8, 16, 3, 1},
           nn::Activation::ReLU, nn::MaxPool{2}, nn::Flatten{}, nn::Dense{16 * side * side, 2},
           nn::Activation::Softmax}};
}

std::vector<LabeledPatch> load_corpus(const std::filesystem::path& manifest_or_dir) {
  const auto manifest =
      std::filesystem::is_directory(manifest_or_dir) ? manifest_or_dir / "manifest.csv" : manifest_or_dir;
  const auto dir = manifest.parent_path();
  std::vector<LabeledPatch> corpus;
  for (const auto& row : render::read_manifest(manifest))
    corpus.push_back({render::read_pgm(dir / row.filename), row.label});
  return corpus;
}

std::pair<Classifier, TrainReport> train_classifier(const std::vector<LabeledPatch>& corpus,
                                                    const ClassifierConfig& config) {
  validate(config);
  const std::size_t positives =
      std::size_t(std::count_if(corpus.begin(), corpus.end(), [](const LabeledPatch& p) { return p.crack(); }));
  if (positives == 0 || positives == corpus.size())
    throw ConfigError("classifier corpus must contain both crack and non-crack patches");
  for (const auto& p : corpus) check_resolution(p.pixels, config.resolution);

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 split_rng(derive_seed(config.seed, {1}));
  std::shuffle(order.begin(), order.end(), split_rng);
  const std::size_t n_val =
      std::clamp<std::size_t>(std::size_t(std::lround(double(corpus.size()) * config.validation_fraction)), 1,
                              corpus.size() - 1);
  const std::size_t n_train = corpus.size() - n_val;
  std::vector<std::size_t> train(order.begin(), order.begin() + std::ptrdiff_t(n_train));
  const std::vector<std::size_t> val(order.begin() + std::ptrdiff_t(n_train), order.end());

  Classifier model{classifier_spec(config.resolution), {}, config.resolution};
  model.params = nn::init_params(model.spec, derive_seed(config.seed, {2}));
  nn::AdamState adam = nn::make_adam(model.params, config.learning_rate);
  std::mt19937_64 batch_rng(derive_seed(config.seed, {3}));

  TrainReport report;
  report.train_size = n_train;
  report.validation_size = n_val;
  report.validation_indices = val;
  nn::ForwardCache<double> cache;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), batch_rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n_train; b += std::size_t(config.batch_size)) {
      const std::size_t e = std::min(n_train, b + std::size_t(config.batch_size));
      const auto x = batch_matrix(corpus, train, b, e, config.resolution);
      const auto probs = nn::forward(model.spec, model.params, x, &cache);
      const double n = double(e - b);
      nn::MatrixX<double> upstream = nn::MatrixX<double>::Zero(2, probs.cols());
      for (Eigen::Index j = 0; j < probs.cols(); ++j) {
        const int t = corpus[train[b + std::size_t(j)]].crack() ? 1 : 0;
        const double p = std::max(probs(t, j), 1e-300);
        loss_sum -= std::log(p);
        upstream(t, j) = -1.0 / (p * n);
        correct += (probs(1, j) >= 0.5) == (t == 1);
      }
      const auto grads = nn::backward(model.spec, model.params, cache, upstream, false);
      nn::adam_step(model.params, grads.params, adam);
    }
    report.epochs.push_back({epoch, loss_sum / double(n_train), double(correct) / double(n_train),
                             accuracy(model, corpus, val, 0, val.size())});
  }
  return {std::move(model), std::move(report)};
}

std::pair<Classifier, TrainReport> train_classifier(const std::filesystem::path& manifest,
                                                    const ClassifierConfig& config) {
  return train_classifier(load_corpus(manifest), config);
}

std::string train_report_csv(const TrainReport& report) {
  std::string out = "epoch,train_loss,train_accuracy,validation_accuracy\n";
  for (const auto& e : report.epochs)
    out += std::to_string(e.epoch) + "," + format_number(e.train_loss) + "," + format_number(e.train_accuracy) +
           "," + format_number(e.validation_accuracy) + "\n";
  return out;
}

std::array<double, 2> classifier_probabilities(const Classifier& model, const render::Image& patch) {
  check_resolution(patch, model.resolution);
  const Eigen::Index features = patch.size();
  nn::MatrixX<double> x = (Eigen::Map<const nn::VectorX<double>>(patch.data(), features).array() - kInputOffset).matrix();
  const auto p = nn::forward(model.spec, model.params, x);
  return {p(0, 0), p(1, 0)};
}

Detection infer_classifier(const Classifier& model, const render::Image& patch, int cell) {
  const auto p = classifier_probabilities(model, patch);
  Detection d;
  d.confidence = p[1];
  d.present = p[1] >= 0.5;
  d.cells = {cell};
  return d;
}

void save_classifier(const Classifier& model, const std::filesystem::path& path) {
  nn::save_params(model.spec, model.params, path);
}

Classifier load_classifier(const std::filesystem::path& path, int resolution) {
  Classifier model{classifier_spec(resolution), {}, resolution};
  model.params = nn::load_params(model.spec, path);
  return model;
}

}  // namespace bridge::detect
