#include "xmodal/synthetic.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "xmodal/error.hpp"

namespace xmodal {

SyntheticData make_synthetic_data(const SyntheticConfig& config) {
  if (config.concepts < 2 || config.text_dim == 0 || config.image_dim == 0 ||
      config.train_captions_per_concept == 0 ||
      !(config.image_coupling >= 0.0 && config.image_coupling <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "synthetic data needs >= 2 concepts and positive dims");
  }
  Rng rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t c = config.concepts;

  // Concept text vectors have unit expected norm.
  const double concept_scale = 1.0 / std::sqrt(static_cast<double>(config.text_dim));
  Matrix<double> concepts(c, config.text_dim);
  for (double& v : concepts.flat()) v = concept_scale * gauss(rng);

  // Image centres are ReLU(mix) where mix blends a fixed random linear read-out
  // of the concept with an independent draw, both with unit variance.
  Matrix<double> readout(config.image_dim, config.text_dim);
  for (double& v : readout.flat()) v = gauss(rng);
  const double coupled = std::sqrt(config.image_coupling);
  const double free = std::sqrt(1.0 - config.image_coupling);
  Matrix<float> image_vectors(c, config.image_dim);
  std::vector<std::string> image_ids;
  for (std::size_t i = 0; i < c; ++i) {
    auto concept_row = concepts.row(i);
    auto dst = image_vectors.row(i);
    for (std::size_t d = 0; d < config.image_dim; ++d) {
      double dot = 0.0;
      for (std::size_t j = 0; j < config.text_dim; ++j) dot += readout(d, j) * concept_row[j];
      const double mix = coupled * dot + free * gauss(rng);
      dst[d] = static_cast<float>(config.image_scale * std::max(0.0, mix));
    }
    image_ids.push_back("img" + std::to_string(i));
  }

  const std::size_t per_concept = config.train_captions_per_concept + 2;
  Matrix<float> text_vectors(c * per_concept, config.text_dim);
  std::vector<std::string> text_ids;
  PairManifest manifest;
  std::size_t row = 0;
  auto add_caption = [&](std::size_t concept_index, std::string id, std::string_view language, Split split) {
    auto dst = text_vectors.row(row++);
    auto src = concepts.row(concept_index);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<float>(src[j] + config.noise_sigma * gauss(rng));
    manifest.records.push_back({id, image_ids[concept_index], std::string(language), split});
    text_ids.push_back(std::move(id));
  };
  for (std::size_t i = 0; i < c; ++i) {
    const std::string stem = "c" + std::to_string(i);
    for (std::size_t k = 0; k < config.train_captions_per_concept; ++k) {
      add_caption(i, stem + "_A_train" + std::to_string(k), kSyntheticLanguageA, Split::train);
    }
    add_caption(i, stem + "_A_test", kSyntheticLanguageA, Split::test);
    add_caption(i, stem + "_B_test", kSyntheticLanguageB, Split::test);
  }
  return {EmbeddingTable(std::move(text_ids), std::move(text_vectors), Modality::text),
          EmbeddingTable(std::move(image_ids), std::move(image_vectors), Modality::image), std::move(manifest)};
}

TrainConfig synthetic_train_config(const SyntheticConfig& data, LossKind loss, std::uint64_t seed) {
  TrainConfig config;
  config.loss = loss;
  config.seed = seed;
  config.projection.seed = seed;
  config.projection.input_dim = data.text_dim;
  config.projection.layer_dims = {4 * data.image_dim, 4 * data.image_dim, data.image_dim};
  // The hinge margin must sit on the scale of squared distances between image
  // vectors. For independent rectified unit normals E|x - y|^2 = 1 - 1/pi per
  // coordinate.
  config.patr.eta = (1.0 - 1.0 / M_PI) * static_cast<double>(data.image_dim) * data.image_scale * data.image_scale;
  return config;
}

double text_dispersion(const Matrix<float>& projected, std::span<const std::string> concept_labels) {
  if (projected.rows() != concept_labels.size()) {
    throw Error(ErrorCode::ShapeMismatch, "one concept label per projected row is required");
  }
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < concept_labels.size(); ++i) groups[concept_labels[i]].push_back(i);
  if (groups.size() < 2) throw Error(ErrorCode::InvalidConfig, "dispersion needs at least two concepts");

  const std::size_t dim = projected.cols();
  Matrix<double> centroids(groups.size(), dim);
  double intra = 0.0;
  std::size_t g = 0;
  for (const auto& [label, rows] : groups) {
    auto c = centroids.row(g++);
    for (auto r : rows) {
      auto v = projected.row(r);
      for (std::size_t j = 0; j < dim; ++j) c[j] += v[j];
    }
    for (double& x : c) x /= static_cast<double>(rows.size());
    double group_sq = 0.0;
    for (auto r : rows) {
      auto v = projected.row(r);
      for (std::size_t j = 0; j < dim; ++j) group_sq += (v[j] - c[j]) * (v[j] - c[j]);
    }
    intra += group_sq / static_cast<double>(rows.size());
  }
  intra /= static_cast<double>(groups.size());

  double inter = 0.0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < centroids.rows(); ++a) {
    for (std::size_t b = a + 1; b < centroids.rows(); ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) {
        const double d = centroids(a, j) - centroids(b, j);
        sq += d * d;
      }
      inter += sq;
      ++pairs;
    }
  }
  inter /= static_cast<double>(pairs);
  return inter > 0.0 ? intra / inter : std::numeric_limits<double>::infinity();
}

BenchResult run_synthetic_benchmark(const SyntheticData& data, const TrainConfig& config, std::size_t k,
                                    Metric metric, const TrainLogger& log) {
  const auto started = std::chrono::steady_clock::now();
  const auto train_set = assemble_dataset(data.manifest, data.texts, data.images, Split::train,
                                          std::string(kSyntheticLanguageA));
  auto trained = train(train_set, config, log);

  BenchResult result;
  result.loss = config.loss;
  result.history = std::move(trained.history);
  const auto test_set = assemble_dataset(data.manifest, data.texts, data.images, Split::test);
  const auto report = evaluate(trained.params, test_set, data.images, k, metric);
  for (const auto& row : report.rows) {
    if (row.language == kSyntheticLanguageA) result.recall_heldout_a = row.recall;
    if (row.language == kSyntheticLanguageB) result.recall_unseen_b = row.recall;
  }

  std::vector<std::size_t> rows;
  std::vector<std::string> labels;
  for (const auto& rec : data.manifest.records) {
    rows.push_back(*data.texts.find(rec.caption_id));
    labels.push_back(rec.image_id);
  }
  const auto projected = project(trained.params, gather_rows(data.texts.vectors(), rows));
  result.dispersion = text_dispersion(projected, labels);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return result;
}

}  // namespace xmodal
