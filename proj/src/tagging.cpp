#include "xmodal/tagging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "xmodal/error.hpp"
#include "xmodal/projection.hpp"

namespace xmodal {

namespace {

double norm_of(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  return std::sqrt(sq);
}

double cosine(std::span<const float> a, double a_norm, std::span<const float> b, double b_norm) {
  double dot = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) dot += static_cast<double>(a[j]) * b[j];
  return dot / (std::max(a_norm, kNormEpsilon) * std::max(b_norm, kNormEpsilon));
}

void check_vector(std::span<const float> v, std::size_t dim, const char* what) {
  if (v.size() != dim) {
    throw Error(ErrorCode::ShapeMismatch, std::string(what) + " has width " + std::to_string(v.size()) +
                                              ", vocabulary width is " + std::to_string(dim));
  }
  for (float x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteInput, std::string(what) + " is not finite");
  }
}

}  // namespace

TagVocab::TagVocab(std::vector<std::string> tags, Matrix<float> embeddings)
    : tags_(std::move(tags)), embeddings_(std::move(embeddings)) {
  if (tags_.size() != embeddings_.rows()) {
    throw Error(ErrorCode::ShapeMismatch, "tag count differs from embedding rows");
  }
  std::unordered_set<std::string> seen;
  for (const auto& t : tags_) {
    if (!seen.insert(t).second) throw Error(ErrorCode::DuplicateId, "tag '" + t + "'");
  }
  norms_.resize(tags_.size());
  for (std::size_t i = 0; i < tags_.size(); ++i) norms_[i] = norm_of(embeddings_.row(i));
}

TagVocab TagVocab::from_table(const EmbeddingTable& projected) {
  return TagVocab(projected.ids(), projected.vectors());
}

void TaggingWeights::validate() const {
  if (!(w1 >= 0.0) || !(w2 >= 0.0) || !(w1 + w2 > 0.0)) {
    throw Error(ErrorCode::InvalidConfig, "tagging weights must be non-negative and not both zero");
  }
}

std::vector<double> score_targets(std::span<const float> image_emb, std::span<const float> source_tag_emb,
                                  const TagVocab& vocab, const TaggingWeights& weights) {
  weights.validate();
  check_vector(image_emb, vocab.dim(), "image embedding");
  check_vector(source_tag_emb, vocab.dim(), "source tag embedding");
  const double image_norm = norm_of(image_emb);
  const double source_norm = norm_of(source_tag_emb);
  std::vector<double> scores(vocab.size());
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    auto t = vocab.embeddings().row(i);
    const double n = vocab.norms()[i];
    scores[i] = weights.w1 * cosine(image_emb, image_norm, t, n) + weights.w2 * cosine(source_tag_emb, source_norm, t, n);
  }
  return scores;
}

TagAssignment assign_tags(std::span<const float> image_emb, std::span<const SourceTag> source_tags,
                          const TagVocab& vocab, const TaggingWeights& weights) {
  if (source_tags.size() > vocab.size()) {
    throw Error(ErrorCode::VocabExhausted, std::to_string(source_tags.size()) + " source tags for " +
                                               std::to_string(vocab.size()) + " vocabulary entries");
  }
  TagAssignment out;
  std::vector<bool> taken(vocab.size(), false);
  std::vector<std::size_t> order(vocab.size());
  for (const auto& source : source_tags) {
    const auto scores = score_targets(image_emb, source.embedding, vocab, weights);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return vocab.tags()[a] < vocab.tags()[b];
    });
    for (std::size_t r = 0; r < order.size(); ++r) {
      const auto t = order[r];
      if (taken[t]) continue;
      taken[t] = true;
      out.pairs.push_back({source.tag, vocab.tags()[t], scores[t], r + 1});
      break;
    }
  }
  return out;
}

}  // namespace xmodal
