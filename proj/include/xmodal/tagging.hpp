#pragma once

#include <span>
#include <string>
#include <vector>

#include "xmodal/embedding_store.hpp"
#include "xmodal/matrix.hpp"

namespace xmodal {

/// Target-language tags with their projected embeddings.
class TagVocab {
 public:
  TagVocab(std::vector<std::string> tags, Matrix<float> embeddings);
  /// Uses the table ids as tag strings.
  static TagVocab from_table(const EmbeddingTable& projected);

  std::size_t size() const noexcept { return tags_.size(); }
  std::size_t dim() const noexcept { return embeddings_.cols(); }
  const std::vector<std::string>& tags() const noexcept { return tags_; }
  const Matrix<float>& embeddings() const noexcept { return embeddings_; }
  const std::vector<double>& norms() const noexcept { return norms_; }

 private:
  std::vector<std::string> tags_;
  Matrix<float> embeddings_;
  std::vector<double> norms_;
};

struct TaggingWeights {
  double w1 = 0.65;  // image-tag similarity
  double w2 = 0.35;  // source tag-target tag similarity

  void validate() const;
};

/// score[i] = w1 * cos(image, T_i) + w2 * cos(source, T_i).
std::vector<double> score_targets(std::span<const float> image_emb, std::span<const float> source_tag_emb,
                                  const TagVocab& vocab, const TaggingWeights& weights);

struct SourceTag {
  std::string tag;
  std::vector<float> embedding;  // projected
};

struct TagPair {
  std::string source_tag;
  std::string target_tag;
  double score = 0.0;
  std::size_t rank_considered = 1;  // 1-based position in that source tag's ranking
};

struct TagAssignment {
  std::vector<TagPair> pairs;
};

/// Walks source tags in the given order; each takes its highest-scoring target
/// tag that an earlier source tag has not already taken. Score ties are broken
/// by tag string. Throws Error(VocabExhausted) when there are more source tags
/// than vocabulary entries.
TagAssignment assign_tags(std::span<const float> image_emb, std::span<const SourceTag> source_tags,
                          const TagVocab& vocab, const TaggingWeights& weights);

}  // namespace xmodal
