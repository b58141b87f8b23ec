#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xmodal/embedding_store.hpp"
#include "xmodal/projection.hpp"

namespace xmodal {

enum class Metric { cosine, square_distance };

std::string_view to_string(Metric m);
std::optional<Metric> parse_metric(std::string_view s);

/// Exhaustive index over image embeddings with cached row norms.
class RetrievalIndex {
 public:
  /// Requires an image table. An empty table yields an empty index.
  static RetrievalIndex build(const EmbeddingTable& images);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  bool empty() const noexcept { return ids_.empty(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix<float>& vectors() const noexcept { return vectors_; }
  const std::vector<double>& norms() const noexcept { return norms_; }
  bool contains(const std::string& id) const;

 private:
  std::vector<std::string> ids_;
  Matrix<float> vectors_;
  std::vector<double> norms_;
  std::vector<std::size_t> lexicographic_rank_;  // position of each id in sorted id order
  friend struct RankAccess;
};

struct RankedEntry {
  std::string image_id;
  double score = 0.0;
};

/// Entries in descending score order; equal scores are ordered by id.
/// Square distance is reported as its negation so larger is always better.
struct RankedList {
  std::vector<RankedEntry> entries;
  Metric metric = Metric::cosine;
};

/// Similarity of `query` to one index row under `metric`.
double similarity(std::span<const float> query, double query_norm, std::span<const float> row, double row_norm,
                  Metric metric);

/// Full ranking of the index against `query`. Entries scoring below
/// `threshold` are then dropped and the rest truncated to `top_k`.
RankedList rank(std::span<const float> query, const RetrievalIndex& index, Metric metric = Metric::cosine,
                std::optional<std::size_t> top_k = std::nullopt, std::optional<double> threshold = std::nullopt);

/// Fraction of queries whose ground-truth id is among the first k entries.
double recall_at_k(std::span<const RankedList> rankings, std::span<const std::string> ground_truth,
                   std::size_t k);

struct RecallRow {
  std::string language;
  std::size_t k = 0;
  double recall = 0.0;
  std::size_t n_queries = 0;
};

struct RecallReport {
  Metric metric = Metric::cosine;
  std::vector<RecallRow> rows;  // sorted by language code
};

/// Projects every caption of `dataset` (eval mode), ranks it against an
/// index over all of `images`, and reports recall@k per language.
RecallReport evaluate(const ProjectionParams<float>& params, const PairedDataset& dataset,
                      const EmbeddingTable& images, std::size_t k, Metric metric = Metric::cosine);

/// "# metric=<m>" line, then TSV columns language, k, recall, n_queries.
void write_recall_report(std::ostream& out, const RecallReport& report);

}  // namespace xmodal
