#include "xmodal/retrieval.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include "xmodal/error.hpp"
#include "xmodal/losses.hpp"

namespace xmodal {

namespace {

double norm_of(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  return std::sqrt(sq);
}

}  // namespace

std::string_view to_string(Metric m) { return m == Metric::cosine ? "cosine" : "sqdist"; }

std::optional<Metric> parse_metric(std::string_view s) {
  if (s == "cosine") return Metric::cosine;
  if (s == "sqdist" || s == "square_distance") return Metric::square_distance;
  return std::nullopt;
}

RetrievalIndex RetrievalIndex::build(const EmbeddingTable& images) {
  if (images.modality() != Modality::image) {
    throw Error(ErrorCode::ModalityMismatch, "retrieval index needs an image table");
  }
  RetrievalIndex idx;
  idx.ids_ = images.ids();
  idx.vectors_ = images.vectors();
  idx.norms_.resize(idx.ids_.size());
  for (std::size_t i = 0; i < idx.ids_.size(); ++i) idx.norms_[i] = norm_of(idx.vectors_.row(i));
  std::vector<std::size_t> order(idx.ids_.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return idx.ids_[a] < idx.ids_[b]; });
  idx.lexicographic_rank_.resize(order.size());
  for (std::size_t r = 0; r < order.size(); ++r) idx.lexicographic_rank_[order[r]] = r;
  return idx;
}

bool RetrievalIndex::contains(const std::string& id) const {
  return std::find(ids_.begin(), ids_.end(), id) != ids_.end();
}

double similarity(std::span<const float> query, double query_norm, std::span<const float> row, double row_norm,
                  Metric metric) {
  if (metric == Metric::square_distance) return -square_distance(query, row);
  double dot = 0.0;
  for (std::size_t j = 0; j < query.size(); ++j) dot += static_cast<double>(query[j]) * row[j];
  return dot / (std::max(query_norm, kNormEpsilon) * std::max(row_norm, kNormEpsilon));
}

struct RankAccess {
  static const std::vector<std::size_t>& lex(const RetrievalIndex& idx) { return idx.lexicographic_rank_; }
};

RankedList rank(std::span<const float> query, const RetrievalIndex& index, Metric metric,
                std::optional<std::size_t> top_k, std::optional<double> threshold) {
  RankedList out;
  out.metric = metric;
  if (index.empty()) return out;
  if (query.size() != index.dim()) {
    throw Error(ErrorCode::ShapeMismatch, "query width " + std::to_string(query.size()) + ", index width " +
                                              std::to_string(index.dim()));
  }
  for (float v : query) {
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteInput, "non-finite query value");
  }
  const double qn = norm_of(query);
  const std::size_t n = index.size();
  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    scores[i] = similarity(query, qn, index.vectors().row(i), index.norms()[i], metric);
  }
  const auto& lex = RankAccess::lex(index);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return lex[a] < lex[b];
  };
  std::size_t keep = n;
  if (threshold) {
    keep = static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [&](double s) { return s >= *threshold; }));
  }
  if (top_k) keep = std::min(keep, *top_k);
  // Filtering below a threshold keeps a prefix of the full ordering, so only
  // that prefix needs sorting.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(), better);
  out.entries.reserve(keep);
  for (std::size_t r = 0; r < keep; ++r) out.entries.push_back({index.ids()[order[r]], scores[order[r]]});
  return out;
}

double recall_at_k(std::span<const RankedList> rankings, std::span<const std::string> ground_truth,
                   std::size_t k) {
  if (k == 0) throw Error(ErrorCode::InvalidConfig, "k must be positive");
  if (rankings.size() != ground_truth.size()) {
    throw Error(ErrorCode::MissingGroundTruth, std::to_string(rankings.size()) + " rankings but " +
                                                   std::to_string(ground_truth.size()) + " ground-truth ids");
  }
  if (rankings.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t q = 0; q < rankings.size(); ++q) {
    if (ground_truth[q].empty()) throw Error(ErrorCode::MissingGroundTruth, "query " + std::to_string(q));
    const auto& entries = rankings[q].entries;
    const std::size_t window = std::min(k, entries.size());
    for (std::size_t r = 0; r < window; ++r) {
      if (entries[r].image_id == ground_truth[q]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

RecallReport evaluate(const ProjectionParams<float>& params, const PairedDataset& dataset,
                      const EmbeddingTable& images, std::size_t k, Metric metric) {
  const auto index = RetrievalIndex::build(images);
  for (const auto& id : dataset.image_ids) {
    if (!images.find(id)) throw Error(ErrorCode::MissingGroundTruth, "image '" + id + "' not in index");
  }
  RecallReport report;
  report.metric = metric;
  if (dataset.empty()) return report;
  const auto projected = project(params, dataset.texts);

  std::map<std::string, std::vector<std::size_t>> by_language;
  for (std::size_t i = 0; i < dataset.size(); ++i) by_language[dataset.languages[i]].push_back(i);

  for (const auto& [language, rows] : by_language) {
    std::vector<RankedList> rankings;
    std::vector<std::string> truth;
    rankings.reserve(rows.size());
    for (auto i : rows) {
      rankings.push_back(rank(projected.row(i), index, metric, k));
      truth.push_back(dataset.image_ids[i]);
    }
    report.rows.push_back({language, k, recall_at_k(rankings, truth, k), rows.size()});
  }
  return report;
}

void write_recall_report(std::ostream& out, const RecallReport& report) {
  out << "# metric=" << to_string(report.metric) << '\n';
  out << "language\tk\trecall\tn_queries\n";
  char buf[64];
  for (const auto& row : report.rows) {
    auto r = std::to_chars(buf, buf + sizeof buf, row.recall);
    out << row.language << '\t' << row.k << '\t' << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf))
        << '\t' << row.n_queries << '\n';
  }
}

}  // namespace xmodal
