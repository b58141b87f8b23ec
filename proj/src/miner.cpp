#include "xmodal/miner.hpp"

#include <limits>
#include <string>

#include "xmodal/error.hpp"
#include "xmodal/losses.hpp"

namespace xmodal {

template <typename T>
MiningResult mine_hard_negatives(const Matrix<T>& projected_texts, const Matrix<T>& images) {
  const std::size_t n = projected_texts.rows();
  if (n < 2) throw Error(ErrorCode::BatchTooSmall, "mining needs at least 2 rows, got " + std::to_string(n));
  if (!projected_texts.same_shape(images)) {
    throw Error(ErrorCode::ShapeMismatch, "texts and images must have the same shape for mining");
  }
  MiningResult result;
  result.neg_index.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_j = i == 0 ? 1 : 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double d = square_distance(projected_texts.row(i), images.row(j));
      if (d < best) {
        best = d;
        best_j = j;
      }
    }
    result.neg_index[i] = best_j;
  }
  return result;
}

template MiningResult mine_hard_negatives<float>(const Matrix<float>&, const Matrix<float>&);
template MiningResult mine_hard_negatives<double>(const Matrix<double>&, const Matrix<double>&);

}  // namespace xmodal
