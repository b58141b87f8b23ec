#pragma once

#include <cstddef>
#include <vector>

#include "xmodal/matrix.hpp"

namespace xmodal {

struct MiningResult {
  /// neg_index[i] != i is the batch row whose image is row i's hard negative;
  /// that row's caption serves as the negative text.
  std::vector<std::size_t> neg_index;
};

/// Hardest in-batch negative: for each row i, the j != i minimising the squared
/// distance between projected_texts[i] and images[j]. Ties go to the smallest j.
/// Exclusion is by index, so a duplicate of the positive image can be chosen.
/// Throws Error(BatchTooSmall) for fewer than two rows.
template <typename T>
MiningResult mine_hard_negatives(const Matrix<T>& projected_texts, const Matrix<T>& images);

}  // namespace xmodal
