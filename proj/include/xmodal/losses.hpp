#pragma once

#include <cstddef>
#include <span>
#include <string_view>

#include "xmodal/matrix.hpp"

namespace xmodal {

/// Floor for squared distances that appear in a loss denominator.
inline constexpr double kDistanceEpsilon = 1e-12;

enum class LossKind { m3l, patr };

std::string_view to_string(LossKind kind);

struct M3LHyperparams {
  double rho = 4.0;
  double alpha1 = 0.5;
  double alpha2 = 1.0;

  void validate() const;
};

struct PATRHyperparams {
  double eta = 1100.0;

  void validate() const;
};

/// Row i of every matrix is one training quadruple
/// (anchor text, positive image, negative image, negative text).
template <typename T>
struct TripletBatch {
  Matrix<T> anchor_text;
  Matrix<T> pos_image;
  Matrix<T> neg_image;
  Matrix<T> neg_text;

  std::size_t size() const noexcept { return anchor_text.rows(); }
  /// Throws Error(ShapeMismatch) unless all four are the same non-empty shape.
  void validate() const;
};

template <typename T>
struct LossResult {
  double loss = 0.0;           // mean over rows
  Matrix<T> grad_anchor;       // d loss / d anchor_text
  Matrix<T> grad_neg_text;     // d loss / d neg_text (all zero for PATR)
  std::size_t degenerate = 0;  // denominators that hit the epsilon floor
};

/// Sum of squared coordinate differences, accumulated in double.
double square_distance(std::span<const float> x, std::span<const float> y);
double square_distance(std::span<const double> x, std::span<const double> y);

/// Mean over rows of
///   a1 * d(an, ip)^rho / d(an, in)^rho + a2 * d(an, ip)^rho / d(an, tn)^rho
/// with d the squared Euclidean distance and denominators floored at
/// kDistanceEpsilon. Images receive no gradient.
template <typename T>
LossResult<T> m3l_loss(const TripletBatch<T>& batch, const M3LHyperparams& hp);

/// Mean over rows of d(an, ip) + max(0, eta - d(an, in)). The hinge's
/// subgradient at the kink is 0. neg_text is ignored.
template <typename T>
LossResult<T> patr_loss(const TripletBatch<T>& batch, const PATRHyperparams& hp);

}  // namespace xmodal
