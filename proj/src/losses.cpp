#include "xmodal/losses.hpp"

#include <algorithm>
#include <cmath>

#include "xmodal/error.hpp"

namespace xmodal {

std::string_view to_string(LossKind kind) { return kind == LossKind::m3l ? "m3l" : "patr"; }

void M3LHyperparams::validate() const {
  if (!(rho > 0.0) || !std::isfinite(rho)) throw Error(ErrorCode::InvalidConfig, "rho must be positive");
  if (!(alpha1 >= 0.0) || !(alpha2 >= 0.0)) throw Error(ErrorCode::InvalidConfig, "alphas must be non-negative");
  if (alpha1 == 0.0 && alpha2 == 0.0) throw Error(ErrorCode::InvalidConfig, "alpha1 and alpha2 are both zero");
}

void PATRHyperparams::validate() const {
  if (!(eta >= 0.0) || !std::isfinite(eta)) throw Error(ErrorCode::InvalidConfig, "eta must be non-negative");
}

template <typename T>
void TripletBatch<T>::validate() const {
  if (anchor_text.empty()) throw Error(ErrorCode::ShapeMismatch, "empty triplet batch");
  if (!anchor_text.same_shape(pos_image) || !anchor_text.same_shape(neg_image) ||
      !anchor_text.same_shape(neg_text)) {
    throw Error(ErrorCode::ShapeMismatch, "triplet batch matrices differ in shape");
  }
}

namespace {

template <typename T>
double squared_distance_impl(std::span<const T> x, std::span<const T> y) {
  if (x.size() != y.size()) {
    throw Error(ErrorCode::ShapeMismatch,
                "square_distance of " + std::to_string(x.size()) + "-d and " + std::to_string(y.size()) + "-d");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x[i]) - static_cast<double>(y[i]);
    acc += d * d;
  }
  return acc;
}

}  // namespace

double square_distance(std::span<const float> x, std::span<const float> y) { return squared_distance_impl(x, y); }
double square_distance(std::span<const double> x, std::span<const double> y) { return squared_distance_impl(x, y); }

template <typename T>
LossResult<T> m3l_loss(const TripletBatch<T>& batch, const M3LHyperparams& hp) {
  hp.validate();
  batch.validate();
  const std::size_t n = batch.size();
  const std::size_t dim = batch.anchor_text.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double rho = hp.rho;

  LossResult<T> r;
  r.grad_anchor = Matrix<T>(n, dim);
  r.grad_neg_text = Matrix<T>(n, dim);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto an = batch.anchor_text.row(i);
    auto ip = batch.pos_image.row(i);
    auto in = batch.neg_image.row(i);
    auto tn = batch.neg_text.row(i);
    const double dp = square_distance(an, ip);
    const double dn = square_distance(an, in);
    const double dt = square_distance(an, tn);
    const bool dn_floored = dn < kDistanceEpsilon;
    const bool dt_floored = dt < kDistanceEpsilon;
    r.degenerate += static_cast<std::size_t>(dn_floored) + static_cast<std::size_t>(dt_floored);
    const double fn = std::max(dn, kDistanceEpsilon);
    const double ft = std::max(dt, kDistanceEpsilon);

    const double num = std::pow(dp, rho);
    const double den_img = std::pow(fn, rho);
    const double den_txt = std::pow(ft, rho);
    total += hp.alpha1 * num / den_img + hp.alpha2 * num / den_txt;

    // Coefficients of 2(an - x) in the gradient with respect to an.
    const double c_pos = dp > 0.0 ? (hp.alpha1 / den_img + hp.alpha2 / den_txt) * rho * num / dp : 0.0;
    const double c_img = dn_floored ? 0.0 : hp.alpha1 * rho * num / (den_img * fn);
    const double c_txt = dt_floored ? 0.0 : hp.alpha2 * rho * num / (den_txt * ft);

    auto ga = r.grad_anchor.row(i);
    auto gt = r.grad_neg_text.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      const double a = an[j];
      const double to_pos = 2.0 * (a - ip[j]);
      const double to_img = 2.0 * (a - in[j]);
      const double to_txt = 2.0 * (a - tn[j]);
      ga[j] = static_cast<T>(inv_n * (c_pos * to_pos - c_img * to_img - c_txt * to_txt));
      gt[j] = static_cast<T>(inv_n * c_txt * to_txt);
    }
  }
  r.loss = total * inv_n;
  return r;
}

template <typename T>
LossResult<T> patr_loss(const TripletBatch<T>& batch, const PATRHyperparams& hp) {
  hp.validate();
  batch.validate();
  const std::size_t n = batch.size();
  const std::size_t dim = batch.anchor_text.cols();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossResult<T> r;
  r.grad_anchor = Matrix<T>(n, dim);
  r.grad_neg_text = Matrix<T>(n, dim);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto an = batch.anchor_text.row(i);
    auto ip = batch.pos_image.row(i);
    auto in = batch.neg_image.row(i);
    const double dp = square_distance(an, ip);
    const double dn = square_distance(an, in);
    const double margin = hp.eta - dn;
    const bool active = margin > 0.0;
    total += dp + (active ? margin : 0.0);

    auto ga = r.grad_anchor.row(i);
    for (std::size_t j = 0; j < dim; ++j) {
      const double a = an[j];
      double g = 2.0 * (a - ip[j]);
      if (active) g -= 2.0 * (a - in[j]);
      ga[j] = static_cast<T>(inv_n * g);
    }
  }
  r.loss = total * inv_n;
  return r;
}

template struct TripletBatch<float>;
template struct TripletBatch<double>;
template LossResult<float> m3l_loss<float>(const TripletBatch<float>&, const M3LHyperparams&);
template LossResult<double> m3l_loss<double>(const TripletBatch<double>&, const M3LHyperparams&);
template LossResult<float> patr_loss<float>(const TripletBatch<float>&, const PATRHyperparams&);
template LossResult<double> patr_loss<double>(const TripletBatch<double>&, const PATRHyperparams&);

}  // namespace xmodal
