#include <doctest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "xmodal/losses.hpp"
#include "xmodal/miner.hpp"
#include "oracles.hpp"

using namespace xmodal;
using xmodal::testing::random_matrix;
using xmodal::testing::thrown_code;

namespace {

Matrix<double> point(double x, double y) {
  Matrix<double> m(1, 2);
  m(0, 0) = x;
  m(0, 1) = y;
  return m;
}

TripletBatch<double> fixture() { return {point(0, 0), point(1, 0), point(2, 0), point(0, 3)}; }

TripletBatch<double> random_batch(std::mt19937_64& g, std::size_t n, std::size_t d) {
  return {random_matrix<double>(g, n, d), random_matrix<double>(g, n, d), random_matrix<double>(g, n, d),
          random_matrix<double>(g, n, d)};
}

}  // namespace

TEST_CASE("m3l hand-computed fixture values") {
  const double rho1 = 0.5 * (1.0 / 4.0) + 1.0 * (1.0 / 9.0);
  const double rho4 = 0.5 * (1.0 / 256.0) + 1.0 * (1.0 / 6561.0);
  CHECK(std::abs(m3l_loss(fixture(), {1.0, 0.5, 1.0}).loss - rho1) <= 1e-9);
  CHECK(std::abs(m3l_loss(fixture(), {4.0, 0.5, 1.0}).loss - rho4) <= 1e-9);
  CHECK(std::abs(rho1 - 0.236111) < 1e-6);
  CHECK(std::abs(rho4 - 0.00210554) < 1e-8);
}

TEST_CASE("patr hand-computed fixture values") {
  CHECK(std::abs(patr_loss(fixture(), {1100.0}).loss - 1097.0) <= 1e-9);
  CHECK(std::abs(patr_loss(fixture(), {1.0}).loss - 1.0) <= 1e-9);
  // exactly at the kink: value is dp, subgradient of the hinge is 0
  auto at_kink = patr_loss(fixture(), {4.0});
  CHECK(at_kink.loss == 1.0);
  CHECK(at_kink.grad_anchor(0, 0) == doctest::Approx(-2.0));
}

TEST_CASE("patr ignores the negative text") {
  std::mt19937_64 g(3);
  auto b = random_batch(g, 5, 4);
  auto r1 = patr_loss(b, {10.0});
  b.neg_text = random_matrix<double>(g, 5, 4);
  auto r2 = patr_loss(b, {10.0});
  CHECK(r1.loss == r2.loss);
  for (double v : r2.grad_neg_text.flat()) CHECK(v == 0.0);
}

TEST_CASE("m3l is invariant to uniform scaling") {
  std::mt19937_64 g(5);
  for (int t = 0; t < 50; ++t) {
    auto b = random_batch(g, 4, 8);
    const double base = m3l_loss(b, {}).loss;
    for (double s : {0.5, 2.0, 10.0}) {
      TripletBatch<double> sb = b;
      for (auto* m : {&sb.anchor_text, &sb.pos_image, &sb.neg_image, &sb.neg_text}) {
        for (double& v : m->flat()) v *= s;
      }
      CHECK(std::abs(m3l_loss(sb, {}).loss - base) / base <= 1e-6);
    }
  }
}

TEST_CASE("m3l increases with dp and decreases with dn, dt") {
  auto b = fixture();
  const double base = m3l_loss(b, {}).loss;
  auto further_pos = b;
  further_pos.pos_image(0, 0) = 1.5;
  CHECK(m3l_loss(further_pos, {}).loss > base);
  auto further_neg = b;
  further_neg.neg_image(0, 0) = 3.0;
  CHECK(m3l_loss(further_neg, {}).loss < base);
  auto further_text = b;
  further_text.neg_text(0, 1) = 4.0;
  CHECK(m3l_loss(further_text, {}).loss < base);
}

TEST_CASE("m3l with alpha2 = 0 ignores the negative text") {
  std::mt19937_64 g(7);
  auto b = random_batch(g, 3, 5);
  M3LHyperparams hp{4.0, 0.5, 0.0};
  auto r1 = m3l_loss(b, hp);
  b.neg_text = random_matrix<double>(g, 3, 5);
  CHECK(m3l_loss(b, hp).loss == r1.loss);
}

TEST_CASE("degenerate denominators are floored, not infinite") {
  auto b = fixture();
  b.neg_image = b.anchor_text;
  b.neg_text = b.anchor_text;
  auto r = m3l_loss(b, {});
  CHECK(std::isfinite(r.loss));
  CHECK(r.degenerate == 2);
  for (double v : r.grad_anchor.flat()) CHECK(std::isfinite(v));
  // zero dp contributes nothing
  auto zero = fixture();
  zero.pos_image = zero.anchor_text;
  auto rz = m3l_loss(zero, {});
  CHECK(rz.loss == 0.0);
  for (double v : rz.grad_anchor.flat()) CHECK(v == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
  std::mt19937_64 g(13);
  for (int t = 0; t < 20; ++t) {
    auto b = random_batch(g, 3, 4);
    auto f = [&] { return m3l_loss(b, {2.0, 0.5, 1.0}).loss; };
    auto r = m3l_loss(b, {2.0, 0.5, 1.0});
    double largest = 0;
    for (double v : r.grad_anchor.flat()) largest = std::max(largest, std::abs(v));
    auto an = b.anchor_text.flat();
    for (std::size_t j = 0; j < an.size(); ++j) {
      const double n = oracle::central_difference(an[j], 1e-6, f);
      CHECK(oracle::relative_error(r.grad_anchor.flat()[j], n, 1e-5 * std::max(1.0, largest)) <= 1e-4);
    }
  }
}

TEST_CASE("hyperparameter and shape validation") {
  CHECK(thrown_code([] { M3LHyperparams{0.0, 0.5, 1.0}.validate(); }) == ErrorCode::InvalidConfig);
  CHECK(thrown_code([] { M3LHyperparams{4.0, -1.0, 1.0}.validate(); }) == ErrorCode::InvalidConfig);
  CHECK(thrown_code([] { PATRHyperparams{-1.0}.validate(); }) == ErrorCode::InvalidConfig);
  auto b = fixture();
  b.neg_text = Matrix<double>(1, 3);
  CHECK(thrown_code([&] { m3l_loss(b, {}); }) == ErrorCode::ShapeMismatch);
  CHECK(thrown_code([&] { patr_loss(TripletBatch<double>{}, {}); }) == ErrorCode::ShapeMismatch);
}
