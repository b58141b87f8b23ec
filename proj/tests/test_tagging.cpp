#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_util.hpp"
#include "xmodal/tagging.hpp"

using namespace xmodal;
using xmodal::testing::random_matrix;
using xmodal::testing::thrown_code;

TEST_CASE("score with exact fixture cosines") {
  // three dims so cos(img, .) and cos(src, .) can be chosen independently
  Matrix<float> v(2, 3);
  v(0, 0) = 1;
  v(1, 1) = 1;
  TagVocab vocab({"A", "B"}, v);
  auto img = std::vector<float>{0.9f, 0.1f, std::sqrt(1.0f - 0.81f - 0.01f)};
  auto src = std::vector<float>{0.2f, 0.8f, std::sqrt(1.0f - 0.04f - 0.64f)};
  auto s = score_targets(img, src, vocab, {});
  CHECK(std::abs(s[0] - 0.655) < 1e-6);
  CHECK(std::abs(s[1] - 0.345) < 1e-6);
}

TEST_CASE("w1 = 0 reduces to text nearest neighbour; equal vocab gives equal scores") {
  std::mt19937_64 g(3);
  auto v = random_matrix<float>(g, 8, 5);
  std::vector<std::string> tags;
  for (int i = 0; i < 8; ++i) tags.push_back("t" + std::to_string(i));
  TagVocab vocab(tags, v);
  auto img = random_matrix<float>(g, 1, 5);
  auto src = random_matrix<float>(g, 1, 5);
  auto s = score_targets(img.row(0), src.row(0), vocab, {0.0, 1.0});
  std::size_t best = std::max_element(s.begin(), s.end()) - s.begin();
  double best_cos = -2;
  std::size_t ref = 0;
  for (std::size_t i = 0; i < 8; ++i) {
    double dot = 0, a = 0, b = 0;
    for (std::size_t k = 0; k < 5; ++k) {
      dot += double{src(0, k)} * v(i, k);
      a += double{src(0, k)} * src(0, k);
      b += double{v(i, k)} * v(i, k);
    }
    const double c = dot / std::sqrt(a * b);
    if (c > best_cos) best_cos = c, ref = i;
  }
  CHECK(best == ref);

  Matrix<float> same(4, 5, 0.3f);
  TagVocab flat({"a", "b", "c", "d"}, same);
  auto fs = score_targets(img.row(0), src.row(0), flat, {});
  for (double x : fs) CHECK(x == fs[0]);
}

TEST_CASE("shared top tag goes to the first source, runner-up to the second") {
  Matrix<float> v(3, 2);
  v(0, 0) = 1;            // A
  v(1, 0) = 0.8f;         // B
  v(1, 1) = 0.6f;
  v(2, 1) = 1;            // C
  TagVocab vocab({"A", "B", "C"}, v);
  std::vector<float> img{1, 0};
  std::vector<SourceTag> src{{"s1", {1, 0.1f}}, {"s2", {1, 0.05f}}};
  auto out = assign_tags(img, src, vocab, {});
  REQUIRE(out.pairs.size() == 2);
  CHECK(out.pairs[0].target_tag == "A");
  CHECK(out.pairs[0].rank_considered == 1);
  CHECK(out.pairs[1].target_tag == "B");
  CHECK(out.pairs[1].rank_considered == 2);
}

TEST_CASE("random fixtures: distinct targets, perfect matching, bounded scores, scale invariance") {
  std::mt19937_64 g(11);
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + g() % 10, d = 1 + g() % 6;
    std::vector<std::string> tags;
    for (std::size_t i = 0; i < n; ++i) tags.push_back("v" + std::to_string(i));
    TagVocab vocab(tags, random_matrix<float>(g, n, d));
    auto img = random_matrix<float>(g, 1, d);
    std::vector<SourceTag> src;
    const std::size_t m = 1 + g() % n;
    auto se = random_matrix<float>(g, m, d);
    for (std::size_t j = 0; j < m; ++j) src.push_back({"s" + std::to_string(j), {se.row(j).begin(), se.row(j).end()}});
    auto out = assign_tags(img.row(0), src, vocab, {});
    REQUIRE(out.pairs.size() == m);
    std::set<std::string> used;
    for (std::size_t j = 0; j < m; ++j) {
      CHECK(out.pairs[j].source_tag == src[j].tag);
      used.insert(out.pairs[j].target_tag);
      CHECK(std::abs(out.pairs[j].score) <= 1.0 + 1e-9);
    }
    CHECK(used.size() == m);
    if (m == n) CHECK(used == std::set<std::string>(tags.begin(), tags.end()));

    std::vector<float> scaled(img.row(0).begin(), img.row(0).end());
    for (float& x : scaled) x *= 7.5f;
    auto out2 = assign_tags(scaled, std::span(src).first(1), vocab, {});
    CHECK(out2.pairs[0].target_tag == out.pairs[0].target_tag);

    if (m < n) continue;
    std::vector<SourceTag> too_many = src;
    too_many.push_back({"extra", src[0].embedding});
    CHECK(thrown_code([&] { assign_tags(img.row(0), too_many, vocab, {}); }) == ErrorCode::VocabExhausted);
  }
}

TEST_CASE("image context flips the assigned tag") {
  // "spring" the season vs "spring" the coil: same source tag and vocabulary,
  // two images on either side of the weighted decision boundary.
  Matrix<float> v(2, 3);
  v(0, 0) = 1;  // printemps (season)
  v(1, 1) = 1;  // ressort (coil)
  TagVocab vocab({"printemps", "ressort"}, v);
  // On its own the source tag would pick printemps.
  std::vector<SourceTag> tags{{"spring", {0.8f, 0.6f, 0.0f}}};
  std::vector<float> garden{1.0f, 0.05f, 0.2f};
  std::vector<float> workshop{0.05f, 1.0f, 0.2f};
  auto a = assign_tags(garden, tags, vocab, {});
  auto b = assign_tags(workshop, tags, vocab, {});
  CHECK(a.pairs[0].target_tag == "printemps");
  CHECK(b.pairs[0].target_tag == "ressort");
}

TEST_CASE("tagging validation") {
  Matrix<float> v(2, 2, 1.0f);
  CHECK(thrown_code([&] { TagVocab({"a", "a"}, v); }) == ErrorCode::DuplicateId);
  TagVocab vocab({"a", "b"}, v);
  CHECK(thrown_code([&] { score_targets(std::vector<float>{1}, std::vector<float>{1, 2}, vocab, {}); }) ==
        ErrorCode::ShapeMismatch);
  CHECK(thrown_code([] { TaggingWeights{-0.1, 0.5}.validate(); }) == ErrorCode::InvalidConfig);
}
