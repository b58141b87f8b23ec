#include <doctest.h>

#include <charconv>
#include <random>
#include <sstream>

#include "cli.hpp"
#include "oracles.hpp"
#include "test_util.hpp"
#include "xmodal/atomic_file.hpp"
#include "xmodal/checkpoint.hpp"
#include "xmodal/embedding_store.hpp"

using namespace xmodal;
using xmodal::testing::TempDir;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "xmodal");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

// Six images, two languages with three captions each, and a single-block
// checkpoint that is the identity on non-negative inputs.
struct Fixture {
  TempDir dir;
  EmbeddingTable images = EmbeddingTable::empty(4, Modality::image);
  EmbeddingTable texts = EmbeddingTable::empty(4, Modality::text);

  Fixture() {
    std::mt19937_64 g(12);
    std::uniform_real_distribution<double> u(0, 1);
    Matrix<float> iv(6, 4), tv(6, 4);
    std::vector<std::string> iids, tids;
    std::string manifest;
    for (std::size_t i = 0; i < 6; ++i) {
      iids.push_back("img" + std::to_string(i));
      for (float& v : iv.row(i)) v = static_cast<float>(u(g));
    }
    for (std::size_t i = 0; i < 6; ++i) {
      const std::string lang = i < 3 ? "en" : "de";
      tids.push_back("cap" + std::to_string(i));
      for (float& v : tv.row(i)) v = static_cast<float>(u(g));
      manifest += tids.back() + "\timg" + std::to_string(i) + "\t" + lang + "\ttest\n";
      manifest += tids.back() + "\timg" + std::to_string(i) + "\t" + lang + "\ttrain\n";
    }
    images = EmbeddingTable(iids, iv, Modality::image);
    texts = EmbeddingTable(tids, tv, Modality::text);
    save_table(images, dir / "images.bin", TableFormat::binary);
    save_table(texts, dir / "texts.tsv", TableFormat::tsv);
    write_file_atomically(dir / "pairs.tsv", manifest);

    ProjectionParams<float> p;
    p.input_dim = 4;
    Block<float> b;
    b.weight = Matrix<float>(4, 4);
    for (std::size_t k = 0; k < 4; ++k) b.weight(k, k) = 1;
    b.bias.assign(4, 0.0f);
    p.blocks.push_back(b);
    save_checkpoint(dir / "identity.ck", p);
  }
  std::string path(const std::string& name) const { return (dir / name).string(); }
};

std::string shortest(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

}  // namespace

TEST_CASE("train without --pairs is a usage error") {
  auto r = invoke({"train", "--text-emb", "t", "--image-emb", "i", "--out", "o"});
  CHECK(r.code == 1);
  CHECK(r.err.find("--pairs") != std::string::npos);
  CHECK(r.err.find("Usage") != std::string::npos);
}

TEST_CASE("unknown subcommand and missing files exit 1") {
  CHECK(invoke({}).code == 1);
  CHECK(invoke({"frobnicate"}).code == 1);
  auto r = invoke({"project", "--checkpoint", "/nonexistent", "--text-emb", "x", "--out", "y"});
  CHECK(r.code == 1);
  CHECK(r.err.find("/nonexistent") != std::string::npos);
  CHECK(invoke({"--help"}).code == 0);
}

TEST_CASE("eval-retrieval prints the oracle recall table") {
  Fixture f;
  for (std::size_t k : {1u, 2u, 6u}) {
    auto r = invoke({"eval-retrieval", "--checkpoint", f.path("identity.ck"), "--pairs", f.path("pairs.tsv"),
                     "--text-emb", f.path("texts.tsv"), "--image-emb", f.path("images.bin"), "--k",
                     std::to_string(k)});
    REQUIRE(r.code == 0);
    // golden: exhaustive ranking of the raw captions (the checkpoint is the
    // identity on the non-negative fixture)
    std::string golden = "# metric=cosine\nlanguage\tk\trecall\tn_queries\n";
    for (std::string lang : {"de", "en"}) {
      std::size_t hits = 0;
      for (std::size_t q = 0; q < 6; ++q) {
        if ((q < 3) != (lang == "en")) continue;
        auto ranking = oracle::brute_force_ranking(f.images.ids(), f.images.vectors(), f.texts.row(q), true);
        for (std::size_t i = 0; i < k; ++i) hits += ranking[i].first == "img" + std::to_string(q);
      }
      golden += lang + "\t" + std::to_string(k) + "\t" + shortest(hits / 3.0) + "\t3\n";
    }
    CHECK(r.out == golden);
  }
}

TEST_CASE("retrieve writes ranked rows") {
  Fixture f;
  auto r = invoke({"retrieve", "--checkpoint", f.path("identity.ck"), "--image-emb", f.path("images.bin"),
                   "--query-emb", f.path("texts.tsv"), "--top-k", "2"});
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  std::string line;
  std::getline(in, line);
  CHECK(line == "query_id\trank\timage_id\tscore");
  auto ranking = oracle::brute_force_ranking(f.images.ids(), f.images.vectors(), f.texts.row(0), true);
  std::getline(in, line);
  CHECK(line.rfind("cap0\t1\t" + ranking[0].first + "\t", 0) == 0);
  std::size_t rows = 1;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 12);
}

TEST_CASE("train is reproducible byte for byte and leaves inputs alone") {
  Fixture f;
  const auto before = read_file(f.dir / "texts.tsv");
  std::vector<std::string> common{"train", "--pairs", f.path("pairs.tsv"), "--text-emb", f.path("texts.tsv"),
                                  "--image-emb", f.path("images.bin"), "--epochs", "3", "--batch-size", "4",
                                  "--seed", "5"};
  auto a = common, b = common;
  a.insert(a.end(), {"--out", f.path("a.ck"), "--config", f.path("small.cfg")});
  b.insert(b.end(), {"--out", f.path("b.ck"), "--config", f.path("small.cfg")});
  write_file_atomically(f.dir / "small.cfg", "layer_dims = 8,4\ndropout_rates = 0.1,0\nl2norm_flags = true,false\n");
  auto ra = invoke(a);
  REQUIRE_MESSAGE(ra.code == 0, ra.err);
  REQUIRE(invoke(b).code == 0);
  CHECK(read_file(f.dir / "a.ck") == read_file(f.dir / "b.ck"));
  CHECK(read_file(f.dir / "a.ck.history.tsv") == read_file(f.dir / "b.ck.history.tsv"));
  CHECK(read_file(f.dir / "texts.tsv") == before);

  auto bad = common;
  bad.insert(bad.end(), {"--out", f.path("c.ck"), "--loss", "hinge"});
  CHECK(invoke(bad).code == 1);
}

TEST_CASE("project and tag") {
  Fixture f;
  REQUIRE(invoke({"project", "--checkpoint", f.path("identity.ck"), "--text-emb", f.path("texts.tsv"), "--out",
                  f.path("proj.tsv")})
              .code == 0);
  auto projected = load_table(f.dir / "proj.tsv", TableFormat::tsv);
  CHECK(projected == f.texts);

  write_file_atomically(f.dir / "source.tsv", "spring\tcap0\nbird\tcap1\n");
  auto r = invoke({"tag", "--checkpoint", f.path("identity.ck"), "--image-emb", f.path("images.bin"), "--image-id",
                   "img0", "--source-tags", f.path("source.tsv"), "--vocab-emb", f.path("texts.tsv")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.rfind("source_tag\ttarget_tag\tscore\trank_considered\nspring\t", 0) == 0);
  auto missing = invoke({"tag", "--checkpoint", f.path("identity.ck"), "--image-emb", f.path("images.bin"),
                         "--image-id", "nope", "--source-tags", f.path("source.tsv"), "--vocab-emb",
                         f.path("texts.tsv")});
  CHECK(missing.code == 1);
}

TEST_CASE("gradcheck exits 0 when every suite passes") {
  auto r = invoke({"gradcheck", "--trials", "20"});
  CHECK(r.code == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
}
