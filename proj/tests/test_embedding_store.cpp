#include <doctest.h>

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "xmodal/embedding_store.hpp"

using namespace xmodal;
using xmodal::testing::TempDir;
using xmodal::testing::thrown_code;

namespace {

EmbeddingTable small_table(Modality m = Modality::text) {
  Matrix<float> v(2, 3);
  v(0, 0) = 1.0f;
  v(1, 1) = 1.0f;
  return EmbeddingTable({"a", "b"}, std::move(v), m);
}

EmbeddingTable random_table(std::size_t n, std::size_t d, std::uint64_t seed, Modality m = Modality::image) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("id" + std::to_string(i));
  return EmbeddingTable(std::move(ids), xmodal::testing::random_matrix<float>(rng, n, d), m);
}

void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

}  // namespace

TEST_CASE("table construction enforces invariants") {
  Matrix<float> v(2, 2);
  CHECK(thrown_code([&] { EmbeddingTable({"a", "a"}, v, Modality::text); }) == ErrorCode::DuplicateId);
  CHECK(thrown_code([&] { EmbeddingTable({"a"}, v, Modality::text); }) == ErrorCode::DimensionMismatch);
  CHECK(thrown_code([&] { EmbeddingTable({"a", ""}, v, Modality::text); }) == ErrorCode::InvalidId);
  CHECK(thrown_code([&] { EmbeddingTable({"a", "b\tc"}, v, Modality::text); }) == ErrorCode::InvalidId);
  CHECK(thrown_code([&] { EmbeddingTable({"a", "\xff"}, v, Modality::text); }) == ErrorCode::InvalidId);
  v(1, 1) = std::numeric_limits<float>::quiet_NaN();
  CHECK(thrown_code([&] { EmbeddingTable({"a", "b"}, v, Modality::text); }) == ErrorCode::NonFiniteValue);
  CHECK(thrown_code([&] { EmbeddingTable({}, Matrix<float>(0, 0), Modality::text); }).has_value());
}

TEST_CASE("utf-8 ids are accepted") {
  Matrix<float> v(2, 1);
  EmbeddingTable t({"printemps_é", "봄"}, v, Modality::text);
  CHECK(t.find("봄") == 1u);
  CHECK_FALSE(t.find("spring").has_value());
}

TEST_CASE("two-row table has the declared shape") {
  TempDir dir;
  write_text(dir / "t.tsv", "id\tdim=3\na\t1 0 0\nb\t0 1 0\n");
  auto t = load_table(dir / "t.tsv", TableFormat::tsv);
  CHECK(t.size() == 2);
  CHECK(t.dim() == 3);
  CHECK(t == small_table());
}

TEST_CASE("save then load is bit-exact in both formats") {
  TempDir dir;
  auto t = random_table(1000, 512, 7);
  for (auto fmt : {TableFormat::binary, TableFormat::tsv}) {
    auto p = dir / (fmt == TableFormat::binary ? "t.bin" : "t.tsv");
    save_table(t, p, fmt);
    auto back = load_table(p, fmt, Modality::image);
    CHECK(back.ids() == t.ids());
    CHECK(xmodal::testing::bitwise_equal(back.vectors(), t.vectors()));
    CHECK(load_table_auto(p, Modality::image) == t);
  }
}

TEST_CASE("tsv ids and awkward floats roundtrip") {
  Matrix<float> v(1, 4);
  v(0, 0) = std::numeric_limits<float>::denorm_min();
  v(0, 1) = -0.0f;
  v(0, 2) = std::numeric_limits<float>::max();
  v(0, 3) = 0.1f;
  EmbeddingTable t({"x y"}, v, Modality::text);
  auto back = decode_table(encode_table(t, TableFormat::tsv), TableFormat::tsv);
  CHECK(xmodal::testing::bitwise_equal(back.vectors(), t.vectors()));
}

TEST_CASE("row shorter than the declared dim is a DimensionMismatch") {
  TempDir dir;
  write_text(dir / "t.tsv", "id\tdim=4\na\t1 2 3 4\nb\t1 2 3\n");
  CHECK(thrown_code([&] { load_table(dir / "t.tsv", TableFormat::tsv); }) == ErrorCode::DimensionMismatch);

  // Same defect in binary: drop the last float of the second record.
  Matrix<float> v(2, 4, 1.0f);
  auto bytes = encode_table(EmbeddingTable({"a", "b"}, v, Modality::image), TableFormat::binary);
  bytes.resize(bytes.size() - 4);
  CHECK(thrown_code([&] { decode_table(bytes, TableFormat::binary); }) == ErrorCode::DimensionMismatch);
}

TEST_CASE("tsv format errors") {
  auto code = [](const std::string& s) { return thrown_code([&] { decode_table(s, TableFormat::tsv); }); };
  CHECK(code("") == ErrorCode::MalformedHeader);
  CHECK(code("id\tdim=0\n") == ErrorCode::MalformedHeader);
  CHECK(code("id\tdims=2\n") == ErrorCode::MalformedHeader);
  CHECK(code("id\tdim=2\na\t1 x\n") == ErrorCode::MalformedRecord);
  CHECK(code("id\tdim=2\na\t1 2 3\n") == ErrorCode::DimensionMismatch);
  CHECK(code("id\tdim=2\na\t1 2\na\t3 4\n") == ErrorCode::DuplicateId);
  CHECK(code("id\tdim=1\na\tnan\n") == ErrorCode::NonFiniteValue);
  CHECK(code("id\tdim=1\na\t1e999\n") == ErrorCode::NonFiniteValue);
}

TEST_CASE("binary header errors") {
  auto good = encode_table(small_table(), TableFormat::binary);
  auto bad_magic = good;
  bad_magic[0] = 'Y';
  CHECK(thrown_code([&] { decode_table(bad_magic, TableFormat::binary); }) == ErrorCode::MalformedHeader);
  auto bad_version = good;
  bad_version[4] = 9;
  CHECK(thrown_code([&] { decode_table(bad_version, TableFormat::binary); }) == ErrorCode::MalformedHeader);
  auto trailing = good + "x";
  CHECK(thrown_code([&] { decode_table(trailing, TableFormat::binary); }) == ErrorCode::MalformedRecord);
  CHECK(thrown_code([&] { decode_table(good.substr(0, 3), TableFormat::binary); }) == ErrorCode::MalformedHeader);
}

TEST_CASE("empty table roundtrips") {
  TempDir dir;
  auto t = EmbeddingTable::empty(2048, Modality::image);
  for (auto fmt : {TableFormat::binary, TableFormat::tsv}) {
    auto p = dir / "e";
    save_table(t, p, fmt);
    auto back = load_table(p, fmt, Modality::image);
    CHECK(back.size() == 0);
    CHECK(back.dim() == 2048);
  }
}

TEST_CASE("1x1 binary table holds exactly one float payload") {
  Matrix<float> v(1, 1, 0.5f);
  auto bytes = encode_table(EmbeddingTable({"z"}, v, Modality::image), TableFormat::binary);
  auto header = encode_table(EmbeddingTable::empty(1, Modality::image), TableFormat::binary);
  // record = u16 id length, id bytes, then the float
  REQUIRE(bytes.size() == header.size() + 2 + 1 + 4);
  std::uint32_t bits = std::bit_cast<std::uint32_t>(0.5f);
  const unsigned char le[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                               static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
  CHECK(std::memcmp(bytes.data() + bytes.size() - 4, le, 4) == 0);
}

TEST_CASE("binary keeps modality, tsv takes it from the caller") {
  auto img = small_table(Modality::image);
  CHECK(decode_table(encode_table(img, TableFormat::binary), TableFormat::binary).modality() == Modality::image);
  CHECK(decode_table(encode_table(img, TableFormat::tsv), TableFormat::tsv).modality() == Modality::text);
}

TEST_CASE("missing file is an IoFailure") {
  TempDir dir;
  CHECK(thrown_code([&] { load_table(dir / "nope", TableFormat::binary); }) == ErrorCode::IoFailure);
  CHECK(thrown_code([&] { load_manifest(dir / "nope"); }) == ErrorCode::IoFailure);
  CHECK(thrown_code([&] { save_table(small_table(), dir / "no" / "such" / "dir", TableFormat::tsv); }) ==
        ErrorCode::IoFailure);
}

TEST_CASE("l2_normalized") {
  Matrix<float> v(2, 2);
  v(0, 0) = 3;
  v(0, 1) = 4;
  auto n = l2_normalized(EmbeddingTable({"a", "b"}, v, Modality::text));
  CHECK(n.row(0)[0] == doctest::Approx(0.6));
  CHECK(n.row(0)[1] == doctest::Approx(0.8));
  CHECK(n.row(1)[0] == 0.0f);
}

TEST_CASE("manifest parsing") {
  auto m = parse_manifest("c1\ti1\ten\ttrain\n");
  REQUIRE(m.records.size() == 1);
  CHECK(m.records[0] == PairRecord{"c1", "i1", "en", Split::train});

  CHECK(thrown_code([] { parse_manifest("c1\ti1\ten\n"); }) == ErrorCode::MalformedRow);
  CHECK(thrown_code([] { parse_manifest("c1\ti1\ten\ttrain\textra\n"); }) == ErrorCode::MalformedRow);
  CHECK(thrown_code([] { parse_manifest("c1\t\ten\ttrain\n"); }) == ErrorCode::MalformedRow);
  CHECK(thrown_code([] { parse_manifest("c1\ti1\ten\tvalidation\n"); }) == ErrorCode::UnknownSplit);
  CHECK(thrown_code([] { parse_manifest("c1\ti1\ten\ttrain\nc1\ti1\ten\ttrain\n"); }) == ErrorCode::DuplicatePair);
  // same pair in another split is fine
  CHECK(parse_manifest("c1\ti1\ten\ttrain\nc1\ti1\ten\ttest\n").records.size() == 2);
  CHECK(parse_manifest("# comment\r\n\nc1\ti1\ten\tdev\r\n").records.size() == 1);
}

TEST_CASE("5000-line manifest keeps its order") {
  TempDir dir;
  std::string text;
  for (int i = 0; i < 5000; ++i) text += "c" + std::to_string(i) + "\ti" + std::to_string(i % 7) + "\ten\ttrain\n";
  write_text(dir / "m.tsv", text);
  auto m = load_manifest(dir / "m.tsv");
  REQUIRE(m.records.size() == static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')));
  for (int i = 0; i < 5000; ++i) CHECK(m.records[i].caption_id == "c" + std::to_string(i));
  CHECK(format_manifest(m) == text);
}

TEST_CASE("assemble_dataset aligns rows and names missing ids") {
  Matrix<float> tv(3, 2), iv(2, 2);
  for (std::size_t i = 0; i < 3; ++i) tv(i, 0) = static_cast<float>(i);
  for (std::size_t i = 0; i < 2; ++i) iv(i, 1) = static_cast<float>(10 + i);
  EmbeddingTable texts({"c0", "c1", "c2"}, tv, Modality::text);
  EmbeddingTable images({"i0", "i1"}, iv, Modality::image);

  auto sorted = parse_manifest("c0\ti0\ten\ttrain\nc1\ti1\tde\ttrain\nc2\ti0\ten\ttrain\nc2\ti1\ten\ttest\n");
  auto ds = assemble_dataset(sorted, texts, images, Split::train);
  REQUIRE(ds.size() == 3);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(ds.texts(i, 0) == texts.row(*texts.find(ds.caption_ids[i]))[0]);
    CHECK(ds.images(i, 1) == images.row(*images.find(ds.image_ids[i]))[1]);
  }
  CHECK(assemble_dataset(sorted, texts, images, Split::train, "de").size() == 1);
  CHECK(assemble_dataset(sorted, texts, images, Split::test).size() == 1);

  PairManifest shuffled = sorted;
  std::reverse(shuffled.records.begin(), shuffled.records.end());
  auto ds2 = assemble_dataset(shuffled, texts, images, Split::train);
  auto pairs = [](const PairedDataset& d) {
    std::vector<std::pair<std::string, std::string>> p;
    for (std::size_t i = 0; i < d.size(); ++i) p.emplace_back(d.caption_ids[i], d.image_ids[i]);
    return p;
  };
  auto p1 = pairs(ds), p2 = pairs(ds2);
  CHECK(p1 != p2);
  std::sort(p1.begin(), p1.end());
  std::sort(p2.begin(), p2.end());
  CHECK(p1 == p2);

  auto ghost = parse_manifest("ghost\ti0\ten\ttrain\n");
  try {
    assemble_dataset(ghost, texts, images, Split::train);
    FAIL("expected UnresolvedId");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnresolvedId);
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
}
