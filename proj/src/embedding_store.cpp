#include "xmodal/embedding_store.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <set>
#include <utility>

#include "byte_io.hpp"
#include "xmodal/atomic_file.hpp"
#include "xmodal/error.hpp"

namespace xmodal {

namespace {

constexpr std::string_view kTableMagic = "XEMB";
constexpr std::uint32_t kTableVersion = 1;

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    auto c = static_cast<unsigned char>(s[i]);
    std::size_t len;
    std::uint32_t cp;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    // Reject overlong forms, surrogates and out-of-range code points.
    static constexpr std::uint32_t kMin[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < kMin[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

void check_id(const std::string& id) {
  if (id.empty()) throw Error(ErrorCode::InvalidId, "empty id");
  if (id.find_first_of("\t\r\n") != std::string::npos) {
    throw Error(ErrorCode::InvalidId, "id contains TAB/CR/LF: '" + id + "'");
  }
  if (!valid_utf8(id)) throw Error(ErrorCode::InvalidId, "id is not valid UTF-8");
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

// Splits `text` into lines without allocating; a trailing newline does not
// produce an extra empty line.
std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(strip_cr(text.substr(start, end - start)));
    start = end + 1;
  }
  return lines;
}

EmbeddingTable decode_binary(std::string_view bytes) {
  detail::ByteReader in(bytes, ErrorCode::MalformedHeader);
  if (in.bytes(4) != kTableMagic) throw Error(ErrorCode::MalformedHeader, "bad magic");
  auto version = in.u32();
  if (version != kTableVersion) {
    throw Error(ErrorCode::MalformedHeader, "unsupported version " + std::to_string(version));
  }
  auto count = in.u32();
  auto dim = in.u32();
  auto modality = in.u8();
  if (dim == 0) throw Error(ErrorCode::MalformedHeader, "dim must be positive");
  if (modality > 1) throw Error(ErrorCode::MalformedHeader, "unknown modality byte");

  // Every record needs at least 2 + dim*4 bytes; reject counts the file cannot hold
  // before allocating.
  const std::uint64_t min_record = 2 + std::uint64_t{dim} * 4;
  if (std::uint64_t{count} * min_record > in.remaining()) {
    throw Error(ErrorCode::DimensionMismatch, "file too short for declared count and dim");
  }

  in.set_short_code(ErrorCode::DimensionMismatch);
  std::vector<std::string> ids;
  ids.reserve(count);
  Matrix<float> vectors(count, dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    auto len = in.u16();
    ids.emplace_back(in.bytes(len));
    auto row = vectors.row(r);
    for (std::uint32_t c = 0; c < dim; ++c) row[c] = in.f32();
  }
  if (in.remaining() != 0) {
    throw Error(ErrorCode::MalformedRecord,
                std::to_string(in.remaining()) + " trailing bytes after last record");
  }
  return EmbeddingTable(std::move(ids), std::move(vectors), static_cast<Modality>(modality));
}

std::string encode_binary(const EmbeddingTable& table) {
  detail::ByteWriter out;
  out.bytes(kTableMagic);
  out.u32(kTableVersion);
  out.u32(static_cast<std::uint32_t>(table.size()));
  out.u32(static_cast<std::uint32_t>(table.dim()));
  out.u8(static_cast<std::uint8_t>(table.modality()));
  for (std::size_t r = 0; r < table.size(); ++r) {
    const auto& id = table.ids()[r];
    out.u16(static_cast<std::uint16_t>(id.size()));
    out.bytes(id);
    for (float v : table.row(r)) out.f32(v);
  }
  return out.str();
}

std::string encode_tsv(const EmbeddingTable& table) {
  std::string out = "id\tdim=" + std::to_string(table.dim()) + "\n";
  char buf[64];
  for (std::size_t r = 0; r < table.size(); ++r) {
    out += table.ids()[r];
    out += '\t';
    bool first = true;
    for (float v : table.row(r)) {
      if (!first) out += ' ';
      first = false;
      auto res = std::to_chars(buf, buf + sizeof buf, v);
      out.append(buf, res.ptr);
    }
    out += '\n';
  }
  return out;
}

EmbeddingTable decode_tsv(std::string_view text, Modality modality) {
  auto lines = split_lines(text);
  if (lines.empty()) throw Error(ErrorCode::MalformedHeader, "missing header line");
  constexpr std::string_view kPrefix = "id\tdim=";
  std::string_view header = lines[0];
  if (!header.starts_with(kPrefix)) throw Error(ErrorCode::MalformedHeader, "expected 'id\\tdim=<d>'");
  auto dim_text = header.substr(kPrefix.size());
  std::size_t dim = 0;
  auto [p, ec] = std::from_chars(dim_text.data(), dim_text.data() + dim_text.size(), dim);
  if (ec != std::errc{} || p != dim_text.data() + dim_text.size() || dim == 0) {
    throw Error(ErrorCode::MalformedHeader, "bad dim in header");
  }

  std::vector<std::string> ids;
  std::vector<float> values;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    auto line = lines[ln];
    if (line.empty() && ln + 1 == lines.size()) break;
    auto tab = line.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorCode::MalformedRecord, "line " + std::to_string(ln + 1) + ": missing TAB");
    }
    ids.emplace_back(line.substr(0, tab));
    auto rest = line.substr(tab + 1);
    std::size_t n = 0;
    std::size_t pos = 0;
    while (pos < rest.size()) {
      if (rest[pos] == ' ') {
        ++pos;
        continue;
      }
      auto end = rest.find(' ', pos);
      if (end == std::string_view::npos) end = rest.size();
      float v = 0;
      auto tok = rest.substr(pos, end - pos);
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (r.ec == std::errc::result_out_of_range) {
        throw Error(ErrorCode::NonFiniteValue, "line " + std::to_string(ln + 1) + ": value out of float range");
      }
      if (r.ec != std::errc{} || r.ptr != tok.data() + tok.size()) {
        throw Error(ErrorCode::MalformedRecord,
                    "line " + std::to_string(ln + 1) + ": bad number '" + std::string(tok) + "'");
      }
      values.push_back(v);
      ++n;
      pos = end;
    }
    if (n != dim) {
      throw Error(ErrorCode::DimensionMismatch, "line " + std::to_string(ln + 1) + ": " +
                                                    std::to_string(n) + " values, expected " +
                                                    std::to_string(dim));
    }
  }
  Matrix<float> vectors(ids.size(), dim);
  std::copy(values.begin(), values.end(), vectors.flat().begin());
  return EmbeddingTable(std::move(ids), std::move(vectors), modality);
}

}  // namespace

std::string_view to_string(Modality m) { return m == Modality::text ? "text" : "image"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::dev: return "dev";
    case Split::test: return "test";
  }
  return "?";
}

std::optional<Split> parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "dev") return Split::dev;
  if (s == "test") return Split::test;
  return std::nullopt;
}

EmbeddingTable::EmbeddingTable(std::vector<std::string> ids, Matrix<float> vectors, Modality modality,
                               std::optional<std::string> language)
    : ids_(std::move(ids)), vectors_(std::move(vectors)), modality_(modality), language_(std::move(language)) {
  if (vectors_.cols() == 0) throw Error(ErrorCode::DimensionMismatch, "dim must be positive");
  if (ids_.size() != vectors_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, std::to_string(ids_.size()) + " ids for " +
                                                  std::to_string(vectors_.rows()) + " rows");
  }
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    check_id(ids_[i]);
    if (!index_.emplace(ids_[i], i).second) throw Error(ErrorCode::DuplicateId, ids_[i]);
  }
  for (std::size_t r = 0; r < vectors_.rows(); ++r) {
    for (float v : vectors_.row(r)) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "row '" + ids_[r] + "'");
    }
  }
}

EmbeddingTable EmbeddingTable::empty(std::size_t dim, Modality modality) {
  return EmbeddingTable({}, Matrix<float>(0, dim), modality);
}

std::optional<std::size_t> EmbeddingTable::find(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

bool operator==(const EmbeddingTable& a, const EmbeddingTable& b) {
  return a.modality_ == b.modality_ && a.ids_ == b.ids_ && a.vectors_.rows() == b.vectors_.rows() &&
         a.vectors_.cols() == b.vectors_.cols() &&
         std::memcmp(a.vectors_.data(), b.vectors_.data(), a.vectors_.size() * sizeof(float)) == 0;
}

std::string encode_table(const EmbeddingTable& table, TableFormat format) {
  return format == TableFormat::binary ? encode_binary(table) : encode_tsv(table);
}

EmbeddingTable decode_table(std::string_view bytes, TableFormat format, Modality tsv_modality) {
  return format == TableFormat::binary ? decode_binary(bytes) : decode_tsv(bytes, tsv_modality);
}

EmbeddingTable load_table(const std::filesystem::path& path, TableFormat format, Modality tsv_modality) {
  return decode_table(read_file(path), format, tsv_modality);
}

EmbeddingTable load_table_auto(const std::filesystem::path& path, Modality tsv_modality) {
  auto bytes = read_file(path);
  auto format = std::string_view(bytes).starts_with(kTableMagic) ? TableFormat::binary : TableFormat::tsv;
  return decode_table(bytes, format, tsv_modality);
}

void save_table(const EmbeddingTable& table, const std::filesystem::path& path, TableFormat format) {
  if (format == TableFormat::binary) {
    if (table.size() > UINT32_MAX || table.dim() > UINT32_MAX) {
      throw Error(ErrorCode::IoFailure, "table too large for binary format");
    }
    for (const auto& id : table.ids()) {
      if (id.size() > UINT16_MAX) throw Error(ErrorCode::IoFailure, "id longer than 65535 bytes");
    }
  }
  write_file_atomically(path, encode_table(table, format));
}

EmbeddingTable l2_normalized(const EmbeddingTable& table) {
  Matrix<float> out = table.vectors();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    double sq = 0;
    for (float v : row) sq += double{v} * v;
    if (sq == 0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (float& v : row) v = static_cast<float>(v * inv);
  }
  return EmbeddingTable(table.ids(), std::move(out), table.modality(), table.language());
}

PairManifest parse_manifest(std::string_view text) {
  PairManifest manifest;
  std::set<std::tuple<Split, std::string, std::string>> seen;
  auto lines = split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    auto line = lines[ln];
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> cols;
    std::size_t start = 0;
    while (true) {
      auto tab = line.find('\t', start);
      cols.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
      if (tab == std::string_view::npos) break;
      start = tab + 1;
    }
    const auto where = "line " + std::to_string(ln + 1);
    if (cols.size() != 4) {
      throw Error(ErrorCode::MalformedRow, where + ": expected 4 columns, got " + std::to_string(cols.size()));
    }
    for (auto c : cols) {
      if (c.empty()) throw Error(ErrorCode::MalformedRow, where + ": empty column");
    }
    auto split = parse_split(cols[3]);
    if (!split) throw Error(ErrorCode::UnknownSplit, where + ": '" + std::string(cols[3]) + "'");
    PairRecord rec{std::string(cols[0]), std::string(cols[1]), std::string(cols[2]), *split};
    if (!seen.emplace(rec.split, rec.caption_id, rec.image_id).second) {
      throw Error(ErrorCode::DuplicatePair, where + ": (" + rec.caption_id + ", " + rec.image_id +
                                                ") repeated within split " + std::string(to_string(rec.split)));
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

PairManifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file(path)); }

std::string format_manifest(const PairManifest& manifest) {
  std::string out;
  for (const auto& r : manifest.records) {
    out += r.caption_id + '\t' + r.image_id + '\t' + r.language + '\t' + std::string(to_string(r.split)) + '\n';
  }
  return out;
}

PairedDataset assemble_dataset(const PairManifest& manifest, const EmbeddingTable& texts,
                               const EmbeddingTable& images, Split split,
                               const std::optional<std::string>& language) {
  std::vector<std::size_t> text_rows;
  std::vector<std::size_t> image_rows;
  PairedDataset ds;
  for (const auto& rec : manifest.records) {
    if (rec.split != split) continue;
    if (language && rec.language != *language) continue;
    auto t = texts.find(rec.caption_id);
    if (!t) throw Error(ErrorCode::UnresolvedId, rec.caption_id);
    auto i = images.find(rec.image_id);
    if (!i) throw Error(ErrorCode::UnresolvedId, rec.image_id);
    text_rows.push_back(*t);
    image_rows.push_back(*i);
    ds.caption_ids.push_back(rec.caption_id);
    ds.image_ids.push_back(rec.image_id);
    ds.languages.push_back(rec.language);
  }
  ds.texts = gather_rows(texts.vectors(), text_rows);
  ds.images = gather_rows(images.vectors(), image_rows);
  return ds;
}

}  // namespace xmodal
