#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "xmodal/matrix.hpp"

namespace xmodal {

enum class Modality : std::uint8_t { text = 0, image = 1 };
enum class TableFormat { binary, tsv };
enum class Split { train, dev, test };

std::string_view to_string(Modality m);
std::string_view to_string(Split s);
std::optional<Split> parse_split(std::string_view s);

/// Id-keyed matrix of embeddings. Immutable once constructed; the constructor
/// enforces every invariant, so a live EmbeddingTable is always valid.
///
/// Ids must be non-empty UTF-8 without TAB, CR or LF (so that the TSV form
/// can represent them) and unique. All values must be finite.
class EmbeddingTable {
 public:
  EmbeddingTable(std::vector<std::string> ids, Matrix<float> vectors, Modality modality,
                 std::optional<std::string> language = std::nullopt);

  /// Empty table of the given width.
  static EmbeddingTable empty(std::size_t dim, Modality modality);

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return vectors_.cols(); }
  Modality modality() const noexcept { return modality_; }
  const std::optional<std::string>& language() const noexcept { return language_; }

  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const Matrix<float>& vectors() const noexcept { return vectors_; }
  std::span<const float> row(std::size_t i) const { return vectors_.row(i); }

  std::optional<std::size_t> find(const std::string& id) const;

  friend bool operator==(const EmbeddingTable& a, const EmbeddingTable& b);

 private:
  std::vector<std::string> ids_;
  Matrix<float> vectors_;
  Modality modality_;
  std::optional<std::string> language_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Loads a table. TSV files carry no modality, so `tsv_modality` supplies it.
EmbeddingTable load_table(const std::filesystem::path& path, TableFormat format,
                          Modality tsv_modality = Modality::text);
/// Binary if the file starts with the XEMB magic, TSV otherwise.
EmbeddingTable load_table_auto(const std::filesystem::path& path,
                               Modality tsv_modality = Modality::text);
void save_table(const EmbeddingTable& table, const std::filesystem::path& path, TableFormat format);

// In-memory codecs behind load_table/save_table.
std::string encode_table(const EmbeddingTable& table, TableFormat format);
EmbeddingTable decode_table(std::string_view bytes, TableFormat format,
                            Modality tsv_modality = Modality::text);

/// Row-wise l2 normalization (rows with zero norm are left untouched).
EmbeddingTable l2_normalized(const EmbeddingTable& table);

struct PairRecord {
  std::string caption_id;
  std::string image_id;
  std::string language;
  Split split;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct PairManifest {
  std::vector<PairRecord> records;
};

PairManifest load_manifest(const std::filesystem::path& path);
PairManifest parse_manifest(std::string_view text);
std::string format_manifest(const PairManifest& manifest);

/// Text rows and image rows aligned by record: row i of `texts` embeds the
/// caption of record i and row i of `images` embeds its image.
struct PairedDataset {
  std::vector<std::string> caption_ids;
  std::vector<std::string> image_ids;
  std::vector<std::string> languages;
  Matrix<float> texts;
  Matrix<float> images;

  std::size_t size() const noexcept { return caption_ids.size(); }
  bool empty() const noexcept { return caption_ids.empty(); }
};

/// Gathers the records of `split` (optionally only those of `language`).
/// Throws Error(UnresolvedId) naming the first missing id.
PairedDataset assemble_dataset(const PairManifest& manifest, const EmbeddingTable& texts,
                               const EmbeddingTable& images, Split split,
                               const std::optional<std::string>& language = std::nullopt);

}  // namespace xmodal
