#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "synthdet/labels.hpp"

namespace synthdet::manifest {

/// One image with its four labels and split assignment. Images themselves are
/// never stored; `path` is resolved by an ImageStore.
struct ImageRecord {
  std::string id;
  std::string path;
  Source source = Source::Real;
  ContentType content_type = ContentType::Photo;
  GeneratorGroup generator_group = GeneratorGroup::Real;
  std::string generator{kRealGenerator};
  std::string origin_dataset;
  Split split = Split::Train;

  bool operator==(const ImageRecord&) const = default;
};

inline constexpr int kSchemaVersion = 1;

struct Manifest {
  std::vector<ImageRecord> records;
  std::uint64_t seed = 0;
  int schema_version = kSchemaVersion;

  bool operator==(const Manifest&) const = default;
};

/// One row of a dataset structure: a (content type, generator, origin) cell
/// and its share of the total, in integer weight units.
struct QuotaRow {
  ContentType content_type;
  GeneratorGroup group;
  std::string generator;
  std::string origin_dataset;
  std::string slug;  // directory name inside a sources tree
  std::int64_t weight;

  Source source() const {
    return group == GeneratorGroup::Real ? Source::Real : Source::Synthetic;
  }
};

struct Structure {
  std::string name;
  std::vector<QuotaRow> rows;

  std::int64_t weight_of(ContentType c) const;
  const QuotaRow* find_row(ContentType c, std::string_view generator,
                           std::string_view origin) const;
};

/// The full layout: photos 30%, paintings 22.5%, faces 22.5%,
/// uncategorized 25%, real and synthetic halves per type. Weights are in
/// units of 1/320 of the total.
const Structure& full_structure();
/// Photos only: a real cell holding half the images, plus GAN and SD cells.
const Structure& toy_structure();
/// Photo/painting/face, each with one real and one SD cell; used by the
/// content-type ablation at desk scale.
const Structure& toy_content_structure();
/// Lookup by name: "full", "toy", "toy-content".
const Structure& structure_by_name(std::string_view name);

struct ListingKey {
  ContentType content_type;
  std::string generator;
  std::string origin_dataset;

  auto operator<=>(const ListingKey&) const = default;
};

using SourceListings = std::map<ListingKey, std::vector<std::string>>;

struct CellQuota {
  const QuotaRow* row;
  std::int64_t count;
};

/// Quotas for every row whose content type is present. Proportions are the
/// structure's weights renormalized over the present content types.
/// Throws NonIntegerQuota when a cell count is not an integer.
std::vector<CellQuota> compute_quotas(const Structure& structure, std::int64_t target_total,
                                      std::span<const ContentType> present);

/// Samples each cell's quota uniformly without replacement from its listing,
/// then assigns an 80/20 train/test split per cell.
Manifest build_manifest(const SourceListings& listings, std::int64_t target_total,
                        std::uint64_t seed, const Structure& structure = full_structure());

inline constexpr double kDefaultTrainFraction = 0.8;

/// Per (content type, generator, origin) cell: floor(n * fraction) records go
/// to train, the remainder to test. Existing calibration records are dropped.
Manifest split_manifest(const Manifest& m, double train_fraction, std::uint64_t seed);

/// Appends a calibration subset drawn from the train split: an equal count
/// per synthetic (content type, generator) stratum and, within each content
/// type, as many real records as synthetic ones. Replaces any previous
/// calibration records.
Manifest sample_calibration(const Manifest& m, std::int64_t total, std::uint64_t seed);

struct Violation {
  std::string kind;
  std::string cell;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  std::vector<std::string> warnings;

  bool ok() const { return violations.empty(); }
};

struct ValidationOptions {
  const Structure* structure = &full_structure();  // nullptr skips proportion checks
  double train_fraction = kDefaultTrainFraction;
  bool check_split = true;
};

ValidationReport validate_manifest(const Manifest& m, const ValidationOptions& options = {});

std::vector<ImageRecord> records_in(const Manifest& m, Split split);

/// Cell identifier "content_type/generator/origin".
std::string cell_key(const ImageRecord& r);

// Line-oriented text format: a header line, then one tab-separated record per
// line in ImageRecord field order.
void write_manifest(const Manifest& m, std::ostream& out);
Manifest read_manifest(std::istream& in);
std::string serialize(const Manifest& m);
void save_manifest(const Manifest& m, const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& path);

/// Lists `<root>/<content_type>/<slug>/*` for every row of the structure,
/// as paths relative to `root` (so `root` serves as the ImageStore data
/// root). Missing directories are skipped; files are sorted for determinism.
SourceListings scan_sources(const std::filesystem::path& root,
                            const Structure& structure = full_structure());

}  // namespace synthdet::manifest
