#pragma once

#include <cstdint>
#include <filesystem>
#include <list>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "synthdet/imgproc.hpp"
#include "synthdet/labels.hpp"
#include "synthdet/manifest.hpp"

namespace synthdet::data {

/// Resolves manifest paths to pixels. `toy://` URIs are rendered on demand;
/// relative paths are taken against the data root. Decoded images are kept
/// in a least-recently-used cache bounded by `cache_bytes`.
class ImageStore {
 public:
  explicit ImageStore(std::filesystem::path data_root = default_root(),
                      std::size_t cache_bytes = kDefaultCacheBytes);

  static constexpr std::size_t kDefaultCacheBytes = std::size_t{1} << 30;

  const std::filesystem::path& root() const { return root_; }
  imgproc::Image load(std::string_view path) const;
  imgproc::Image load(const manifest::ImageRecord& r) const { return load(r.path); }

  /// $SYNTHDET_DATA_ROOT when set, otherwise the working directory.
  static std::filesystem::path default_root();

 private:
  imgproc::Image load_uncached(std::string_view path) const;

  struct Cache {
    std::mutex mutex;
    std::list<std::pair<std::string, imgproc::Image>> entries;  // front = most recent
    std::unordered_map<std::string, decltype(entries)::iterator> index;
    std::size_t bytes = 0;
  };

  std::filesystem::path root_;
  std::size_t cache_bytes_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

// Procedural toy images. Every content type has its own scene generator and
// a faint benign texture; synthetic images additionally carry a periodic
// artifact whose geometry and color depend on (content type, generator
// group). Real and synthetic images share the scene distribution, so the
// artifact is the only label signal.

/// "toy://<content_type>/<slug>/<index>", index zero-padded to six digits.
std::string toy_uri(ContentType c, std::string_view slug, std::uint64_t index);
bool is_toy_uri(std::string_view path);
/// Deterministic in the URI. Sides are in [256, 320]. Throws ParseError on a
/// malformed URI.
imgproc::Image render_toy(std::string_view uri);
imgproc::Image render_toy(ContentType c, GeneratorGroup g, std::uint64_t seed);

/// `count_per_weight * row.weight` toy URIs for every row of the structure.
manifest::SourceListings toy_listings(const manifest::Structure& structure,
                                      std::int64_t count_per_weight);

struct ToyManifestSpec {
  std::string structure = "toy";
  std::int64_t total = 600;
  double train_fraction = 2.0 / 3.0;
  std::int64_t calibration_total = 0;  // 0 skips calibration sampling
  std::uint64_t seed = 0;
};

/// Toy listings sized for `spec.total`, then build, split and (optionally)
/// calibration sampling.
manifest::Manifest make_toy_manifest(const ToyManifestSpec& spec);

/// Renders toy listings into `<root>/<content_type>/<slug>/<index>.png`, the
/// layout read by manifest::scan_sources. Returns the number of files.
std::int64_t write_toy_sources(const std::filesystem::path& root,
                               const manifest::Structure& structure,
                               std::int64_t count_per_weight);

/// Epoch order alternating real and synthetic records, each class shuffled
/// with `seed`. Surplus records of the larger class go at the end.
std::vector<std::size_t> balanced_order(std::span<const manifest::ImageRecord> records,
                                        std::uint64_t seed);
/// Consecutive batches of `batch_size`; a final batch of one record is merged
/// into its predecessor so every batch holds at least two.
std::vector<std::vector<std::size_t>> make_batches(std::span<const std::size_t> order,
                                                   std::size_t batch_size);

/// Detection label (0 real, 1 synthetic) and model-ID class (-1 for reals).
std::int64_t detection_label(const manifest::ImageRecord& r);
std::int64_t generator_label(const manifest::ImageRecord& r);

}  // namespace synthdet::data
