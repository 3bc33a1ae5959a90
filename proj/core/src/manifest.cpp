#include "synthdet/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::manifest {

namespace {

using CT = ContentType;
using GG = GeneratorGroup;

Structure make_synthdet() {
  // Weights in units of total/320: 7.5K of 200K is 12 units.
  return Structure{
      "full",
      {
          {CT::Photo, GG::Real, "none", "ImageNet", "imagenet", 12},
          {CT::Photo, GG::Real, "none", "LSUN", "lsun", 12},
          {CT::Photo, GG::Real, "none", "COCO", "coco", 24},
          {CT::Photo, GG::GAN, "StyleGAN-XL", "generated", "stylegan-xl", 12},
          {CT::Photo, GG::GAN, "ProGAN", "ForenSynths", "progan", 12},
          {CT::Photo, GG::SD, "SD-2.1/SDXL-1.0", "generated", "sd", 24},
          {CT::Painting, GG::Real, "none", "WikiArt", "wikiart", 18},
          {CT::Painting, GG::Real, "none", "Danbooru", "danbooru", 18},
          {CT::Painting, GG::GAN, "StyleGAN3", "generated", "stylegan3", 18},
          {CT::Painting, GG::SD, "SD-2.1/SDXL-1.0", "generated", "sd", 9},
          {CT::Painting, GG::SD, "AnimagineXL", "generated", "animagine-xl", 9},
          {CT::Face, GG::Real, "none", "FFHQ", "ffhq", 36},
          {CT::Face, GG::GAN, "StyleGAN-XL", "generated", "stylegan-xl", 18},
          {CT::Face, GG::SD, "SD-2.1/SDXL-1.0", "generated", "sd", 18},
          {CT::Uncategorized, GG::Real, "none", "Photozilla", "photozilla", 40},
          {CT::Uncategorized, GG::Midjourney, "Midjourney", "JourneyDB", "midjourney", 20},
          {CT::Uncategorized, GG::DALLE3, "DALLE3", "LAION-DALLE3", "dalle3", 20},
      }};
}

Structure make_toy() {
  return Structure{"toy",
                   {
                       {CT::Photo, GG::Real, "none", "procedural", "real", 2},
                       {CT::Photo, GG::GAN, "toy-gan", "procedural", "gan", 1},
                       {CT::Photo, GG::SD, "toy-sd", "procedural", "sd", 1},
                   }};
}

Structure make_toy_content() {
  Structure s{"toy-content", {}};
  for (auto c : {CT::Photo, CT::Painting, CT::Face}) {
    s.rows.push_back({c, GG::Real, "none", "procedural", "real", 1});
    s.rows.push_back({c, GG::SD, "toy-sd", "procedural", "sd", 1});
  }
  return s;
}

std::string row_key(const QuotaRow& r) {
  return std::string(to_string(r.content_type)) + "/" + r.generator + "/" + r.origin_dataset;
}

std::string stratum_key(const ImageRecord& r) {
  return std::string(to_string(r.content_type)) + "/" + r.generator;
}

std::vector<ContentType> present_types(const SourceListings& listings) {
  std::set<ContentType> seen;
  for (const auto& [key, files] : listings) seen.insert(key.content_type);
  return {seen.begin(), seen.end()};
}

// Partial Fisher-Yates: k distinct indices from [0, n), returned ascending.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.index(n - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string pad_index(std::size_t i) {
  std::string s = std::to_string(i);
  if (s.size() < 6) s.insert(0, 6 - s.size(), '0');
  return s;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

bool has_separator(const std::string& s) {
  return s.find_first_of("\t\r\n") != std::string::npos;
}

std::int64_t train_count(std::int64_t n, double fraction) {
  // The epsilon absorbs representation error of fractions such as 0.8.
  return static_cast<std::int64_t>(std::floor(static_cast<double>(n) * fraction + 1e-9));
}

}  // namespace

std::int64_t Structure::weight_of(ContentType c) const {
  std::int64_t w = 0;
  for (const auto& r : rows)
    if (r.content_type == c) w += r.weight;
  return w;
}

const QuotaRow* Structure::find_row(ContentType c, std::string_view generator,
                                    std::string_view origin) const {
  for (const auto& r : rows)
    if (r.content_type == c && r.generator == generator && r.origin_dataset == origin) return &r;
  return nullptr;
}

const Structure& full_structure() {
  static const Structure s = make_synthdet();
  return s;
}

const Structure& toy_structure() {
  static const Structure s = make_toy();
  return s;
}

const Structure& toy_content_structure() {
  static const Structure s = make_toy_content();
  return s;
}

const Structure& structure_by_name(std::string_view name) {
  if (name == "full") return full_structure();
  if (name == "toy") return toy_structure();
  if (name == "toy-content") return toy_content_structure();
  fail(ErrorCode::InvalidArgument, "unknown dataset structure: " + std::string(name));
}

std::vector<CellQuota> compute_quotas(const Structure& structure, std::int64_t target_total,
                                      std::span<const ContentType> present) {
  if (target_total < 0) fail(ErrorCode::InvalidArgument, "target_total must be non-negative");
  std::int64_t present_weight = 0;
  for (auto c : present) present_weight += structure.weight_of(c);
  if (present_weight == 0) {
    if (target_total != 0)
      fail(ErrorCode::InsufficientSource, "no listings for any content type of the structure");
    return {};
  }
  std::vector<CellQuota> quotas;
  for (const auto& row : structure.rows) {
    if (std::find(present.begin(), present.end(), row.content_type) == present.end()) continue;
    const std::int64_t scaled = target_total * row.weight;
    if (scaled % present_weight != 0)
      fail(ErrorCode::NonIntegerQuota,
           "cell " + row_key(row) + " quota " + std::to_string(target_total) + "*" +
               std::to_string(row.weight) + "/" + std::to_string(present_weight) +
               " is not an integer");
    quotas.push_back({&row, scaled / present_weight});
  }
  return quotas;
}

Manifest build_manifest(const SourceListings& listings, std::int64_t target_total,
                        std::uint64_t seed, const Structure& structure) {
  for (const auto& [key, files] : listings) {
    if (!structure.find_row(key.content_type, key.generator, key.origin_dataset))
      fail(ErrorCode::InvalidArgument, "listing does not match any cell of structure '" +
                                           structure.name + "': " +
                                           std::string(to_string(key.content_type)) + "/" +
                                           key.generator + "/" + key.origin_dataset);
  }
  const auto present = present_types(listings);
  const auto quotas = compute_quotas(structure, target_total, present);

  Manifest m;
  m.seed = seed;
  for (const auto& [row, count] : quotas) {
    const ListingKey key{row->content_type, row->generator, row->origin_dataset};
    const auto it = listings.find(key);
    const std::size_t available = it == listings.end() ? 0 : it->second.size();
    if (available == 0 || static_cast<std::int64_t>(available) < count)
      fail(ErrorCode::InsufficientSource, "cell " + row_key(*row) + " needs " +
                                              std::to_string(count) + " files, listing has " +
                                              std::to_string(available));
    Rng rng(derive_seed(seed, "build:" + row_key(*row)));
    const auto chosen = sample_indices(available, static_cast<std::size_t>(count), rng);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
      ImageRecord r;
      r.id = std::string(to_string(row->content_type)) + "-" + row->slug + "-" +
             (row->group == GeneratorGroup::Real ? "real" : "syn") + "-" + pad_index(i);
      r.path = it->second[chosen[i]];
      r.source = row->source();
      r.content_type = row->content_type;
      r.generator_group = row->group;
      r.generator = row->generator;
      r.origin_dataset = row->origin_dataset;
      r.split = Split::Train;
      m.records.push_back(std::move(r));
    }
  }
  return split_manifest(m, kDefaultTrainFraction, seed);
}

Manifest split_manifest(const Manifest& m, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorCode::InvalidArgument, "train_fraction must lie in (0, 1)");
  Manifest out;
  out.seed = m.seed;
  out.schema_version = m.schema_version;
  for (const auto& r : m.records)
    if (r.split != Split::Calibration) out.records.push_back(r);

  std::map<std::string, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < out.records.size(); ++i) cells[cell_key(out.records[i])].push_back(i);

  for (auto& [key, members] : cells) {
    Rng rng(derive_seed(seed, "split:" + key));
    std::vector<std::size_t> order = members;
    rng.shuffle(std::span<std::size_t>(order));
    const auto n_train = train_count(static_cast<std::int64_t>(order.size()), train_fraction);
    for (std::size_t k = 0; k < order.size(); ++k)
      out.records[order[k]].split =
          static_cast<std::int64_t>(k) < n_train ? Split::Train : Split::Test;
  }
  return out;
}

Manifest sample_calibration(const Manifest& m, std::int64_t total, std::uint64_t seed) {
  if (total < 0 || total % 2 != 0)
    fail(ErrorCode::InvalidArgument, "calibration total must be a non-negative even number");
  Manifest out;
  out.seed = m.seed;
  out.schema_version = m.schema_version;
  for (const auto& r : m.records)
    if (r.split != Split::Calibration) out.records.push_back(r);
  if (total == 0) return out;

  std::map<std::string, std::vector<std::size_t>> synthetic;  // stratum -> train indices
  std::map<ContentType, std::vector<std::size_t>> real;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& r = out.records[i];
    if (r.split != Split::Train) continue;
    if (r.source == Source::Synthetic)
      synthetic[stratum_key(r)].push_back(i);
    else
      real[r.content_type].push_back(i);
  }
  if (synthetic.empty())
    fail(ErrorCode::InsufficientSource, "train split has no synthetic records");
  const auto strata = static_cast<std::int64_t>(synthetic.size());
  if ((total / 2) % strata != 0)
    fail(ErrorCode::NonIntegerQuota, "calibration half " + std::to_string(total / 2) +
                                         " is not divisible by " + std::to_string(strata) +
                                         " synthetic strata");
  const std::int64_t per_stratum = total / 2 / strata;

  std::map<ContentType, std::int64_t> real_needed;
  std::vector<std::size_t> chosen;
  for (const auto& [key, members] : synthetic) {
    if (static_cast<std::int64_t>(members.size()) < per_stratum)
      fail(ErrorCode::InsufficientSource, "stratum " + key + " has " +
                                              std::to_string(members.size()) +
                                              " train records, needs " +
                                              std::to_string(per_stratum));
    Rng rng(derive_seed(seed, "calibration:" + key));
    for (auto k : sample_indices(members.size(), static_cast<std::size_t>(per_stratum), rng))
      chosen.push_back(members[k]);
    real_needed[out.records[members.front()].content_type] += per_stratum;
  }
  for (const auto& [type, need] : real_needed) {
    const auto& pool = real[type];
    if (static_cast<std::int64_t>(pool.size()) < need)
      fail(ErrorCode::InsufficientSource, "content type " + std::string(to_string(type)) +
                                              " has " + std::to_string(pool.size()) +
                                              " real train records, needs " +
                                              std::to_string(need));
    Rng rng(derive_seed(seed, "calibration:real:" + std::string(to_string(type))));
    for (auto k : sample_indices(pool.size(), static_cast<std::size_t>(need), rng))
      chosen.push_back(pool[k]);
  }
  std::sort(chosen.begin(), chosen.end());
  for (auto i : chosen) {
    ImageRecord r = out.records[i];
    r.split = Split::Calibration;
    out.records.push_back(std::move(r));
  }
  return out;
}

std::string cell_key(const ImageRecord& r) {
  return std::string(to_string(r.content_type)) + "/" + r.generator + "/" + r.origin_dataset;
}

std::vector<ImageRecord> records_in(const Manifest& m, Split split) {
  std::vector<ImageRecord> out;
  for (const auto& r : m.records)
    if (r.split == split) out.push_back(r);
  return out;
}

ValidationReport validate_manifest(const Manifest& m, const ValidationOptions& options) {
  ValidationReport report;
  auto violate = [&](std::string kind, std::string cell, std::string message) {
    report.violations.push_back({std::move(kind), std::move(cell), std::move(message)});
  };

  std::unordered_map<std::string, const ImageRecord*> by_id;
  std::vector<const ImageRecord*> main;
  std::vector<const ImageRecord*> calibration;
  for (const auto& r : m.records) {
    const bool real_source = r.source == Source::Real;
    const bool real_group = r.generator_group == GeneratorGroup::Real;
    const bool real_generator = r.generator == kRealGenerator;
    if (real_source != real_group || real_group != real_generator)
      violate("label_consistency", r.id,
              "source, generator group and generator disagree on real/synthetic");
    if (r.id.empty()) violate("record", cell_key(r), "empty id");
    if (r.split == Split::Calibration) {
      calibration.push_back(&r);
      continue;
    }
    main.push_back(&r);
    if (!by_id.emplace(r.id, &r).second) violate("duplicate_id", r.id, "id appears twice");
  }

  if (options.structure && !main.empty()) {
    const Structure& s = *options.structure;
    std::map<ContentType, std::int64_t> per_type;
    std::map<const QuotaRow*, std::int64_t> per_row;
    for (const auto* r : main) {
      ++per_type[r->content_type];
      const QuotaRow* row = s.find_row(r->content_type, r->generator, r->origin_dataset);
      if (!row)
        violate("unknown_cell", cell_key(*r), "record matches no cell of structure " + s.name);
      else
        ++per_row[row];
    }
    std::int64_t present_weight = 0;
    for (const auto& [type, count] : per_type) present_weight += s.weight_of(type);
    const auto total = static_cast<std::int64_t>(main.size());
    for (const auto& [type, count] : per_type) {
      if (count * present_weight != total * s.weight_of(type))
        violate("proportion", std::string(to_string(type)),
                std::to_string(count) + " of " + std::to_string(total) +
                    " records, expected share " + std::to_string(s.weight_of(type)) + "/" +
                    std::to_string(present_weight));
    }
    for (const auto& row : s.rows) {
      if (!per_type.contains(row.content_type)) continue;
      const std::int64_t count = per_row.contains(&row) ? per_row[&row] : 0;
      if (count * present_weight != total * row.weight)
        violate("cell_quota", row_key(row),
                std::to_string(count) + " records, expected share " + std::to_string(row.weight) +
                    "/" + std::to_string(present_weight));
    }
  }

  {
    std::map<ContentType, std::pair<std::int64_t, std::int64_t>> balance;
    for (const auto* r : main) {
      auto& [real, synthetic] = balance[r->content_type];
      (r->source == Source::Real ? real : synthetic)++;
    }
    for (const auto& [type, counts] : balance)
      if (counts.first != counts.second)
        violate("balance", std::string(to_string(type)),
                std::to_string(counts.first) + " real vs " + std::to_string(counts.second) +
                    " synthetic");
  }

  if (options.check_split && !main.empty()) {
    std::map<std::string, std::pair<std::int64_t, std::int64_t>> cells;
    for (const auto* r : main) {
      auto& [train, test] = cells[cell_key(*r)];
      (r->split == Split::Train ? train : test)++;
    }
    for (const auto& [key, counts] : cells) {
      const std::int64_t n = counts.first + counts.second;
      const double exact = static_cast<double>(n) * options.train_fraction;
      if (std::abs(exact - std::round(exact)) > 1e-9)
        report.warnings.push_back("cell " + key + ": " + std::to_string(n) + " x " +
                                  std::to_string(options.train_fraction) +
                                  " is not integral; floor goes to train");
      if (counts.first != train_count(n, options.train_fraction))
        violate("split_ratio", key,
                std::to_string(counts.first) + " train of " + std::to_string(n) + ", expected " +
                    std::to_string(train_count(n, options.train_fraction)));
    }
  }

  if (!calibration.empty()) {
    std::unordered_set<std::string> seen;
    std::map<std::string, std::int64_t> strata_counts;
    std::int64_t real_total = 0;
    std::int64_t synthetic_total = 0;
    for (const auto* c : calibration) {
      if (!seen.insert(c->id).second) violate("duplicate_id", c->id, "calibration id repeated");
      const auto it = by_id.find(c->id);
      bool matches = it != by_id.end() && it->second->split == Split::Train;
      if (matches) {
        ImageRecord expected = *it->second;
        expected.split = Split::Calibration;
        matches = expected == *c;
      }
      if (!matches)
        violate("calibration_subset", c->id, "calibration record is not a train record");
      if (c->source == Source::Synthetic) {
        ++strata_counts[stratum_key(*c)];
        ++synthetic_total;
      } else {
        ++real_total;
      }
    }
    for (const auto* r : main)
      if (r->split == Split::Train && r->source == Source::Synthetic)
        strata_counts.try_emplace(stratum_key(*r), 0);
    if (!strata_counts.empty()) {
      const auto reference = strata_counts.begin()->second;
      for (const auto& [key, count] : strata_counts)
        if (count != reference)
          violate("calibration_balance", key,
                  std::to_string(count) + " records, expected " + std::to_string(reference));
    }
    if (real_total != synthetic_total)
      violate("calibration_real_balance", "calibration",
              std::to_string(real_total) + " real vs " + std::to_string(synthetic_total) +
                  " synthetic");
  }
  return report;
}

void write_manifest(const Manifest& m, std::ostream& out) {
  out << "#synthdet-manifest\tschema_version=" << m.schema_version << "\tseed=" << m.seed << '\n';
  for (const auto& r : m.records) {
    for (const auto* field : {&r.id, &r.path, &r.generator, &r.origin_dataset})
      if (has_separator(*field))
        fail(ErrorCode::InvalidArgument, "record field contains a tab or newline: " + r.id);
    out << r.id << '\t' << r.path << '\t' << to_string(r.source) << '\t'
        << to_string(r.content_type) << '\t' << to_string(r.generator_group) << '\t'
        << r.generator << '\t' << r.origin_dataset << '\t' << to_string(r.split) << '\n';
  }
}

Manifest read_manifest(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::ParseError, "manifest is empty");
  const auto header = split_tabs(line);
  if (header.size() != 3 || header[0] != "#synthdet-manifest" ||
      !header[1].starts_with("schema_version=") || !header[2].starts_with("seed="))
    fail(ErrorCode::ParseError, "bad manifest header: " + line);
  Manifest m;
  try {
    m.schema_version = std::stoi(header[1].substr(15));
    m.seed = std::stoull(header[2].substr(5));
  } catch (const std::exception&) {
    fail(ErrorCode::ParseError, "bad manifest header values: " + line);
  }
  if (m.schema_version != kSchemaVersion)
    fail(ErrorCode::ParseError, "unsupported schema_version " + std::to_string(m.schema_version));

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    auto bad = [&](const std::string& what) {
      fail(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + what);
    };
    if (f.size() != 8) bad("expected 8 fields, got " + std::to_string(f.size()));
    ImageRecord r;
    r.id = f[0];
    r.path = f[1];
    const auto source = parse_source(f[2]);
    const auto type = parse_content_type(f[3]);
    const auto group = parse_generator_group(f[4]);
    const auto split = parse_split(f[7]);
    if (!source) bad("bad source '" + f[2] + "'");
    if (!type) bad("bad content_type '" + f[3] + "'");
    if (!group) bad("bad generator_group '" + f[4] + "'");
    if (!split) bad("bad split '" + f[7] + "'");
    r.source = *source;
    r.content_type = *type;
    r.generator_group = *group;
    r.generator = f[5];
    r.origin_dataset = f[6];
    r.split = *split;
    m.records.push_back(std::move(r));
  }
  return m;
}

std::string serialize(const Manifest& m) {
  std::ostringstream out;
  write_manifest(m, out);
  return out.str();
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  write_manifest(m, out);
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  return read_manifest(in);
}

SourceListings scan_sources(const std::filesystem::path& root, const Structure& structure) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) fail(ErrorCode::IoError, "not a directory: " + root.string());
  SourceListings listings;
  for (const auto& row : structure.rows) {
    const fs::path dir = root / std::string(to_string(row.content_type)) / row.slug;
    if (!fs::is_directory(dir)) continue;
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file()) files.push_back(entry.path().lexically_relative(root).generic_string());
    std::sort(files.begin(), files.end());
    if (!files.empty())
      listings[{row.content_type, row.generator, row.origin_dataset}] = std::move(files);
  }
  return listings;
}

}  // namespace synthdet::manifest
