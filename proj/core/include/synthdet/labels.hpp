#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace synthdet {

enum class Source { Real, Synthetic };
enum class ContentType { Photo, Painting, Face, Uncategorized };
enum class GeneratorGroup { Real, GAN, SD, Midjourney, DALLE3 };
enum class Split { Train, Test, Calibration };

inline constexpr std::array kAllContentTypes = {ContentType::Photo, ContentType::Painting,
                                                ContentType::Face, ContentType::Uncategorized};
inline constexpr std::array kSyntheticGroups = {GeneratorGroup::GAN, GeneratorGroup::SD,
                                                GeneratorGroup::Midjourney,
                                                GeneratorGroup::DALLE3};

/// Generator string used by every real record.
inline constexpr std::string_view kRealGenerator = "none";

std::string_view to_string(Source s);
std::string_view to_string(ContentType c);
std::string_view to_string(GeneratorGroup g);
std::string_view to_string(Split s);

std::optional<Source> parse_source(std::string_view s);
std::optional<ContentType> parse_content_type(std::string_view s);
std::optional<GeneratorGroup> parse_generator_group(std::string_view s);
std::optional<Split> parse_split(std::string_view s);

/// Index of a synthetic group among the model-identification classes
/// (GAN=0 ... DALLE3=3); nullopt for Real.
std::optional<int> model_id_class(GeneratorGroup g);
GeneratorGroup group_from_model_id_class(int cls);

inline constexpr int kModelIdClasses = static_cast<int>(kSyntheticGroups.size());

}  // namespace synthdet
