#include "synthdet/labels.hpp"

#include "synthdet/error.hpp"

namespace synthdet {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InsufficientSource: return "InsufficientSource";
    case ErrorCode::NonIntegerQuota: return "NonIntegerQuota";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidImage: return "InvalidImage";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::InvalidQuality: return "InvalidQuality";
    case ErrorCode::CropExceedsImage: return "CropExceedsImage";
    case ErrorCode::WrongMode: return "WrongMode";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyStream: return "EmptyStream";
    case ErrorCode::ConfigMismatch: return "ConfigMismatch";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::DegenerateBatch: return "DegenerateBatch";
    case ErrorCode::ChunkTooLarge: return "ChunkTooLarge";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::DataExhausted: return "DataExhausted";
    case ErrorCode::UnbalancedCalibration: return "UnbalancedCalibration";
    case ErrorCode::InsufficientData: return "InsufficientData";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::UnknownCommand: return "UnknownCommand";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
  }
  return "Unknown";
}

std::string_view to_string(Source s) {
  return s == Source::Real ? "real" : "synthetic";
}

std::string_view to_string(ContentType c) {
  switch (c) {
    case ContentType::Photo: return "photo";
    case ContentType::Painting: return "painting";
    case ContentType::Face: return "face";
    case ContentType::Uncategorized: return "uncategorized";
  }
  return "?";
}

std::string_view to_string(GeneratorGroup g) {
  switch (g) {
    case GeneratorGroup::Real: return "real";
    case GeneratorGroup::GAN: return "GAN";
    case GeneratorGroup::SD: return "SD";
    case GeneratorGroup::Midjourney: return "Midjourney";
    case GeneratorGroup::DALLE3: return "DALLE3";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Test: return "test";
    case Split::Calibration: return "calibration";
  }
  return "?";
}

std::optional<Source> parse_source(std::string_view s) {
  if (s == "real") return Source::Real;
  if (s == "synthetic") return Source::Synthetic;
  return std::nullopt;
}

std::optional<ContentType> parse_content_type(std::string_view s) {
  for (auto c : kAllContentTypes)
    if (to_string(c) == s) return c;
  return std::nullopt;
}

std::optional<GeneratorGroup> parse_generator_group(std::string_view s) {
  if (s == "real") return GeneratorGroup::Real;
  for (auto g : kSyntheticGroups)
    if (to_string(g) == s) return g;
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view s) {
  for (auto sp : {Split::Train, Split::Test, Split::Calibration})
    if (to_string(sp) == s) return sp;
  return std::nullopt;
}

std::optional<int> model_id_class(GeneratorGroup g) {
  if (g == GeneratorGroup::Real) return std::nullopt;
  return static_cast<int>(g) - 1;
}

GeneratorGroup group_from_model_id_class(int cls) {
  if (cls < 0 || cls >= kModelIdClasses)
    fail(ErrorCode::OutOfRange, "model-id class out of range: " + std::to_string(cls));
  return static_cast<GeneratorGroup>(cls + 1);
}

}  // namespace synthdet
