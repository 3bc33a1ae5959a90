#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace synthdet::prompts {

enum class Category { Painting, Face };

std::string_view to_string(Category c);
Category parse_category(std::string_view s);

struct CategoryLexicon {
  std::string template_text;
  std::string baby_template;  // face only
  std::vector<std::string> slot_order;
  std::vector<std::string> baby_slots;  // face only
  std::string baby_value;               // face only
  std::map<std::string, std::vector<std::string>> slots;
  std::string suffix;
  std::string negative;
};

/// Slot vocabularies, sentence templates, positive suffixes and negative
/// prompts. The shipped copy lives in core/data/prompt_lexicon.json.
struct Lexicon {
  int version = 0;
  bool transcription_verified = false;
  CategoryLexicon painting;
  CategoryLexicon face;

  const CategoryLexicon& of(Category c) const { return c == Category::Painting ? painting : face; }
};

const Lexicon& default_lexicon();
Lexicon parse_lexicon(std::string_view json_text);
Lexicon load_lexicon(const std::filesystem::path& path);

struct PromptSpec {
  Category category = Category::Painting;
  std::map<std::string, std::string> filled_slots;
  std::string positive_text;
  std::string negative_text;
  std::uint64_t seed = 0;

  bool operator==(const PromptSpec&) const = default;
};

/// Replaces each `{slot}` placeholder with its value. Throws InvalidArgument
/// on a placeholder without a value.
std::string render(std::string_view template_text, const std::map<std::string, std::string>& slots);

PromptSpec build_painting_prompt(std::uint64_t seed, const Lexicon& lexicon = default_lexicon());
/// A baby draw keeps only the age, gender and skin-color slots.
PromptSpec build_face_prompt(std::uint64_t seed, const Lexicon& lexicon = default_lexicon());

/// `count` prompts; prompt i uses a seed derived from (seed, i).
std::vector<PromptSpec> generate(Category category, std::size_t count, std::uint64_t seed,
                                 const Lexicon& lexicon = default_lexicon());

/// Tag-list prompting: each non-empty line of a user tag file becomes one
/// prompt, tags split on commas, trimmed, underscores shown as spaces.
std::vector<std::string> read_tag_prompts(const std::filesystem::path& path);
std::string format_tag_prompt(std::span<const std::string> tags);

}  // namespace synthdet::prompts
