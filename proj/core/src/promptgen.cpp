#include "synthdet/promptgen.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "synthdet/error.hpp"
#include "synthdet/rng.hpp"

namespace synthdet::prompts {

// Generated at configure time from core/data/prompt_lexicon.json.
extern const char* const kEmbeddedLexicon;

namespace {

CategoryLexicon parse_category_lexicon(const nlohmann::json& j, bool face) {
  CategoryLexicon c;
  c.template_text = j.at("template").get<std::string>();
  c.slot_order = j.at("slot_order").get<std::vector<std::string>>();
  c.slots = j.at("slots").get<std::map<std::string, std::vector<std::string>>>();
  c.suffix = j.at("suffix").get<std::string>();
  c.negative = j.at("negative").get<std::string>();
  if (face) {
    c.baby_template = j.at("baby_template").get<std::string>();
    c.baby_slots = j.at("baby_slots").get<std::vector<std::string>>();
    c.baby_value = j.at("baby_value").get<std::string>();
  }
  for (const auto& name : c.slot_order)
    if (!c.slots.contains(name) || c.slots.at(name).empty())
      fail(ErrorCode::ParseError, "lexicon slot '" + name + "' has no values");
  return c;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

PromptSpec finish(Category category, std::uint64_t seed, std::map<std::string, std::string> slots,
                  std::string_view template_text, const CategoryLexicon& lex) {
  PromptSpec spec;
  spec.category = category;
  spec.seed = seed;
  spec.positive_text = render(template_text, slots) + ", " + lex.suffix;
  spec.negative_text = lex.negative;
  spec.filled_slots = std::move(slots);
  return spec;
}

}  // namespace

std::string_view to_string(Category c) { return c == Category::Painting ? "painting" : "face"; }

Category parse_category(std::string_view s) {
  if (s == "painting") return Category::Painting;
  if (s == "face") return Category::Face;
  fail(ErrorCode::InvalidArgument, "unknown prompt category: " + std::string(s));
}

Lexicon parse_lexicon(std::string_view json_text) {
  try {
    const auto j = nlohmann::json::parse(json_text);
    Lexicon lex;
    lex.version = j.at("version").get<int>();
    lex.transcription_verified = j.value("transcription_verified", false);
    lex.painting = parse_category_lexicon(j.at("painting"), false);
    lex.face = parse_category_lexicon(j.at("face"), true);
    return lex;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("invalid prompt lexicon: ") + e.what());
  }
}

const Lexicon& default_lexicon() {
  static const Lexicon lex = parse_lexicon(kEmbeddedLexicon);
  return lex;
}

Lexicon load_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_lexicon(buffer.str());
}

std::string render(std::string_view template_text,
                   const std::map<std::string, std::string>& slots) {
  std::string out;
  std::size_t pos = 0;
  while (pos < template_text.size()) {
    const auto open = template_text.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(template_text.substr(pos));
      break;
    }
    const auto close = template_text.find('}', open);
    if (close == std::string_view::npos)
      fail(ErrorCode::InvalidArgument, "unterminated placeholder in template");
    out.append(template_text.substr(pos, open - pos));
    const std::string name(template_text.substr(open + 1, close - open - 1));
    const auto it = slots.find(name);
    if (it == slots.end()) fail(ErrorCode::InvalidArgument, "no value for slot '" + name + "'");
    out.append(it->second);
    pos = close + 1;
  }
  return out;
}

PromptSpec build_painting_prompt(std::uint64_t seed, const Lexicon& lexicon) {
  const auto& lex = lexicon.painting;
  Rng rng(seed);
  std::map<std::string, std::string> slots;
  for (const auto& name : lex.slot_order) {
    const auto& values = lex.slots.at(name);
    slots[name] = values[rng.index(values.size())];
  }
  return finish(Category::Painting, seed, std::move(slots), lex.template_text, lex);
}

PromptSpec build_face_prompt(std::uint64_t seed, const Lexicon& lexicon) {
  const auto& lex = lexicon.face;
  Rng rng(seed);
  std::map<std::string, std::string> slots;
  for (const auto& name : lex.slot_order) {
    const auto& values = lex.slots.at(name);
    slots[name] = values[rng.index(values.size())];
  }
  if (slots.at("age") == lex.baby_value) {
    std::erase_if(slots, [&](const auto& kv) {
      return std::find(lex.baby_slots.begin(), lex.baby_slots.end(), kv.first) ==
             lex.baby_slots.end();
    });
    return finish(Category::Face, seed, std::move(slots), lex.baby_template, lex);
  }
  return finish(Category::Face, seed, std::move(slots), lex.template_text, lex);
}

std::vector<PromptSpec> generate(Category category, std::size_t count, std::uint64_t seed,
                                 const Lexicon& lexicon) {
  std::vector<PromptSpec> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = derive_seed(seed, static_cast<std::uint64_t>(i));
    out.push_back(category == Category::Painting ? build_painting_prompt(s, lexicon)
                                                 : build_face_prompt(s, lexicon));
  }
  return out;
}

std::string format_tag_prompt(std::span<const std::string> tags) {
  std::string out;
  for (const auto& raw : tags) {
    std::string tag = trim(raw);
    if (tag.empty()) continue;
    std::replace(tag.begin(), tag.end(), '_', ' ');
    if (!out.empty()) out += ", ";
    out += tag;
  }
  return out;
}

std::vector<std::string> read_tag_prompts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot read " + path.string());
  std::vector<std::string> prompts;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> tags;
    std::stringstream ss(line);
    std::string tag;
    while (std::getline(ss, tag, ',')) tags.push_back(tag);
    auto prompt = format_tag_prompt(tags);
    if (!prompt.empty()) prompts.push_back(std::move(prompt));
  }
  return prompts;
}

}  // namespace synthdet::prompts
