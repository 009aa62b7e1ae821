#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "cmlm/vocab.hpp"

namespace cmlm {

// How a rendered prompt is meant to be decoded.
enum class DecodeMode { sample, beam, score, constrained, size_hint };

std::string_view to_string(DecodeMode mode);
DecodeMode parse_decode_mode(std::string_view name);

// Template text with named holes written as {name}. Recognized holes are
// prefix, postfix, text, prompt and image.
struct PromptTemplate {
  std::string name;
  std::string text;
  DecodeMode mode = DecodeMode::sample;

  // Hole names in order of first appearance.
  std::vector<std::string> holes() const;
  // Throws when a hole is missing from `values` or `values` names a hole the
  // template does not have.
  std::string render(const std::map<std::string, std::string>& values) const;
};

// The built-in set, keyed by name.
const std::map<std::string, PromptTemplate>& builtin_templates();
const PromptTemplate& builtin_template(std::string_view name);

// JSON array of {"name", "text", "mode"} objects.
std::vector<PromptTemplate> load_templates(const std::filesystem::path& path);

// `<img` and `<img src="`.
std::pair<std::string, std::string> unconditional_image();

// Image infilling. Prefix and postfix tokens are written space-joined, with a
// single space separating them from the <mask:0>.
std::string infill_image(const Vocab& vocab, std::span<const TokenId> prefix,
                         std::span<const TokenId> postfix,
                         const std::optional<std::string>& caption = std::nullopt);

std::string conditional_image(std::string_view text);

struct CaptionPrompts {
  std::string masked;
  std::string causal;
};

// Needs exactly 256 image tokens.
CaptionPrompts caption_prompts(const Vocab& vocab, std::span<const TokenId> image);

std::string entity_prompt(std::string_view left, std::string_view mention, std::string_view right);
// Appends " " + candidate, or nothing for an empty candidate.
std::string entity_target(std::string_view prompt, std::string_view candidate);

// Title infilling around an article, decoded with a size hint.
std::string summarize_prompt(std::string_view article_html);

}  // namespace cmlm
