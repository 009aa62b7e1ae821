#include "cmlm/prompts.hpp"

#include <algorithm>
#include <array>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cmlm/error.hpp"

namespace cmlm {
namespace {

constexpr std::array<std::string_view, 5> kHoleNames = {"prefix", "postfix", "text", "prompt", "image"};

struct Piece {
  bool hole = false;
  std::string value;  // literal text or hole name
};

// A `{` starts a hole only when a known name and `}` follow; every other
// brace is literal.
std::vector<Piece> split_template(std::string_view text) {
  std::vector<Piece> pieces;
  std::string literal;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      const std::size_t close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string_view name = text.substr(i + 1, close - i - 1);
        if (std::find(kHoleNames.begin(), kHoleNames.end(), name) != kHoleNames.end()) {
          if (!literal.empty()) pieces.push_back({false, std::move(literal)});
          literal.clear();
          pieces.push_back({true, std::string(name)});
          i = close + 1;
          continue;
        }
      }
    }
    literal += text[i++];
  }
  if (!literal.empty()) pieces.push_back({false, std::move(literal)});
  return pieces;
}

std::string join_image_tokens(const Vocab& vocab, std::span<const TokenId> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (vocab.image_index(tokens[i]) < 0) {
      throw Error("prompts", "token " + std::to_string(tokens[i]) + " is not an image token");
    }
    if (i) out += ' ';
    out += vocab.render(tokens[i]);
  }
  return out;
}

PromptTemplate make(std::string name, std::string text, DecodeMode mode) {
  return {std::move(name), std::move(text), mode};
}

}  // namespace

std::string_view to_string(DecodeMode mode) {
  switch (mode) {
    case DecodeMode::sample: return "sample";
    case DecodeMode::beam: return "beam";
    case DecodeMode::score: return "score";
    case DecodeMode::constrained: return "constrained";
    case DecodeMode::size_hint: return "size_hint";
  }
  return "sample";
}

DecodeMode parse_decode_mode(std::string_view name) {
  for (DecodeMode m : {DecodeMode::sample, DecodeMode::beam, DecodeMode::score, DecodeMode::constrained,
                       DecodeMode::size_hint}) {
    if (to_string(m) == name) return m;
  }
  throw Error("prompts", "unknown decode mode '" + std::string(name) + "'");
}

std::vector<std::string> PromptTemplate::holes() const {
  std::vector<std::string> names;
  for (const Piece& p : split_template(text)) {
    if (p.hole && std::find(names.begin(), names.end(), p.value) == names.end()) names.push_back(p.value);
  }
  return names;
}

std::string PromptTemplate::render(const std::map<std::string, std::string>& values) const {
  const auto names = holes();
  for (const auto& [key, value] : values) {
    if (std::find(names.begin(), names.end(), key) == names.end()) {
      throw Error("prompts", "template '" + name + "' has no hole {" + key + "}");
    }
  }
  std::string out;
  for (const Piece& p : split_template(text)) {
    if (!p.hole) {
      out += p.value;
      continue;
    }
    const auto it = values.find(p.value);
    if (it == values.end()) throw Error("prompts", "template '" + name + "' needs a value for {" + p.value + "}");
    out += it->second;
  }
  return out;
}

const std::map<std::string, PromptTemplate>& builtin_templates() {
  static const std::map<std::string, PromptTemplate> templates = [] {
    std::map<std::string, PromptTemplate> m;
    for (PromptTemplate t : {
             make("image_unconditional_a", "<img", DecodeMode::sample),
             make("image_unconditional_b", "<img src=\"", DecodeMode::sample),
             make("image_infill", "<img src=\"{prefix}<mask:0>{postfix}\"><mask:0>", DecodeMode::sample),
             make("image_infill_conditional",
                  "<img alt=\"Photo: {text}\" src=\"{prefix}<mask:0>{postfix}\"><mask:0>", DecodeMode::sample),
             make("image_conditional", "<img alt=\"{prompt}", DecodeMode::sample),
             make("caption_masked", "<img alt=\"Photo: A photo taken of<mask:0>\" src=\"{image}\">",
                  DecodeMode::beam),
             make("caption_causal", "<img src=\"{image}\" title=\"Photo: A photo taken of", DecodeMode::beam),
             make("entity", "{prefix}<a title=\"<mask:0>\">{text}</a>{postfix}<mask:0>", DecodeMode::score),
             make("summarize", "<html><head><title><mask:0></title></head><body>{text}</body></html><mask:0>",
                  DecodeMode::size_hint),
         }) {
      std::string key = t.name;
      m.emplace(std::move(key), std::move(t));
    }
    return m;
  }();
  return templates;
}

const PromptTemplate& builtin_template(std::string_view name) {
  const auto& all = builtin_templates();
  const auto it = all.find(std::string(name));
  if (it == all.end()) throw Error("prompts", "unknown template '" + std::string(name) + "'");
  return it->second;
}

std::vector<PromptTemplate> load_templates(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("prompts", "cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("prompts", path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw Error("prompts", path.string() + ": expected a JSON array");
  std::vector<PromptTemplate> out;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("name") || !item.contains("text")) {
      throw Error("prompts", path.string() + ": every template needs a name and a text");
    }
    PromptTemplate t{item["name"].get<std::string>(), item["text"].get<std::string>(), DecodeMode::sample};
    if (item.contains("mode")) t.mode = parse_decode_mode(item["mode"].get<std::string>());
    for (const auto& prior : out) {
      if (prior.name == t.name) throw Error("prompts", "duplicate template '" + t.name + "'");
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::pair<std::string, std::string> unconditional_image() {
  return {builtin_template("image_unconditional_a").text, builtin_template("image_unconditional_b").text};
}

std::string infill_image(const Vocab& vocab, std::span<const TokenId> prefix, std::span<const TokenId> postfix,
                         const std::optional<std::string>& caption) {
  if (prefix.size() + postfix.size() >= 256) {
    throw Error("prompts", "prefix and postfix hold " + std::to_string(prefix.size() + postfix.size()) +
                               " image tokens; at most 255 leave room to infill");
  }
  std::string pre = join_image_tokens(vocab, prefix);
  if (!pre.empty()) pre += ' ';
  std::string post = join_image_tokens(vocab, postfix);
  if (!post.empty()) post.insert(post.begin(), ' ');
  if (caption) {
    return builtin_template("image_infill_conditional").render({{"prefix", pre}, {"postfix", post}, {"text", *caption}});
  }
  return builtin_template("image_infill").render({{"prefix", pre}, {"postfix", post}});
}

std::string conditional_image(std::string_view text) {
  return builtin_template("image_conditional").render({{"prompt", std::string(text)}});
}

CaptionPrompts caption_prompts(const Vocab& vocab, std::span<const TokenId> image) {
  if (image.size() != 256) {
    throw Error("prompts", "caption prompts need 256 image tokens, got " + std::to_string(image.size()));
  }
  const std::string src = join_image_tokens(vocab, image);
  return {builtin_template("caption_masked").render({{"image", src}}),
          builtin_template("caption_causal").render({{"image", src}})};
}

std::string entity_prompt(std::string_view left, std::string_view mention, std::string_view right) {
  if (mention.empty()) throw Error("prompts", "entity mention must not be empty");
  return builtin_template("entity").render(
      {{"prefix", std::string(left)}, {"text", std::string(mention)}, {"postfix", std::string(right)}});
}

std::string entity_target(std::string_view prompt, std::string_view candidate) {
  std::string out(prompt);
  if (!candidate.empty()) {
    out += ' ';
    out += candidate;
  }
  return out;
}

std::string summarize_prompt(std::string_view article_html) {
  return builtin_template("summarize").render({{"text", std::string(article_html)}});
}

}  // namespace cmlm
