#include <doctest.h>

#include <regex>
#include <set>

#include "cmlm/prompts.hpp"
#include "support/fixtures.hpp"

using namespace cmlm;

namespace {

// Independent hole finder: {name} for the five recognized names.
std::vector<std::string> holes_by_regex(const std::string& text) {
  static const std::regex hole(R"(\{(prefix|postfix|text|prompt|image)\})");
  std::vector<std::string> out;
  for (auto it = std::sregex_iterator(text.begin(), text.end(), hole); it != std::sregex_iterator(); ++it) {
    const std::string name = (*it)[1];
    if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
  }
  return out;
}

std::vector<TokenId> image_run(const Vocab& v, int n, int offset = 0) {
  std::vector<TokenId> out;
  for (int i = 0; i < n; ++i) out.push_back(v.image_token((i + offset) % v.image_vocab_size()));
  return out;
}

}  // namespace

TEST_CASE("quoted prompts render exactly") {
  CHECK(unconditional_image() == std::pair<std::string, std::string>{"<img", "<img src=\""});
  CHECK(conditional_image("A red car in the mountains.") == "<img alt=\"A red car in the mountains.");

  CHECK(entity_prompt("Manetho writes that these kings ruled from ", "Memphis", "...") ==
        "Manetho writes that these kings ruled from <a title=\"<mask:0>\">Memphis</a>...<mask:0>");
  CHECK(entity_target(entity_prompt("Manetho writes that these kings ruled from ", "Memphis", "..."),
                      "Memphis, Egypt") ==
        "Manetho writes that these kings ruled from <a title=\"<mask:0>\">Memphis</a>...<mask:0> Memphis, Egypt");
  CHECK(entity_target("p", "") == "p");
  CHECK_THROWS_AS(entity_prompt("a", "", "b"), Error);

  CHECK(builtin_template("image_infill").text == "<img src=\"{prefix}<mask:0>{postfix}\"><mask:0>");
  CHECK(builtin_template("image_infill_conditional").text ==
        "<img alt=\"Photo: {text}\" src=\"{prefix}<mask:0>{postfix}\"><mask:0>");
  CHECK(builtin_template("caption_masked").text == "<img alt=\"Photo: A photo taken of<mask:0>\" src=\"{image}\">");
  CHECK(builtin_template("caption_causal").text == "<img src=\"{image}\" title=\"Photo: A photo taken of");
  CHECK(builtin_template("image_conditional").render({{"prompt", "A red car in the mountains."}}) ==
        "<img alt=\"A red car in the mountains.");
  CHECK_THROWS_AS(builtin_template("nope"), Error);
}

TEST_CASE("image prompts") {
  const Vocab v(32);
  const auto prefix = image_run(v, 3);
  const auto postfix = image_run(v, 2, 5);
  CHECK(infill_image(v, prefix, postfix) == "<img src=\"IMG0 IMG1 IMG2 <mask:0> IMG5 IMG6\"><mask:0>");
  CHECK(infill_image(v, {}, postfix) == "<img src=\"<mask:0> IMG5 IMG6\"><mask:0>");
  CHECK(infill_image(v, prefix, {}, std::string("a dog")) ==
        "<img alt=\"Photo: a dog\" src=\"IMG0 IMG1 IMG2 <mask:0>\"><mask:0>");
  CHECK_THROWS_AS(infill_image(v, image_run(v, 200), image_run(v, 56)), Error);

  const auto image = image_run(v, 256);
  const CaptionPrompts c = caption_prompts(v, image);
  CHECK(c.masked.starts_with("<img alt=\"Photo: A photo taken of<mask:0>\" src=\"IMG0 IMG1 "));
  CHECK(c.masked.ends_with(" IMG31\">"));
  CHECK(c.causal.ends_with(" IMG31\" title=\"Photo: A photo taken of"));
  CHECK_THROWS_AS(caption_prompts(v, image_run(v, 255)), Error);

  const std::string s = summarize_prompt("<p>body</p>");
  CHECK(s.find("<mask:0>") != std::string::npos);
  CHECK(s.find("<p>body</p>") != std::string::npos);
}

TEST_CASE("template holes") {
  for (const auto& [name, t] : builtin_templates()) {
    CHECK(t.name == name);
    CHECK(t.holes() == holes_by_regex(t.text));
  }
  const PromptTemplate t{"x", "{a}{prefix}-{prefix}{text}{", DecodeMode::sample};
  CHECK(t.holes() == std::vector<std::string>{"prefix", "text"});
  CHECK(t.render({{"prefix", "P"}, {"text", "T"}}) == "{a}P-PT{");
  CHECK_THROWS_AS(t.render({{"prefix", "P"}}), Error);
  CHECK_THROWS_AS(t.render({{"prefix", "P"}, {"text", "T"}, {"image", "I"}}), Error);
}

TEST_CASE("decode modes") {
  for (DecodeMode m : {DecodeMode::sample, DecodeMode::beam, DecodeMode::score, DecodeMode::constrained,
                       DecodeMode::size_hint}) {
    CHECK(parse_decode_mode(to_string(m)) == m);
  }
  CHECK_THROWS_AS(parse_decode_mode("fast"), Error);
  CHECK(builtin_template("entity").mode == DecodeMode::score);
}

TEST_CASE("bundled template file matches the built-ins") {
  const auto loaded = load_templates(std::filesystem::path(CMLM_SOURCE_DIR) / "data" / "prompts.json");
  CHECK(loaded.size() == builtin_templates().size());
  for (const auto& t : loaded) {
    const auto& b = builtin_template(t.name);
    CHECK(t.text == b.text);
    CHECK(t.mode == b.mode);
  }
}
