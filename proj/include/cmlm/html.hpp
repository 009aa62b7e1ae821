#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace cmlm {

// A node of the document tree. The root has kind `root` and no tag; text
// nodes carry their payload verbatim (no entity decoding). Attribute values
// are entity-decoded at parse time and re-escaped on serialization.
struct DomNode {
  enum class Kind { root, element, text };

  Kind kind = Kind::root;
  std::string tag;
  std::vector<std::pair<std::string, std::string>> attributes;
  std::vector<DomNode> children;
  std::string text;

  static DomNode element(std::string tag);
  static DomNode text_node(std::string text);

  bool is_element() const noexcept { return kind == Kind::element; }
  bool is_text() const noexcept { return kind == Kind::text; }
  bool is(std::string_view name) const noexcept { return is_element() && tag == name; }

  const std::string* attr(std::string_view name) const;
  void set_attr(std::string name, std::string value);
  bool erase_attr(std::string_view name);

  friend bool operator==(const DomNode&, const DomNode&) = default;
};

// Element counts removed by each pass. Removals count whole subtrees, so
// removed_total() == input_elements - output_elements.
struct MinifyReport {
  std::size_t input_elements = 0;
  std::size_t output_elements = 0;
  std::size_t removed_noise_tag = 0;    // header/footer/form/iframe/dialog
  std::size_t removed_noise_class = 0;  // class/id token match
  std::size_t removed_non_textual = 0;
  std::size_t folded_divs = 0;
  std::size_t stripped_attributes = 0;

  std::size_t removed_total() const noexcept {
    return removed_noise_tag + removed_noise_class + removed_non_textual + folded_divs;
  }
  MinifyReport& operator+=(const MinifyReport& other);
  nlohmann::ordered_json to_json() const;
};

struct MinifyResult {
  std::string minimal_html;
  MinifyReport report;
};

bool is_void_element(std::string_view tag);
std::size_t count_elements(const DomNode& node);

// Tolerant parser: never fails; unparseable fragments become text.
DomNode parse_dom(std::string_view html);
// Attributes are written in alphabetical order; void elements get no end tag.
std::string serialize(const DomNode& node);

DomNode remove_noise(DomNode dom, MinifyReport* report = nullptr);
DomNode strip_non_textual(DomNode dom, MinifyReport* report = nullptr);
DomNode fold_divs(DomNode dom, MinifyReport* report = nullptr);
DomNode filter_attributes(DomNode dom, MinifyReport* report = nullptr);

// parse -> remove_noise -> strip_non_textual -> fold_divs -> filter_attributes
// -> serialize.
MinifyResult minify(std::string_view html);

// Concatenated text of all text nodes outside script/style.
std::string visible_text(const DomNode& node);

}  // namespace cmlm
