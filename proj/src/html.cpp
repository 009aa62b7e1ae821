#include "cmlm/html.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "cmlm/records.hpp"

namespace cmlm {
namespace {

constexpr std::array<std::string_view, 14> kVoidElements = {
    "area", "base", "br", "col", "embed", "hr", "img",
    "input", "link", "meta", "param", "source", "track", "wbr"};

constexpr std::array<std::string_view, 2> kRawTextElements = {"script", "style"};

constexpr std::array<std::string_view, 4> kInvisibleElements = {"script", "style", "noscript",
                                                                "template"};

// Start tags that end an open <p> (the usual block-level set).
constexpr std::array<std::string_view, 27> kClosesParagraph = {
    "address", "article", "aside",  "blockquote", "dd",      "details", "div",  "dl",  "dt",
    "fieldset", "figure", "footer", "form",       "h1",      "h2",      "h3",   "h4",  "h5",
    "h6",      "header",  "hr",     "li",         "main",    "nav",     "ol",   "p",   "table"};

// An implied end tag: opening `opener` closes the nearest open element named
// in `closes`, unless an element in `scope` is reached first.
struct ImpliedEnd {
  std::string_view opener;
  std::array<std::string_view, 3> closes;
  std::array<std::string_view, 4> scope;
};

constexpr std::array<ImpliedEnd, 9> kImpliedEnds = {{
    {"li", {"li"}, {"ul", "ol", "menu"}},
    {"dt", {"dt", "dd"}, {"dl"}},
    {"dd", {"dt", "dd"}, {"dl"}},
    {"option", {"option"}, {"select", "datalist"}},
    {"tr", {"tr"}, {"table", "tbody", "thead", "tfoot"}},
    {"td", {"td", "th"}, {"tr", "table"}},
    {"th", {"td", "th"}, {"tr", "table"}},
    {"tbody", {"tbody", "thead", "tfoot"}, {"table"}},
    {"thead", {"tbody", "thead", "tfoot"}, {"table"}},
}};

constexpr std::array<std::string_view, 4> kParagraphScope = {"table", "td", "th", "button"};

constexpr std::array<std::string_view, 5> kNoiseTags = {"header", "footer", "form", "iframe",
                                                        "dialog"};

constexpr std::array<std::string_view, 4> kNoiseTokens = {"header", "footer", "copyright",
                                                          "dialog"};

constexpr std::array<std::string_view, 3> kMicrodataAttributes = {"itemprop", "itemscope",
                                                                  "itemtype"};

constexpr std::array<std::string_view, 6> kFunctionalAttributes = {"src",  "alt", "title",
                                                                   "href", "class", "id"};

template <std::size_t N>
bool contains(const std::array<std::string_view, N>& set, std::string_view value) {
  return std::find(set.begin(), set.end(), value) != set.end();
}

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f';
}

bool is_name_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) != 0;
}

bool is_tag_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '-' || c == ':' || c == '_';
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), is_space);
}

void append_utf8(std::string& out, unsigned cp) {
  if (cp == 0 || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) cp = 0xFFFD;
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Decodes the common named entities and numeric references. Anything else is
// kept verbatim.
std::string decode_entities(std::string_view in) {
  std::string out;
  out.reserve(in.size());
  std::size_t i = 0;
  while (i < in.size()) {
    if (in[i] != '&') {
      out.push_back(in[i++]);
      continue;
    }
    const std::size_t semi = in.find(';', i + 1);
    if (semi == std::string_view::npos || semi - i > 10) {
      out.push_back(in[i++]);
      continue;
    }
    const std::string_view name = in.substr(i + 1, semi - i - 1);
    bool done = true;
    if (name == "amp") {
      out.push_back('&');
    } else if (name == "lt") {
      out.push_back('<');
    } else if (name == "gt") {
      out.push_back('>');
    } else if (name == "quot") {
      out.push_back('"');
    } else if (name == "apos") {
      out.push_back('\'');
    } else if (name == "nbsp") {
      append_utf8(out, 0xA0);
    } else if (name.size() > 1 && name[0] == '#') {
      const bool hex = name[1] == 'x' || name[1] == 'X';
      const std::string_view digits = name.substr(hex ? 2 : 1);
      unsigned cp = 0;
      bool ok = !digits.empty();
      for (char c : digits) {
        const int d = std::isdigit(static_cast<unsigned char>(c))
                          ? c - '0'
                          : (hex && std::isxdigit(static_cast<unsigned char>(c))
                                 ? std::tolower(static_cast<unsigned char>(c)) - 'a' + 10
                                 : -1);
        if (d < 0) {
          ok = false;
          break;
        }
        cp = std::min<unsigned>(cp * (hex ? 16 : 10) + static_cast<unsigned>(d), 0x110000);
      }
      if (ok) {
        append_utf8(out, cp);
      } else {
        done = false;
      }
    } else {
      done = false;
    }
    if (done) {
      i = semi + 1;
    } else {
      out.push_back(in[i++]);
    }
  }
  return out;
}

std::string escape_attribute(std::string_view value) {
  std::string out;
  out.reserve(value.size());
  for (char c : value) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

std::size_t find_ci(std::string_view haystack, std::string_view needle, std::size_t from) {
  if (needle.size() > haystack.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    bool match = true;
    for (std::size_t k = 0; k < needle.size() && match; ++k) {
      match = std::tolower(static_cast<unsigned char>(haystack[i + k])) == needle[k];
    }
    if (match) return i;
  }
  return std::string_view::npos;
}

class Parser {
 public:
  explicit Parser(std::string_view html) : in_(html) { stack_.emplace_back(); }

  DomNode run() {
    while (pos_ < in_.size()) {
      if (in_[pos_] == '<' && try_markup()) continue;
      const std::size_t next = in_.find('<', pos_ + 1);
      const std::size_t end = next == std::string_view::npos ? in_.size() : next;
      add_text(in_.substr(pos_, end - pos_));
      pos_ = end;
    }
    while (stack_.size() > 1) close_top();
    return std::move(stack_.front());
  }

 private:
  void add_text(std::string_view text) {
    if (text.empty()) return;
    auto& children = stack_.back().children;
    if (!children.empty() && children.back().is_text()) {
      children.back().text += text;
    } else {
      children.push_back(DomNode::text_node(std::string(text)));
    }
  }

  void close_top() {
    DomNode done = std::move(stack_.back());
    stack_.pop_back();
    stack_.back().children.push_back(std::move(done));
  }

  // Closes the nearest open element named in `closes` (and everything above
  // it) unless a `scope` element is reached first.
  template <std::size_t N, std::size_t M>
  void close_nearest(const std::array<std::string_view, N>& closes,
                     const std::array<std::string_view, M>& scope) {
    for (std::size_t depth = stack_.size() - 1; depth >= 1; --depth) {
      const std::string& tag = stack_[depth].tag;
      if (contains(closes, tag)) {
        while (stack_.size() > depth) close_top();
        return;
      }
      if (contains(scope, tag)) return;
    }
  }

  void apply_implied_ends(const std::string& tag) {
    if (contains(kClosesParagraph, tag)) close_nearest(std::array<std::string_view, 1>{"p"}, kParagraphScope);
    for (const ImpliedEnd& rule : kImpliedEnds) {
      if (rule.opener == tag) close_nearest(rule.closes, rule.scope);
    }
  }

  // Remainder of the input cannot be parsed as markup; keep it as text with
  // the opening bracket escaped so the serialized form reparses the same.
  void degrade_rest() {
    add_text("&lt;");
    add_text(in_.substr(pos_ + 1));
    pos_ = in_.size();
  }

  // Returns false when the '<' at pos_ is a literal character.
  bool try_markup() {
    const std::string_view rest = in_.substr(pos_);
    if (rest.starts_with("<!--")) {
      const std::size_t end = in_.find("-->", pos_ + 4);
      pos_ = end == std::string_view::npos ? in_.size() : end + 3;
      return true;
    }
    if (rest.size() >= 2 && (rest[1] == '!' || rest[1] == '?')) {
      const std::size_t end = in_.find('>', pos_);
      if (end == std::string_view::npos) {
        degrade_rest();
      } else {
        pos_ = end + 1;
      }
      return true;
    }
    if (rest.size() >= 3 && rest[1] == '/' && is_name_start(rest[2])) {
      parse_end_tag();
      return true;
    }
    if (rest.size() >= 2 && is_name_start(rest[1])) {
      parse_start_tag();
      return true;
    }
    return false;
  }

  void parse_end_tag() {
    std::size_t i = pos_ + 2;
    while (i < in_.size() && is_tag_char(in_[i])) ++i;
    const std::string name = lower(in_.substr(pos_ + 2, i - pos_ - 2));
    const std::size_t end = in_.find('>', i);
    if (end == std::string_view::npos) {
      degrade_rest();
      return;
    }
    pos_ = end + 1;
    for (std::size_t depth = stack_.size() - 1; depth >= 1; --depth) {
      if (stack_[depth].tag == name) {
        while (stack_.size() > depth) close_top();
        return;
      }
    }
  }

  void parse_start_tag() {
    std::size_t i = pos_ + 1;
    while (i < in_.size() && is_tag_char(in_[i])) ++i;
    DomNode node = DomNode::element(lower(in_.substr(pos_ + 1, i - pos_ - 1)));
    bool self_closing = false;
    for (;;) {
      while (i < in_.size() && is_space(in_[i])) ++i;
      if (i >= in_.size()) {
        degrade_rest();
        return;
      }
      if (in_[i] == '>') {
        ++i;
        break;
      }
      if (in_[i] == '/') {
        if (i + 1 < in_.size() && in_[i + 1] == '>') {
          self_closing = true;
          i += 2;
          break;
        }
        ++i;
        continue;
      }
      const std::size_t name_start = i;
      ++i;
      while (i < in_.size() && !is_space(in_[i]) && in_[i] != '/' && in_[i] != '>' &&
             in_[i] != '=') {
        ++i;
      }
      std::string name = lower(in_.substr(name_start, i - name_start));
      std::size_t j = i;
      while (j < in_.size() && is_space(in_[j])) ++j;
      std::string value;
      if (j < in_.size() && in_[j] == '=') {
        ++j;
        while (j < in_.size() && is_space(in_[j])) ++j;
        if (j >= in_.size()) {
          degrade_rest();
          return;
        }
        if (in_[j] == '"' || in_[j] == '\'') {
          const std::size_t close = in_.find(in_[j], j + 1);
          if (close == std::string_view::npos) {
            degrade_rest();
            return;
          }
          value = decode_entities(in_.substr(j + 1, close - j - 1));
          i = close + 1;
        } else {
          std::size_t k = j;
          while (k < in_.size() && !is_space(in_[k]) && in_[k] != '>') ++k;
          value = decode_entities(in_.substr(j, k - j));
          i = k;
        }
      }
      if (node.attr(name) == nullptr) node.attributes.emplace_back(std::move(name), std::move(value));
    }
    pos_ = i;

    apply_implied_ends(node.tag);
    if (is_void_element(node.tag)) {
      stack_.back().children.push_back(std::move(node));
      return;
    }
    if (self_closing) {
      stack_.back().children.push_back(std::move(node));
      return;
    }
    if (contains(kRawTextElements, node.tag)) {
      const std::string closer = "</" + node.tag;
      const std::size_t end = find_ci(in_, closer, pos_);
      const std::size_t content_end = end == std::string_view::npos ? in_.size() : end;
      if (content_end > pos_) {
        node.children.push_back(DomNode::text_node(std::string(in_.substr(pos_, content_end - pos_))));
      }
      if (end == std::string_view::npos) {
        pos_ = in_.size();
      } else {
        const std::size_t gt = in_.find('>', end);
        pos_ = gt == std::string_view::npos ? in_.size() : gt + 1;
      }
      stack_.back().children.push_back(std::move(node));
      return;
    }
    stack_.push_back(std::move(node));
  }

  std::string_view in_;
  std::size_t pos_ = 0;
  std::vector<DomNode> stack_;
};

void serialize_into(const DomNode& node, std::string& out) {
  switch (node.kind) {
    case DomNode::Kind::text:
      out += node.text;
      return;
    case DomNode::Kind::root:
      for (const auto& child : node.children) serialize_into(child, out);
      return;
    case DomNode::Kind::element:
      break;
  }
  out.push_back('<');
  out += node.tag;
  std::vector<const std::pair<std::string, std::string>*> attrs;
  attrs.reserve(node.attributes.size());
  for (const auto& a : node.attributes) attrs.push_back(&a);
  std::sort(attrs.begin(), attrs.end(), [](auto* a, auto* b) { return a->first < b->first; });
  for (const auto* a : attrs) {
    out.push_back(' ');
    out += a->first;
    out += "=\"";
    out += escape_attribute(a->second);
    out.push_back('"');
  }
  out.push_back('>');
  if (is_void_element(node.tag)) return;
  for (const auto& child : node.children) serialize_into(child, out);
  out += "</";
  out += node.tag;
  out.push_back('>');
}

// Splits class/id values into lowercase tokens on whitespace, '-' and '_'.
bool has_noise_token(const DomNode& node) {
  for (const char* name : {"class", "id"}) {
    const std::string* value = node.attr(name);
    if (value == nullptr) continue;
    std::string token;
    auto flush = [&] {
      const bool hit = contains(kNoiseTokens, token);
      token.clear();
      return hit;
    };
    for (char c : *value) {
      if (is_space(c) || c == '-' || c == '_') {
        if (flush()) return true;
      } else {
        token.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      }
    }
    if (flush()) return true;
  }
  return false;
}

bool is_structured_name(std::string_view name) {
  return name.starts_with("og:") || name.starts_with("twitter:");
}

// Elements kept by the non-textual filter even though they hold no text.
bool is_exempt(const DomNode& node) {
  if (node.is("img")) return true;
  if (!node.is("meta")) return false;
  for (const auto& [name, value] : node.attributes) {
    if (is_structured_name(name) || name == "itemprop") return true;
    if (name == "property" && is_structured_name(value)) return true;
  }
  return false;
}

void remove_noise_in(DomNode& node, MinifyReport* report) {
  auto& children = node.children;
  std::vector<DomNode> kept;
  kept.reserve(children.size());
  for (auto& child : children) {
    if (child.is_element()) {
      if (contains(kNoiseTags, child.tag)) {
        if (report) report->removed_noise_tag += count_elements(child);
        continue;
      }
      if (has_noise_token(child)) {
        if (report) report->removed_noise_class += count_elements(child);
        continue;
      }
      remove_noise_in(child, report);
    }
    kept.push_back(std::move(child));
  }
  children = std::move(kept);
}

// Filters `node`'s children in place; returns whether `node` holds text.
bool strip_in(DomNode& node, MinifyReport* report) {
  if (node.is_element() && contains(kInvisibleElements, node.tag)) return false;
  bool textual = false;
  std::vector<DomNode> kept;
  kept.reserve(node.children.size());
  for (auto& child : node.children) {
    if (child.is_text()) {
      textual = textual || !is_blank(child.text);
      kept.push_back(std::move(child));
      continue;
    }
    if (is_exempt(child) || strip_in(child, report)) {
      textual = true;
      kept.push_back(std::move(child));
    } else if (report) {
      report->removed_non_textual += count_elements(child);
    }
  }
  node.children = std::move(kept);
  return textual;
}

void merge_div_attributes(DomNode& outer, const DomNode& inner) {
  for (const auto& [name, value] : inner.attributes) {
    const std::string* existing = outer.attr(name);
    if (existing == nullptr) {
      outer.set_attr(name, value);
      continue;
    }
    if (name != "class") continue;
    std::vector<std::string> tokens;
    auto add_tokens = [&tokens](std::string_view list) {
      std::size_t i = 0;
      while (i < list.size()) {
        while (i < list.size() && is_space(list[i])) ++i;
        std::size_t j = i;
        while (j < list.size() && !is_space(list[j])) ++j;
        if (j > i) {
          std::string t(list.substr(i, j - i));
          if (std::find(tokens.begin(), tokens.end(), t) == tokens.end()) tokens.push_back(t);
        }
        i = j;
      }
    };
    add_tokens(*existing);
    add_tokens(value);
    std::string merged;
    for (const auto& t : tokens) {
      if (!merged.empty()) merged.push_back(' ');
      merged += t;
    }
    outer.set_attr("class", merged);
  }
}

void fold_in(DomNode& node, MinifyReport* report) {
  for (auto& child : node.children) {
    if (child.is_element()) fold_in(child, report);
  }
  if (!node.is("div")) return;
  for (;;) {
    const DomNode* only = nullptr;
    bool chain = true;
    for (const auto& child : node.children) {
      if (child.is_text()) {
        chain = chain && is_blank(child.text);
      } else if (only == nullptr) {
        only = &child;
      } else {
        chain = false;
      }
    }
    if (!chain || only == nullptr || !only->is("div")) return;
    DomNode inner = *only;
    merge_div_attributes(node, inner);
    node.children = std::move(inner.children);
    if (report) ++report->folded_divs;
  }
}

bool keep_attribute(const DomNode& node, std::string_view name) {
  if (is_structured_name(name)) return true;
  if (contains(kMicrodataAttributes, name)) return true;
  if (node.is("meta") && (name == "property" || name == "content")) return true;
  return contains(kFunctionalAttributes, name);
}

void filter_in(DomNode& node, MinifyReport* report) {
  if (node.is_element()) {
    auto& attrs = node.attributes;
    const std::size_t before = attrs.size();
    std::erase_if(attrs, [&node](const auto& a) { return !keep_attribute(node, a.first); });
    if (report) report->stripped_attributes += before - attrs.size();
  }
  for (auto& child : node.children) filter_in(child, report);
}

void visible_text_into(const DomNode& node, std::string& out) {
  if (node.is_text()) {
    out += node.text;
    return;
  }
  if (node.is_element() && contains(kInvisibleElements, node.tag)) return;
  for (const auto& child : node.children) visible_text_into(child, out);
}

}  // namespace

DomNode DomNode::element(std::string tag) {
  DomNode n;
  n.kind = Kind::element;
  n.tag = std::move(tag);
  return n;
}

DomNode DomNode::text_node(std::string text) {
  DomNode n;
  n.kind = Kind::text;
  n.text = std::move(text);
  return n;
}

const std::string* DomNode::attr(std::string_view name) const {
  for (const auto& [k, v] : attributes) {
    if (k == name) return &v;
  }
  return nullptr;
}

void DomNode::set_attr(std::string name, std::string value) {
  for (auto& [k, v] : attributes) {
    if (k == name) {
      v = std::move(value);
      return;
    }
  }
  attributes.emplace_back(std::move(name), std::move(value));
}

bool DomNode::erase_attr(std::string_view name) {
  return std::erase_if(attributes, [name](const auto& a) { return a.first == name; }) > 0;
}

MinifyReport& MinifyReport::operator+=(const MinifyReport& o) {
  input_elements += o.input_elements;
  output_elements += o.output_elements;
  removed_noise_tag += o.removed_noise_tag;
  removed_noise_class += o.removed_noise_class;
  removed_non_textual += o.removed_non_textual;
  folded_divs += o.folded_divs;
  stripped_attributes += o.stripped_attributes;
  return *this;
}

nlohmann::ordered_json MinifyReport::to_json() const {
  nlohmann::ordered_json j;
  j["input_elements"] = input_elements;
  j["output_elements"] = output_elements;
  j["removed_noise_tag"] = removed_noise_tag;
  j["removed_noise_class"] = removed_noise_class;
  j["removed_non_textual"] = removed_non_textual;
  j["folded_divs"] = folded_divs;
  j["stripped_attributes"] = stripped_attributes;
  return j;
}

bool is_void_element(std::string_view tag) { return contains(kVoidElements, tag); }

std::size_t count_elements(const DomNode& node) {
  std::size_t n = node.is_element() ? 1 : 0;
  for (const auto& child : node.children) n += count_elements(child);
  return n;
}

DomNode parse_dom(std::string_view html) { return Parser(html).run(); }

std::string serialize(const DomNode& node) {
  std::string out;
  serialize_into(node, out);
  return out;
}

DomNode remove_noise(DomNode dom, MinifyReport* report) {
  remove_noise_in(dom, report);
  return dom;
}

DomNode strip_non_textual(DomNode dom, MinifyReport* report) {
  // The top node itself is never removed; only its descendants are filtered.
  if (!is_exempt(dom)) strip_in(dom, report);
  return dom;
}

DomNode fold_divs(DomNode dom, MinifyReport* report) {
  fold_in(dom, report);
  return dom;
}

DomNode filter_attributes(DomNode dom, MinifyReport* report) {
  filter_in(dom, report);
  return dom;
}

MinifyResult minify(std::string_view html) {
  MinifyResult result;
  MinifyReport& report = result.report;
  DomNode dom = parse_dom(sanitize_utf8(html));
  report.input_elements = count_elements(dom);
  dom = remove_noise(std::move(dom), &report);
  dom = strip_non_textual(std::move(dom), &report);
  dom = fold_divs(std::move(dom), &report);
  dom = filter_attributes(std::move(dom), &report);
  report.output_elements = count_elements(dom);
  result.minimal_html = serialize(dom);
  return result;
}

std::string visible_text(const DomNode& node) {
  std::string out;
  visible_text_into(node, out);
  return out;
}

}  // namespace cmlm
