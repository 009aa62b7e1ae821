#include <doctest.h>

#include <regex>

#include "cmlm/html.hpp"
#include "support/fixtures.hpp"

using namespace cmlm;
using cmlm::testing::golden_for;
using cmlm::testing::html_fixtures;
using cmlm::testing::slurp;

namespace {

std::string through(DomNode (*pass)(DomNode, MinifyReport*), std::string_view html,
                    MinifyReport* report = nullptr) {
  return serialize(pass(parse_dom(html), report));
}

bool has_forbidden_tag(std::string_view html) {
  static const std::regex tag(R"(<(header|footer|form|iframe|dialog)[\s>/])", std::regex::icase);
  return std::regex_search(html.begin(), html.end(), tag);
}

// Attribute names in every start tag appear in sorted order.
bool attributes_sorted(const std::string& html) {
  static const std::regex start_tag(R"(<[a-z][a-z0-9]*((\s+[^\s=>]+(="[^"]*")?)*)\s*/?>)");
  static const std::regex attr(R"(\s+([^\s=>]+)(="[^"]*")?)");
  for (auto it = std::sregex_iterator(html.begin(), html.end(), start_tag); it != std::sregex_iterator(); ++it) {
    const std::string attrs = (*it)[1];
    std::string previous;
    for (auto a = std::sregex_iterator(attrs.begin(), attrs.end(), attr); a != std::sregex_iterator(); ++a) {
      const std::string name = (*a)[1];
      if (name < previous) return false;
      previous = name;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("parse_dom builds trees") {
  const DomNode p = parse_dom("<p>x</p>");
  REQUIRE(p.children.size() == 1);
  CHECK(p.children[0].is("p"));
  REQUIRE(p.children[0].children.size() == 1);
  CHECK(p.children[0].children[0].text == "x");

  CHECK(parse_dom("").children.empty());

  const DomNode div = parse_dom("<div><p>a</p><p>b</p></div>");
  REQUIRE(div.children.size() == 1);
  CHECK(div.children[0].children.size() == 2);
}

TEST_CASE("parser tolerates broken markup") {
  CHECK(serialize(parse_dom("<ul><li>a<li>b</ul>")) == "<ul><li>a</li><li>b</li></ul>");
  CHECK(serialize(parse_dom("<p>a<div>b</div>")) == "<p>a</p><div>b</div>");
  CHECK(serialize(parse_dom("<table><tr><td>1<td>2<tr><td>3</table>")) ==
        "<table><tr><td>1</td><td>2</td></tr><tr><td>3</td></tr></table>");
  CHECK(serialize(parse_dom("<b>x</i>y</b>")) == "<b>xy</b>");
  CHECK(serialize(parse_dom("a < b")) == "a < b");
  CHECK(serialize(parse_dom("<p>x</p><img src=\"u")) == "<p>x</p>&lt;img src=\"u");
  CHECK(serialize(parse_dom("<!-- c --><!DOCTYPE html><p>k</p>")) == "<p>k</p>");
  CHECK(serialize(parse_dom("<script>if (a<b) {}</script>")) == "<script>if (a<b) {}</script>");
}

TEST_CASE("serialization: void elements, attribute order and escaping") {
  CHECK(serialize(parse_dom("<img src=u alt='c&amp;d'><br/>")) == "<img alt=\"c&amp;d\" src=\"u\"><br>");
  CHECK(serialize(parse_dom("<a title='say \"hi\"' href=x>t</a>")) == "<a href=\"x\" title=\"say &quot;hi&quot;\">t</a>");
  CHECK(serialize(parse_dom("<P CLASS=x>T &amp; U</P>")) == "<p class=\"x\">T &amp; U</p>");
}

TEST_CASE("strip_non_textual") {
  MinifyReport r;
  CHECK(through(strip_non_textual, "<div><span></span><p>x</p></div>", &r) == "<div><p>x</p></div>");
  CHECK(r.removed_non_textual == 1);
  CHECK(through(strip_non_textual, "<div><img src=\"u\"></div>") == "<div><img src=\"u\"></div>");
  CHECK(through(strip_non_textual, "<p>a<script>var x = 1;</script></p>") == "<p>a</p>");
  CHECK(through(strip_non_textual, "<div> <span> </span> </div>") == "");
  CHECK(through(strip_non_textual, "<meta property=\"og:title\" content=\"T\">") ==
        "<meta content=\"T\" property=\"og:title\">");
}

TEST_CASE("remove_noise") {
  MinifyReport r;
  CHECK(through(remove_noise, "<footer>c</footer><p>x</p>", &r) == "<p>x</p>");
  CHECK(r.removed_noise_tag == 1);
  CHECK(through(remove_noise, "<div class=\"site-copyright\">&copy;</div>") == "");
  CHECK(through(remove_noise, "<div><form><p>t</p></form></div>") == "<div></div>");
  CHECK(through(remove_noise, "<pre class=\"preformatted\">k</pre>") == "<pre class=\"preformatted\">k</pre>");
  CHECK(through(remove_noise, "<div id=\"HEADER\">h</div>") == "");
  CHECK(through(remove_noise, "<p class=\"headers\">k</p>") == "<p class=\"headers\">k</p>");
}

TEST_CASE("fold_divs") {
  MinifyReport r;
  CHECK(through(fold_divs, "<div id=\"a\"><div class=\"b\"><p>x</p></div></div>", &r) ==
        "<div class=\"b\" id=\"a\"><p>x</p></div>");
  CHECK(r.folded_divs == 1);
  const std::string mixed = "<div><p>x</p><div><p>y</p></div></div>";
  CHECK(through(fold_divs, mixed) == mixed);
  const std::string triple = through(fold_divs, "<div><div><div><p>z</p></div></div></div>");
  CHECK(triple == "<div><p>z</p></div>");
  CHECK(through(fold_divs, triple) == triple);
  // Outer value wins, classes are unioned outer-first.
  CHECK(through(fold_divs, "<div id=\"o\" class=\"a b\"><div id=\"i\" class=\"b c\">t</div></div>") ==
        "<div class=\"a b c\" id=\"o\">t</div>");
}

TEST_CASE("filter_attributes") {
  CHECK(through(filter_attributes, "<img data-track=\"1\" src=\"u\" alt=\"cat\">") == "<img alt=\"cat\" src=\"u\">");
  CHECK(through(filter_attributes, "<meta property=\"og:title\" content=\"T\">") ==
        "<meta content=\"T\" property=\"og:title\">");
  CHECK(through(filter_attributes, "<a onclick=\"f()\" title=\"Memphis, Egypt\">Memphis</a>") ==
        "<a title=\"Memphis, Egypt\">Memphis</a>");
  // property/content survive on meta only.
  CHECK(through(filter_attributes, "<p property=\"x\" content=\"y\" itemprop=\"z\">t</p>") == "<p itemprop=\"z\">t</p>");
}

TEST_CASE("minify on empty input") {
  const MinifyResult r = minify("");
  CHECK(r.minimal_html.empty());
  CHECK(r.report.input_elements == 0);
  CHECK(r.report.removed_total() == 0);
}

TEST_CASE("fixture goldens, idempotence and safety") {
  const auto fixtures = html_fixtures();
  REQUIRE(fixtures.size() >= 7);
  for (const auto& path : fixtures) {
    CAPTURE(path.filename().string());
    const std::string raw = slurp(path);
    const MinifyResult r = minify(raw);
    CHECK(r.minimal_html == slurp(golden_for(path)));
    CHECK(minify(r.minimal_html).minimal_html == r.minimal_html);
    CHECK_FALSE(has_forbidden_tag(r.minimal_html));
    CHECK(attributes_sorted(r.minimal_html));
    CHECK(r.minimal_html.size() <= raw.size());
    CHECK(r.report.removed_total() == r.report.input_elements - r.report.output_elements);

    // Each pass is idempotent on its own output.
    for (auto pass : {remove_noise, strip_non_textual, fold_divs, filter_attributes}) {
      const std::string once = through(pass, raw);
      CHECK(through(pass, once) == once);
    }
  }
}

TEST_CASE("decorative spans are counted") {
  const MinifyResult r = minify(slurp(cmlm::testing::fixture_dir() / "html" / "decorative_spans.html"));
  CHECK(r.report.removed_non_textual == 12);
}

TEST_CASE("visible_text skips script and style") {
  CHECK(visible_text(parse_dom("<p>a<script>x</script><style>y</style> b</p>")) == "a b");
}
