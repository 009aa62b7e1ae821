#include "cmlm/records.hpp"

#include <fstream>

#include "cmlm/error.hpp"

namespace cmlm {
namespace {

using ojson = nlohmann::ordered_json;

constexpr const char* kFixedKeys[] = {"doc_id", "source", "minimal_html", "tokens"};

}  // namespace

std::string_view to_string(Source source) {
  switch (source) {
    case Source::cc_news_like: return "cc_news_like";
    case Source::wiki_like: return "wiki_like";
    case Source::synthetic: return "synthetic";
  }
  return "synthetic";
}

Source parse_source(std::string_view name) {
  if (name == "cc_news_like") return Source::cc_news_like;
  if (name == "wiki_like") return Source::wiki_like;
  if (name == "synthetic") return Source::synthetic;
  throw Error("records", "unknown source '" + std::string(name) + "'");
}

std::string serialize_record(const Record& record) {
  ojson j = ojson::object();
  j["doc_id"] = record.doc_id;
  j["source"] = std::string(to_string(record.source));
  j["minimal_html"] = record.minimal_html;
  j["tokens"] = record.tokens;
  for (const auto& [key, value] : record.extra.items()) {
    for (const char* fixed : kFixedKeys) {
      if (key == fixed) throw Error("records", "extra field shadows '" + key + "'");
    }
    j[key] = value;
  }
  return j.dump();
}

Record parse_record(std::string_view line) {
  ojson j;
  try {
    j = ojson::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw Error("records", std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw Error("records", "record is not a JSON object");
  Record r;
  try {
    r.doc_id = j.at("doc_id").get<std::string>();
    r.source = parse_source(j.at("source").get<std::string>());
    r.minimal_html = j.at("minimal_html").get<std::string>();
    r.tokens = j.at("tokens").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error("records", std::string("missing or mistyped field: ") + e.what());
  }
  for (const auto& [key, value] : j.items()) {
    bool fixed = false;
    for (const char* k : kFixedKeys) fixed = fixed || key == k;
    if (!fixed) r.extra[key] = value;
  }
  return r;
}

std::vector<Record> read_records(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("records", "cannot open " + path.string());
  std::vector<Record> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const Error& e) {
      throw Error("records", path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

void write_records(const std::filesystem::path& path, const std::vector<Record>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("records", "cannot write " + path.string());
  for (const auto& r : records) out << serialize_record(r) << '\n';
  if (!out) throw Error("records", "write failed for " + path.string());
}

std::string sanitize_utf8(std::string_view bytes) {
  static constexpr std::string_view kReplacement = "\xEF\xBF\xBD";
  std::string out;
  out.reserve(bytes.size());
  std::size_t i = 0;
  while (i < bytes.size()) {
    const auto c = static_cast<unsigned char>(bytes[i]);
    std::size_t len = 0;
    unsigned min_cp = 0;
    unsigned cp = 0;
    if (c < 0x80) {
      out.push_back(static_cast<char>(c));
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2, min_cp = 0x80, cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3, min_cp = 0x800, cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4, min_cp = 0x10000, cp = c & 0x07;
    }
    bool ok = len > 0 && i + len <= bytes.size();
    for (std::size_t k = 1; ok && k < len; ++k) {
      const auto cc = static_cast<unsigned char>(bytes[i + k]);
      ok = (cc & 0xC0) == 0x80;
      cp = (cp << 6) | (cc & 0x3F);
    }
    ok = ok && cp >= min_cp && cp <= 0x10FFFF && !(cp >= 0xD800 && cp <= 0xDFFF);
    if (ok) {
      out.append(bytes.substr(i, len));
      i += len;
    } else {
      out += kReplacement;
      ++i;
    }
  }
  return out;
}

}  // namespace cmlm
