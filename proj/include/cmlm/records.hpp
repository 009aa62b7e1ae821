#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cmlm {

enum class Source { cc_news_like, wiki_like, synthetic };

std::string_view to_string(Source source);
Source parse_source(std::string_view name);

// One line of a record file. `tokens` holds rendered token strings
// (Vocab::render). Fields added by later stages (e.g. the transform's
// `plan`) live in `extra` and are written after the four fixed keys, in
// insertion order.
struct Record {
  std::string doc_id;
  Source source = Source::synthetic;
  std::string minimal_html;
  std::vector<std::string> tokens;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  friend bool operator==(const Record&, const Record&) = default;
};

// Canonical single-line form: fixed key order, no insignificant whitespace.
std::string serialize_record(const Record& record);
Record parse_record(std::string_view line);

std::vector<Record> read_records(const std::filesystem::path& path);
void write_records(const std::filesystem::path& path, const std::vector<Record>& records);

// Replaces invalid UTF-8 sequences with U+FFFD so text can be stored in JSON.
std::string sanitize_utf8(std::string_view bytes);

}  // namespace cmlm
