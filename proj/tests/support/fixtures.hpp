#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace cmlm::testing {

inline std::filesystem::path fixture_dir() { return CMLM_FIXTURE_DIR; }

inline std::string slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Raw HTML fixtures (goldens excluded), sorted by name.
inline std::vector<std::filesystem::path> html_fixtures() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(fixture_dir() / "html")) {
    const std::string name = e.path().filename().string();
    if (name.ends_with(".html") && !name.ends_with(".golden.html")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::filesystem::path golden_for(const std::filesystem::path& fixture) {
  std::string name = fixture.filename().string();
  name.replace(name.size() - 5, 5, ".golden.html");
  return fixture.parent_path() / name;
}

// Pages of the end-to-end corpus, sorted by name.
inline std::vector<std::filesystem::path> corpus_pages() {
  std::vector<std::filesystem::path> out;
  for (const auto& e : std::filesystem::directory_iterator(fixture_dir() / "corpus")) {
    if (e.path().extension() == ".html") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline std::filesystem::path corpus_golden_for(const std::filesystem::path& page) {
  return fixture_dir() / "corpus_goldens" / page.filename();
}

}  // namespace cmlm::testing
