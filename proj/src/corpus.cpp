#include "cmlm/corpus.hpp"

#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "cmlm/error.hpp"
#include "cmlm/html.hpp"
#include "cmlm/rng.hpp"

namespace cmlm {

std::string normalized_text(const Record& record) {
  const std::string text = visible_text(parse_dom(record.minimal_html));
  std::string out;
  bool pending_space = false;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(c);
  }
  return out;
}

std::uint64_t dedup_key(const Record& record) { return fnv1a64(normalized_text(record)); }

Split make_split(std::span<const Record> records, std::size_t test_size, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> groups;
  std::unordered_map<std::uint64_t, std::size_t> group_of;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto [it, fresh] = group_of.emplace(dedup_key(records[i]), groups.size());
    if (fresh) groups.emplace_back();
    groups[it->second].push_back(i);
  }
  if (test_size > groups.size()) {
    throw Error("corpus", "test_size " + std::to_string(test_size) + " exceeds the " +
                              std::to_string(groups.size()) + " unique documents");
  }

  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<bool> in_test(records.size(), false);
  std::size_t taken = 0;
  for (std::size_t g : order) {
    if (taken == test_size) break;
    if (taken + groups[g].size() > test_size) continue;
    for (std::size_t i : groups[g]) in_test[i] = true;
    taken += groups[g].size();
  }
  if (taken != test_size) {
    throw Error("corpus", "duplicate groups cannot fill a test split of exactly " + std::to_string(test_size));
  }

  Split split;
  for (std::size_t i = 0; i < records.size(); ++i) (in_test[i] ? split.test : split.train).push_back(records[i]);
  return split;
}

TokenHistogram histogram_from_counts(std::vector<std::uint64_t> counts) {
  TokenHistogram h;
  h.total = std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
  if (h.total == 0) throw Error("corpus", "no tokens of the selected class");
  double entropy = 0;
  for (std::uint64_t c : counts) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(h.total);
    entropy -= p * std::log2(p);
  }
  h.normalized_entropy = counts.size() > 1 ? entropy / std::log2(static_cast<double>(counts.size())) : 0.0;
  h.counts = std::move(counts);
  return h;
}

TokenHistogram token_histogram(const Vocab& vocab, std::span<const Record> records, TokenClass cls) {
  if (records.empty()) throw Error("corpus", "empty corpus");
  std::size_t classes = 0;
  switch (cls) {
    case TokenClass::text: classes = Vocab::kTextSize; break;
    case TokenClass::image: classes = static_cast<std::size_t>(vocab.image_vocab_size()); break;
    default: throw Error("corpus", "histograms cover text or image tokens only");
  }
  std::vector<std::uint64_t> counts(classes, 0);
  for (const Record& r : records) {
    for (const std::string& rendered : r.tokens) {
      const TokenId id = vocab.parse_rendered(rendered);
      if (vocab.classify(id) != cls) continue;
      ++counts[cls == TokenClass::text ? static_cast<std::size_t>(id)
                                       : static_cast<std::size_t>(vocab.image_index(id))];
    }
  }
  return histogram_from_counts(std::move(counts));
}

}  // namespace cmlm
