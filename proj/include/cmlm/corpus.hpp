#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmlm/records.hpp"
#include "cmlm/vocab.hpp"

namespace cmlm {

// Visible text of the record's minimal HTML with whitespace runs collapsed to
// one space and the ends trimmed.
std::string normalized_text(const Record& record);
std::uint64_t dedup_key(const Record& record);

struct Split {
  std::vector<Record> train;
  std::vector<Record> test;
};

// Records sharing a dedup key travel together. Groups are visited in a
// seed-shuffled order and go to the test split while they fit, so the test
// split holds exactly `test_size` records. Both splits keep input order.
Split make_split(std::span<const Record> records, std::size_t test_size, std::uint64_t seed);

struct TokenHistogram {
  std::vector<std::uint64_t> counts;  // indexed within the class
  std::uint64_t total = 0;
  // Shannon entropy of the counts divided by log2(counts.size()).
  double normalized_entropy = 0;
};

TokenHistogram histogram_from_counts(std::vector<std::uint64_t> counts);

// Counts tokens of `cls` (text or image) over all records.
TokenHistogram token_histogram(const Vocab& vocab, std::span<const Record> records, TokenClass cls);

}  // namespace cmlm
