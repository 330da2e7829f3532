#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ilgnet::ava {

// One metadata row: counts[i] voters gave score i + 1.
struct RatingRecord {
  std::string image_id;
  std::array<std::uint32_t, 10> counts{};

  std::uint64_t total_votes() const;
  bool operator==(const RatingRecord&) const = default;
};

struct ParseIssue {
  std::size_t line;  // 1-based
  std::string message;
};

struct MetadataParse {
  std::vector<RatingRecord> records;
  std::vector<ParseIssue> issues;
};

// CSV lines `image_id,c1,...,c10`, no header. Blank lines are ignored;
// every malformed line becomes an issue and is left out of `records`.
MetadataParse parse_metadata(std::istream& in);
// Same, but throws DataError listing the issues when there are any.
std::vector<RatingRecord> parse_metadata_strict(std::istream& in);
void write_metadata(std::ostream& out, std::span<const RatingRecord> records);

// sum(i * counts[i]) / sum(counts), in [1, 10]. Throws DataError on zero votes.
double mean_score(const RatingRecord& record);

enum class Label : int { bad = 0, good = 1 };
enum class Partition { train, test };

std::string_view partition_name(Partition p);

struct LabeledExample {
  std::string image_id;
  Label label = Label::bad;
  double mean_score = 0.0;
  Partition partition = Partition::train;

  bool operator==(const LabeledExample&) const = default;
};

struct Split {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
};

inline constexpr double kScoreThreshold = 5.0;

// Label rule shared by both protocols' consumers: good iff mean > 5.
Label threshold_label(double mean);

// AVA1: a seeded uniform test sample of `test_count` records (always labeled at
// delta = 0); the remaining records train, minus those with |mean - 5| <= delta
// when delta > 0. Records keep their input order inside each partition.
Split ava1_split(std::span<const RatingRecord> records, double delta, std::uint64_t seed, std::size_t test_count);

// AVA2: top and bottom floor(N/10) by mean (descending mean, then image_id) are
// good and bad; the 2k pool is shuffled and halved into train and test.
Split ava2_split(std::span<const RatingRecord> records, std::uint64_t seed);

// CSV `image_id,label,partition,mean_score` (mean with 6 decimals), train rows first.
void write_split(std::ostream& out, const Split& split);
Split read_split(std::istream& in);

}  // namespace ilgnet::ava
