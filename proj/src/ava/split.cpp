#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <string>

#include "ilgnet/ava.hpp"
#include "ilgnet/error.hpp"

namespace ilgnet::ava {
namespace {

LabeledExample make_example(const RatingRecord& r, double mean, Partition p) {
  return {r.image_id, threshold_label(mean), mean, p};
}

}  // namespace

std::string_view partition_name(Partition p) { return p == Partition::train ? "train" : "test"; }

Label threshold_label(double mean) { return mean > kScoreThreshold ? Label::good : Label::bad; }

Split ava1_split(std::span<const RatingRecord> records, double delta, std::uint64_t seed, std::size_t test_count) {
  if (!(delta >= 0.0)) throw DataError("ava1: delta must be non-negative");
  if (test_count >= records.size()) {
    throw DataError("ava1: test_count " + std::to_string(test_count) + " must be smaller than the " +
                    std::to_string(records.size()) + " records");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> in_test(records.size(), false);
  for (std::size_t i = 0; i < test_count; ++i) in_test[order[i]] = true;

  Split split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const double mean = mean_score(records[i]);
    if (in_test[i]) {
      split.test.push_back(make_example(records[i], mean, Partition::test));
    } else if (!(delta > 0.0 && std::abs(mean - kScoreThreshold) <= delta)) {
      split.train.push_back(make_example(records[i], mean, Partition::train));
    }
  }
  if (split.train.empty()) throw DataError("ava1: training set is empty after removing ambiguous records");
  return split;
}

Split ava2_split(std::span<const RatingRecord> records, std::uint64_t seed) {
  if (records.size() < 20) {
    throw DataError("ava2: needs at least 20 records (2 per decile), got " + std::to_string(records.size()));
  }
  std::vector<double> means(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) means[i] = mean_score(records[i]);
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (means[a] != means[b]) return means[a] > means[b];
    return records[a].image_id < records[b].image_id;
  });

  const std::size_t k = records.size() / 10;
  std::vector<std::pair<std::size_t, Label>> pool;
  for (std::size_t i = 0; i < k; ++i) pool.emplace_back(order[i], Label::good);
  for (std::size_t i = records.size() - k; i < records.size(); ++i) pool.emplace_back(order[i], Label::bad);

  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::sort(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(pool.begin() + static_cast<std::ptrdiff_t>(k), pool.end());

  Split split;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto [idx, label] = pool[i];
    const Partition p = i < k ? Partition::train : Partition::test;
    (p == Partition::train ? split.train : split.test).push_back({records[idx].image_id, label, means[idx], p});
  }
  return split;
}

void write_split(std::ostream& out, const Split& split) {
  const auto flags = out.flags();
  const auto precision = out.precision();
  out << std::fixed << std::setprecision(6);
  for (const auto* part : {&split.train, &split.test}) {
    for (const auto& e : *part) {
      out << e.image_id << ',' << static_cast<int>(e.label) << ',' << partition_name(e.partition) << ','
          << e.mean_score << '\n';
    }
  }
  out.flags(flags);
  out.precision(precision);
}

Split read_split(std::istream& in) {
  Split split;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (std::size_t comma; (comma = line.find(',', start)) != std::string::npos; start = comma + 1) {
      fields.push_back(line.substr(start, comma - start));
    }
    fields.push_back(line.substr(start));
    auto fail = [&](const std::string& why) {
      throw DataError("split line " + std::to_string(line_no) + ": " + why);
    };
    if (fields.size() != 4) fail("expected 4 columns, got " + std::to_string(fields.size()));
    if (fields[0].empty()) fail("empty image_id");
    LabeledExample e;
    e.image_id = fields[0];
    if (fields[1] == "0") {
      e.label = Label::bad;
    } else if (fields[1] == "1") {
      e.label = Label::good;
    } else {
      fail("label must be 0 or 1");
    }
    if (fields[2] == "train") {
      e.partition = Partition::train;
    } else if (fields[2] == "test") {
      e.partition = Partition::test;
    } else {
      fail("partition must be train or test");
    }
    try {
      std::size_t used = 0;
      e.mean_score = std::stod(fields[3], &used);
      if (used != fields[3].size()) fail("invalid mean_score");
    } catch (const std::logic_error&) {
      fail("invalid mean_score");
    }
    (e.partition == Partition::train ? split.train : split.test).push_back(std::move(e));
  }
  return split;
}

}  // namespace ilgnet::ava
