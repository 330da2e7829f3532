#include <charconv>
#include <istream>
#include <ostream>
#include <sstream>

#include "ilgnet/ava.hpp"
#include "ilgnet/error.hpp"

namespace ilgnet::ava {
namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace

std::uint64_t RatingRecord::total_votes() const {
  std::uint64_t total = 0;
  for (auto c : counts) total += c;
  return total;
}

MetadataParse parse_metadata(std::istream& in) {
  MetadataParse result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    const auto fields = split_fields(line);
    if (fields.size() != 11) {
      result.issues.push_back({line_no, "expected 11 columns (image_id + 10 counts), got " + std::to_string(fields.size())});
      continue;
    }
    if (fields[0].empty()) {
      result.issues.push_back({line_no, "empty image_id"});
      continue;
    }
    RatingRecord record;
    record.image_id = std::string(fields[0]);
    bool ok = true;
    for (std::size_t i = 0; i < 10 && ok; ++i) {
      const std::string_view f = fields[i + 1];
      if (!f.empty() && f.front() == '-') {
        result.issues.push_back({line_no, "negative count in column " + std::to_string(i + 2)});
        ok = false;
        break;
      }
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), record.counts[i]);
      if (ec != std::errc{} || ptr != f.data() + f.size() || f.empty()) {
        result.issues.push_back({line_no, "invalid count '" + std::string(f) + "' in column " + std::to_string(i + 2)});
        ok = false;
      }
    }
    if (!ok) continue;
    if (record.total_votes() == 0) {
      result.issues.push_back({line_no, "record '" + record.image_id + "' has zero votes"});
      continue;
    }
    result.records.push_back(std::move(record));
  }
  return result;
}

std::vector<RatingRecord> parse_metadata_strict(std::istream& in) {
  auto parsed = parse_metadata(in);
  if (!parsed.issues.empty()) {
    std::ostringstream msg;
    msg << "malformed metadata (" << parsed.issues.size() << " line(s))";
    for (const auto& issue : parsed.issues) msg << "\n  line " << issue.line << ": " << issue.message;
    throw DataError(msg.str());
  }
  return std::move(parsed.records);
}

void write_metadata(std::ostream& out, std::span<const RatingRecord> records) {
  for (const auto& r : records) {
    out << r.image_id;
    for (auto c : r.counts) out << ',' << c;
    out << '\n';
  }
}

double mean_score(const RatingRecord& record) {
  std::uint64_t weighted = 0;
  for (std::size_t i = 0; i < record.counts.size(); ++i) weighted += (i + 1) * std::uint64_t{record.counts[i]};
  const std::uint64_t total = record.total_votes();
  if (total == 0) throw DataError("record '" + record.image_id + "' has zero votes");
  return static_cast<double>(weighted) / static_cast<double>(total);
}

}  // namespace ilgnet::ava
