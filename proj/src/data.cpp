#include "epilnet/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace epilnet {

std::string to_string(GroupMode mode) { return mode == GroupMode::three_class ? "three" : "five"; }

GroupMode parse_group_mode(const std::string& text) {
  if (text == "three" || text == "3" || text == "three_class") return GroupMode::three_class;
  if (text == "five" || text == "5" || text == "five_class") return GroupMode::five_class;
  throw ConfigError("unknown group mode '" + text + "' (expected three or five)");
}

std::string to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
    case Split::unassigned: break;
  }
  return "unassigned";
}

Split parse_split(const std::string& text) {
  if (text == "train") return Split::train;
  if (text == "val" || text == "validation") return Split::val;
  if (text == "test") return Split::test;
  throw ConfigError("unknown split '" + text + "' (expected train, val or test)");
}

char label_letter(int label) {
  if (label < 1 || label > 5) throw ConfigError("label outside 1..5: " + std::to_string(label));
  return static_cast<char>('A' + label - 1);
}

int label_from_letter(char letter) {
  if (letter >= 'a' && letter <= 'e') letter = static_cast<char>(letter - 'a' + 'A');
  if (letter < 'A' || letter > 'E') throw ConfigError(std::string("class letter outside A..E: ") + letter);
  return letter - 'A' + 1;
}

std::string to_string(DataErrorKind kind) {
  switch (kind) {
    case DataErrorKind::io: return "io";
    case DataErrorKind::empty_file: return "empty_file";
    case DataErrorKind::column_count: return "column_count";
    case DataErrorKind::non_numeric: return "non_numeric";
    case DataErrorKind::label_range: return "label_range";
    case DataErrorKind::count_mismatch: return "count_mismatch";
    case DataErrorKind::ratio_sum: return "ratio_sum";
    case DataErrorKind::zero_std: return "zero_std";
    case DataErrorKind::split_manifest: return "split_manifest";
  }
  return "unknown";
}

GroupMapping GroupMapping::for_mode(GroupMode mode) {
  if (mode == GroupMode::three_class) return {mode, {"healthy", "pre-ictal", "ictal"}};
  return {mode, {"A", "B", "C", "D", "E"}};
}

std::optional<int> GroupMapping::target_for(int label) const {
  if (mode == GroupMode::five_class) return label - 1;
  switch (label) {
    case 1:
    case 2: return 0;
    case 4: return 1;
    case 5: return 2;
    default: return std::nullopt;
  }
}

std::array<std::size_t, 5> EegDataset::label_counts() const {
  std::array<std::size_t, 5> counts{};
  for (const auto& r : records) ++counts[static_cast<std::size_t>(r.label - 1)];
  return counts;
}

std::vector<std::size_t> EegDataset::target_counts() const {
  std::vector<std::size_t> counts(mapping ? mapping->class_count() : 0, 0);
  for (const auto& r : records)
    if (r.target >= 0) ++counts[static_cast<std::size_t>(r.target)];
  return counts;
}

std::vector<std::size_t> EegDataset::indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == split) out.push_back(i);
  return out;
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

std::optional<double> parse_number(std::string_view field) {
  if (field.empty()) return std::nullopt;
  if (field.front() == '+') field.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

}  // namespace

EegDataset parse_csv(std::istream& in, const LoadOptions& options) {
  EegDataset dataset;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  bool layout_known = false;
  const std::size_t numeric_fields = kWindowLength + 1;

  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (!layout_known) {
      dataset.has_id_column = !parse_number(fields.front()).has_value() || fields.size() == numeric_fields + 1;
      layout_known = true;
    }
    const std::size_t expected = numeric_fields + (dataset.has_id_column ? 1 : 0);
    if (fields.size() != expected) {
      throw DataError(DataErrorKind::column_count, line_no,
                      "expected " + std::to_string(expected) + " fields (" + std::to_string(kWindowLength) +
                          " samples + label" + (dataset.has_id_column ? " + id" : "") + "), got " +
                          std::to_string(fields.size()));
    }
    EegRecord record;
    std::size_t col = 0;
    if (dataset.has_id_column) record.id = std::string(fields[col++]);
    record.samples.resize(kWindowLength);
    for (std::size_t i = 0; i < kWindowLength; ++i, ++col) {
      const auto v = parse_number(fields[col]);
      if (!v) {
        throw DataError(DataErrorKind::non_numeric, line_no,
                        "sample " + std::to_string(i + 1) + " is not numeric: '" + std::string(fields[col]) + "'");
      }
      record.samples[i] = *v;
    }
    const auto label = parse_number(fields[col]);
    if (!label) throw DataError(DataErrorKind::non_numeric, line_no, "label is not numeric: '" + std::string(fields[col]) + "'");
    if (*label != std::floor(*label) || *label < 1.0 || *label > 5.0)
      throw DataError(DataErrorKind::label_range, line_no, "label outside 1..5: " + std::string(fields[col]));
    record.label = static_cast<int>(*label);
    record.source_index = dataset.records.size();
    dataset.records.push_back(std::move(record));
  }
  if (dataset.records.empty()) throw DataError(DataErrorKind::empty_file, 0, "no data rows (a header row is required)");
  if (options.verify_official_counts) verify_official_counts(dataset);
  return dataset;
}

EegDataset load_csv(const std::filesystem::path& path, const LoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::io, 0, "cannot open " + path.string());
  return parse_csv(in, options);
}

void verify_official_counts(const EegDataset& dataset) {
  if (dataset.records.size() != kOfficialRecordCount) {
    throw DataError(DataErrorKind::count_mismatch, 0,
                    "expected " + std::to_string(kOfficialRecordCount) + " records, got " + std::to_string(dataset.records.size()));
  }
  const auto counts = dataset.label_counts();
  for (int label = 1; label <= 5; ++label) {
    const auto n = counts[static_cast<std::size_t>(label - 1)];
    if (n != kOfficialPerLabel) {
      throw DataError(DataErrorKind::count_mismatch, 0,
                      std::string("label ") + label_letter(label) + ": expected " + std::to_string(kOfficialPerLabel) +
                          " records, got " + std::to_string(n));
    }
  }
}

void write_csv(const std::filesystem::path& path, const EegDataset& dataset) {
  std::ofstream out(path);
  if (!out) throw DataError(DataErrorKind::io, 0, "cannot write " + path.string());
  if (dataset.has_id_column) out << "\"\",";
  for (std::size_t i = 1; i <= kWindowLength; ++i) out << 'X' << i << ',';
  out << "y\n";
  char buf[32];
  for (const auto& r : dataset.records) {
    if (dataset.has_id_column) out << (r.id.empty() ? "row" + std::to_string(r.source_index) : r.id) << ',';
    for (const double v : r.samples) {
      const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, end - buf) << ',';
    }
    out << r.label << '\n';
  }
  if (!out) throw DataError(DataErrorKind::io, 0, "write failed for " + path.string());
}

EegDataset map_group(const EegDataset& dataset, GroupMode mode) {
  EegDataset out;
  out.has_id_column = dataset.has_id_column;
  out.mapping = GroupMapping::for_mode(mode);
  for (const auto& record : dataset.records) {
    const auto target = out.mapping->target_for(record.label);
    if (!target) continue;
    auto copy = record;
    copy.target = *target;
    out.records.push_back(std::move(copy));
  }
  return out;
}

EegDataset stratified_split(const EegDataset& dataset, const SplitRatios& ratios, std::uint64_t seed) {
  const double sum = ratios.train + ratios.val + ratios.test;
  if (std::abs(sum - 1.0) > 1e-9 || ratios.train < 0 || ratios.val < 0 || ratios.test < 0) {
    std::ostringstream msg;
    msg << "split ratios must be non-negative and sum to 1 (got " << ratios.train << " + " << ratios.val << " + "
        << ratios.test << " = " << sum << ")";
    throw DataError(DataErrorKind::ratio_sum, 0, msg.str());
  }
  EegDataset out = dataset;
  out.splits.assign(out.records.size(), Split::unassigned);
  out.split_seed = seed;

  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto& r = out.records[i];
    by_class[r.target >= 0 ? r.target : r.label - 1].push_back(i);
  }
  std::mt19937_64 rng(seed);
  for (auto& [cls, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const double n = static_cast<double>(members.size());
    const auto n_val = static_cast<std::size_t>(std::llround(n * ratios.val));
    const auto n_test = static_cast<std::size_t>(std::llround(n * ratios.test));
    for (std::size_t k = 0; k < members.size(); ++k) {
      Split s = Split::train;
      if (k < n_val) s = Split::val;
      else if (k < n_val + n_test) s = Split::test;
      out.splits[members[k]] = s;
    }
  }
  return out;
}

NormStats compute_norm_stats(const EegDataset& dataset) {
  const auto train = dataset.splits.empty() ? std::vector<std::size_t>{} : dataset.indices(Split::train);
  if (train.empty()) throw DataError(DataErrorKind::zero_std, 0, "no training records to compute normalization from");
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto i : train)
    for (const double v : dataset.records[i].samples) {
      sum += v;
      ++count;
    }
  const double mean = sum / static_cast<double>(count);
  double sq = 0.0;
  for (const auto i : train)
    for (const double v : dataset.records[i].samples) sq += (v - mean) * (v - mean);
  const double std = std::sqrt(sq / static_cast<double>(count));
  if (!(std > 0.0)) throw DataError(DataErrorKind::zero_std, 0, "training data has zero standard deviation");
  return {mean, std};
}

std::vector<double> normalize(std::span<const double> samples, const NormStats& stats) {
  std::vector<double> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) out[i] = (samples[i] - stats.mean) / stats.std;
  return out;
}

void write_split_manifest(const std::filesystem::path& path, const EegDataset& dataset) {
  if (dataset.splits.size() != dataset.records.size())
    throw DataError(DataErrorKind::split_manifest, 0, "dataset has no split assignment to write");
  std::ofstream out(path);
  if (!out) throw DataError(DataErrorKind::io, 0, "cannot write " + path.string());
  out << "# source_index,split\n";
  for (std::size_t i = 0; i < dataset.records.size(); ++i)
    out << dataset.records[i].source_index << ',' << to_string(dataset.splits[i]) << '\n';
}

EegDataset apply_split_manifest(const EegDataset& dataset, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError(DataErrorKind::io, 0, "cannot open " + path.string());
  std::map<std::size_t, Split> assignment;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    const auto fields = split_fields(line);
    const auto index = fields.size() == 2 ? parse_number(fields[0]) : std::nullopt;
    if (!index) throw DataError(DataErrorKind::split_manifest, line_no, "expected 'source_index,split'");
    try {
      assignment[static_cast<std::size_t>(*index)] = parse_split(std::string(fields[1]));
    } catch (const ConfigError& e) {
      throw DataError(DataErrorKind::split_manifest, line_no, e.what());
    }
  }
  EegDataset out = dataset;
  out.splits.assign(out.records.size(), Split::unassigned);
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    const auto it = assignment.find(out.records[i].source_index);
    if (it == assignment.end())
      throw DataError(DataErrorKind::split_manifest, 0,
                      "record " + std::to_string(out.records[i].source_index) + " missing from " + path.string());
    out.splits[i] = it->second;
  }
  return out;
}

}  // namespace epilnet
