#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "epilnet/model.hpp"

namespace epilnet {

enum class GroupMode { three_class, five_class };

std::string to_string(GroupMode mode);
/// Accepts "three"/"3"/"three_class" and "five"/"5"/"five_class".
GroupMode parse_group_mode(const std::string& text);

enum class Split : std::uint8_t { train, val, test, unassigned };

std::string to_string(Split split);
Split parse_split(const std::string& text);

/// Letter A..E for original labels 1..5.
char label_letter(int label);
int label_from_letter(char letter);

struct EegRecord {
  std::string id;                // empty when the file has no ID column
  std::vector<double> samples;   // kWindowLength values
  int label = 0;                 // original class 1..5 (A..E)
  std::size_t source_index = 0;  // data-row position in the source file
  int target = -1;               // mapped class index, -1 before map_group
};

/// {A,B} -> healthy, D -> pre-ictal, E -> ictal (C excluded) or the identity A..E -> 0..4.
struct GroupMapping {
  GroupMode mode = GroupMode::five_class;
  std::vector<std::string> names;

  static GroupMapping for_mode(GroupMode mode);
  std::optional<int> target_for(int label) const;
  std::size_t class_count() const { return names.size(); }
};

struct EegDataset {
  std::vector<EegRecord> records;
  std::vector<Split> splits;  // parallel to records; empty until split
  std::optional<GroupMapping> mapping;
  bool has_id_column = false;
  std::uint64_t split_seed = 0;

  std::array<std::size_t, 5> label_counts() const;
  std::vector<std::size_t> target_counts() const;
  std::vector<std::size_t> indices(Split split) const;
  std::size_t count(Split split) const { return indices(split).size(); }
};

enum class DataErrorKind {
  io,
  empty_file,
  column_count,
  non_numeric,
  label_range,
  count_mismatch,
  ratio_sum,
  zero_std,
  split_manifest,
};

std::string to_string(DataErrorKind kind);

class DataError : public std::runtime_error {
 public:
  DataError(DataErrorKind kind, std::size_t line, const std::string& message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message), kind_(kind), line_(line) {}

  DataErrorKind kind() const noexcept { return kind_; }
  /// 1-based line in the source file; 0 when not tied to a line.
  std::size_t line() const noexcept { return line_; }

 private:
  DataErrorKind kind_;
  std::size_t line_;
};

inline constexpr std::size_t kOfficialRecordCount = 11500;
inline constexpr std::size_t kOfficialPerLabel = 2300;

struct LoadOptions {
  /// Require the UCI layout: 11500 rows, 2300 per label.
  bool verify_official_counts = false;
};

/// Header row, optional leading ID column (detected from a non-numeric first
/// field on the first data row), 178 samples, integer label 1..5.
EegDataset load_csv(const std::filesystem::path& path, const LoadOptions& options = {});
EegDataset parse_csv(std::istream& in, const LoadOptions& options = {});

void verify_official_counts(const EegDataset& dataset);

/// Writes the same layout load_csv reads (ID column kept when present).
void write_csv(const std::filesystem::path& path, const EegDataset& dataset);

/// Three-class drops label C and remaps; five-class keeps everything. Clears splits.
EegDataset map_group(const EegDataset& dataset, GroupMode mode);

struct SplitRatios {
  double train = 0.76;
  double val = 0.12;
  double test = 0.12;
};

/// Per mapped class: seeded shuffle, then round(n*val) to val, round(n*test) to
/// test, the rest to train.
EegDataset stratified_split(const EegDataset& dataset, const SplitRatios& ratios, std::uint64_t seed);

/// Scalar mean and population std over every sample value of the train split.
NormStats compute_norm_stats(const EegDataset& dataset);
std::vector<double> normalize(std::span<const double> samples, const NormStats& stats);

/// Sidecar file: one "source_index,split" line per record.
void write_split_manifest(const std::filesystem::path& path, const EegDataset& dataset);
EegDataset apply_split_manifest(const EegDataset& dataset, const std::filesystem::path& path);

}  // namespace epilnet
