#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace epilnet {

/// Request bodies for one labeled section of a run ("A".."E" or any tag).
struct PayloadSet {
  std::string label;
  std::vector<std::vector<double>> windows;
};

enum class LoadMode {
  concurrent,  // clients assigned round-robin to the payload sets, one run
  sequential,  // one full run per payload set
};

struct LoadConfig {
  std::string url = "http://127.0.0.1:8080";
  std::size_t clients = 100;
  double duration_seconds = 60.0;
  double rampup_seconds = 10.0;
  std::vector<PayloadSet> payloads;
  LoadMode mode = LoadMode::concurrent;
  bool preflight = true;
  int timeout_seconds = 30;

  void validate() const;
};

/// One request. status 0 means the connection failed before any HTTP status.
struct LoadSample {
  std::string label;
  std::size_t client = 0;
  std::int64_t start_us = 0;  // from the start of the run
  std::int64_t latency_us = 0;
  int status = 0;

  bool ok() const { return status == 200; }
};

class LoadError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Closed-loop clients: client i starts at i * rampup / clients and keeps one
/// request in flight until rampup + duration has elapsed.
std::vector<LoadSample> run_load(const LoadConfig& config);

struct LoadRow {
  std::string label;
  std::size_t samples = 0;
  std::size_t completed = 0;
  std::size_t failed = 0;
  double average_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
  double std_ms = 0.0;  // sample std; 0 for a single sample
  double p99_ms = 0.0;  // nearest rank
  double span_s = 0.0;  // first start to last finish
  double throughput_per_sec = 0.0;  // completed / span
};

/// Rows in order of first appearance of each label in the log.
std::vector<LoadRow> summarize(const std::vector<LoadSample>& log);

/// Aligned text table with the columns Samples, Average, Min, Max, Std. dev., Throughput.
std::string format_table(const std::vector<LoadRow>& rows);
std::string format_throughput(double per_second);

void write_load_log(std::ostream& out, const std::vector<LoadSample>& log);
std::vector<LoadSample> read_load_log(std::istream& in);
void write_load_summary(std::ostream& out, const std::vector<LoadRow>& rows);

}  // namespace epilnet
