#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace epilnet {

struct Location {
  double lat = 0.0;
  double lon = 0.0;
  std::string source;  // "network" | "gps"
  bool stale = false;
};

/// Kinds: "pre-ictal-alarm", "ictal", "hospital-alert". Duration only on "ictal".
struct SeizureEvent {
  std::string id;  // assigned by the store
  std::string patient_id;
  std::string kind;
  double timestamp = 0.0;                 // seconds
  std::optional<Location> location;       // nullopt: location unavailable
  std::optional<double> duration_seconds;
  std::vector<double> probabilities;
  bool hospital_alerted = false;
  bool truncated = false;                 // episode cut short by a service stop

  friend bool operator==(const SeizureEvent&, const SeizureEvent&) = default;
};

bool operator==(const Location& a, const Location& b);

/// Carries the HTTP status the service should answer with (400 or 422).
class EventValidationError : public std::invalid_argument {
 public:
  EventValidationError(int status, const std::string& message) : std::invalid_argument(message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

bool valid_patient_id(const std::string& id);

/// Parses a request body into an event for `patient_id`; the id field is ignored.
SeizureEvent parse_event(const std::string& body, const std::string& patient_id);
std::string event_to_json(const SeizureEvent& event);

/// Append-only JSON-lines file plus an in-memory per-patient index rebuilt on open.
class EventStore {
 public:
  explicit EventStore(std::filesystem::path path);

  /// Validates, assigns an id, appends to disk, returns the id.
  std::string append(SeizureEvent event);
  /// Sorted by timestamp; insertion order breaks ties. Unknown patients give an empty list.
  std::vector<SeizureEvent> list(const std::string& patient_id) const;
  std::size_t size() const;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::shared_mutex mutex_;
  std::ofstream out_;
  std::map<std::string, std::vector<SeizureEvent>> by_patient_;
  std::size_t next_id_ = 1;
  std::size_t count_ = 0;
};

void validate_event(const SeizureEvent& event);

}  // namespace epilnet
