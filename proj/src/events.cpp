#include "epilnet/events.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

namespace epilnet {

using nlohmann::json;

bool operator==(const Location& a, const Location& b) {
  return a.lat == b.lat && a.lon == b.lon && a.source == b.source && a.stale == b.stale;
}

bool valid_patient_id(const std::string& id) {
  if (id.empty() || id.size() > 128) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.';
  });
}

void validate_event(const SeizureEvent& event) {
  if (!valid_patient_id(event.patient_id)) throw EventValidationError(400, "invalid patient id '" + event.patient_id + "'");
  if (event.kind != "pre-ictal-alarm" && event.kind != "ictal" && event.kind != "hospital-alert")
    throw EventValidationError(400, "kind must be pre-ictal-alarm, ictal or hospital-alert (got '" + event.kind + "')");
  if (!std::isfinite(event.timestamp)) throw EventValidationError(400, "timestamp must be a finite number");
  if (event.kind == "ictal" && !event.duration_seconds)
    throw EventValidationError(422, "ictal events require duration_seconds");
  if (event.kind != "ictal" && event.duration_seconds)
    throw EventValidationError(422, "duration_seconds is only allowed on ictal events");
  if (event.duration_seconds && (!std::isfinite(*event.duration_seconds) || *event.duration_seconds < 0))
    throw EventValidationError(400, "duration_seconds must be a non-negative number");
  if (event.location) {
    const auto& loc = *event.location;
    if (loc.source != "network" && loc.source != "gps")
      throw EventValidationError(400, "location.source must be network or gps");
    if (!std::isfinite(loc.lat) || !std::isfinite(loc.lon) || std::abs(loc.lat) > 90 || std::abs(loc.lon) > 180)
      throw EventValidationError(400, "location out of range");
  }
}

namespace {

json to_json(const SeizureEvent& e) {
  json j;
  j["id"] = e.id;
  j["patient_id"] = e.patient_id;
  j["kind"] = e.kind;
  j["timestamp"] = e.timestamp;
  if (e.location)
    j["location"] = {{"lat", e.location->lat}, {"lon", e.location->lon}, {"source", e.location->source}, {"stale", e.location->stale}};
  else
    j["location"] = nullptr;
  if (e.duration_seconds) j["duration_seconds"] = *e.duration_seconds;
  j["probabilities"] = e.probabilities;
  j["hospital_alerted"] = e.hospital_alerted;
  j["truncated"] = e.truncated;
  return j;
}

SeizureEvent from_json(const json& j, const std::string& patient_id) {
  if (!j.is_object()) throw EventValidationError(400, "event must be a JSON object");
  SeizureEvent e;
  e.patient_id = patient_id;
  try {
    if (j.contains("id") && j["id"].is_string()) e.id = j["id"].get<std::string>();
    e.kind = j.at("kind").get<std::string>();
    if (!j.at("timestamp").is_number()) throw EventValidationError(400, "timestamp must be a number");
    e.timestamp = j["timestamp"].get<double>();
    if (j.contains("location") && !j["location"].is_null()) {
      const auto& loc = j["location"];
      if (!loc.at("lat").is_number() || !loc.at("lon").is_number()) throw EventValidationError(400, "location lat/lon must be numbers");
      e.location = Location{loc["lat"].get<double>(), loc["lon"].get<double>(), loc.at("source").get<std::string>(),
                            loc.value("stale", false)};
    }
    if (j.contains("duration_seconds") && !j["duration_seconds"].is_null()) {
      if (!j["duration_seconds"].is_number()) throw EventValidationError(400, "duration_seconds must be a number");
      e.duration_seconds = j["duration_seconds"].get<double>();
    }
    if (j.contains("probabilities")) e.probabilities = j["probabilities"].get<std::vector<double>>();
    e.hospital_alerted = j.value("hospital_alerted", false);
    e.truncated = j.value("truncated", false);
  } catch (const json::exception& ex) {
    throw EventValidationError(400, std::string("malformed event: ") + ex.what());
  }
  return e;
}

}  // namespace

SeizureEvent parse_event(const std::string& body, const std::string& patient_id) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& ex) {
    throw EventValidationError(400, std::string("body is not valid JSON: ") + ex.what());
  }
  auto e = from_json(j, patient_id);
  e.id.clear();
  validate_event(e);
  return e;
}

std::string event_to_json(const SeizureEvent& event) { return to_json(event).dump(); }

EventStore::EventStore(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  {
    std::ifstream in(path_);
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("patient_id")) continue;  // torn tail write
      auto e = from_json(j, j["patient_id"].get<std::string>());
      by_patient_[e.patient_id].push_back(e);
      ++count_;
      next_id_ = std::max(next_id_, static_cast<std::size_t>(std::strtoull(e.id.c_str() + (e.id.starts_with("evt-") ? 4 : 0), nullptr, 10)) + 1);
    }
  }
  out_.open(path_, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open event store " + path_.string());
}

std::string EventStore::append(SeizureEvent event) {
  validate_event(event);
  std::unique_lock lock(mutex_);
  event.id = "evt-" + std::to_string(next_id_++);
  out_ << event_to_json(event) << '\n';
  out_.flush();
  if (!out_) throw std::runtime_error("append to " + path_.string() + " failed");
  by_patient_[event.patient_id].push_back(event);
  ++count_;
  return event.id;
}

std::vector<SeizureEvent> EventStore::list(const std::string& patient_id) const {
  std::shared_lock lock(mutex_);
  const auto it = by_patient_.find(patient_id);
  if (it == by_patient_.end()) return {};
  auto out = it->second;
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
  return out;
}

std::size_t EventStore::size() const {
  std::shared_lock lock(mutex_);
  return count_;
}

}  // namespace epilnet
