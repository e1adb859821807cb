#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

#include "epilnet/checkpoint.hpp"
#include "epilnet/events.hpp"

namespace epilnet {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  std::optional<std::filesystem::path> checkpoint;
  std::filesystem::path event_store = "events.jsonl";
  std::size_t threads = 128;
  int timeout_seconds = 30;
};

struct HttpReply {
  int status = 200;
  std::string body;  // JSON
};

/// POST /predict, GET /health, POST|GET /patients/{id}/events. One immutable
/// model shared by every handler thread.
class InferenceService {
 public:
  explicit InferenceService(ServiceConfig config);
  ~InferenceService();
  InferenceService(const InferenceService&) = delete;
  InferenceService& operator=(const InferenceService&) = delete;

  void set_model(Checkpoint checkpoint);
  bool has_model() const;

  HttpReply handle_predict(const std::string& body) const;
  HttpReply handle_health() const;
  HttpReply handle_post_event(const std::string& patient_id, const std::string& body);
  HttpReply handle_get_events(const std::string& patient_id) const;

  /// Binds the listening socket and returns the port.
  int bind();
  /// Serves until stop(); bind() first.
  void run();
  /// bind() + run() on a background thread.
  int start();
  void stop();
  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace epilnet
