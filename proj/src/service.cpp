#include "epilnet/service.hpp"

#include <atomic>
#include <cmath>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

namespace epilnet {

using nlohmann::json;

namespace {

HttpReply error_reply(int status, const std::string& message, json extra = json::object()) {
  extra["error"] = message;
  return {status, extra.dump()};
}

}  // namespace

struct InferenceService::Impl {
  ServiceConfig config;
  std::shared_ptr<const Checkpoint> model;
  EventStore events;
  httplib::Server server;
  std::thread thread;
  int port = -1;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  explicit Impl(ServiceConfig cfg) : config(std::move(cfg)), events(config.event_store) {}

  std::shared_ptr<const Checkpoint> current() const { return std::atomic_load(&model); }
};

InferenceService::InferenceService(ServiceConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {
  if (impl_->config.checkpoint) set_model(load_checkpoint(*impl_->config.checkpoint));

  auto& server = impl_->server;
  const auto threads = impl_->config.threads;
  server.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  server.set_read_timeout(impl_->config.timeout_seconds, 0);
  server.set_write_timeout(impl_->config.timeout_seconds, 0);
  server.set_keep_alive_max_count(100000);
  server.set_payload_max_length(1 << 20);

  auto send = [](httplib::Response& res, const HttpReply& reply) {
    res.status = reply.status;
    res.set_content(reply.body, "application/json");
  };
  server.Post("/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_predict(req.body));
  });
  server.Get("/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, handle_health()); });
  server.Post(R"(/patients/([^/]+)/events)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_post_event(req.matches[1], req.body));
  });
  server.Get(R"(/patients/([^/]+)/events)", [this, send](const httplib::Request& req, httplib::Response& res) {
    send(res, handle_get_events(req.matches[1]));
  });
  server.set_exception_handler([](const httplib::Request& req, httplib::Response& res, std::exception_ptr ep) {
    std::string what = "internal error";
    try {
      std::rethrow_exception(ep);
    } catch (const std::exception& e) {
      what = e.what();
    } catch (...) {
    }
    spdlog::error("{} {}: {}", req.method, req.path, what);
    res.status = 500;
    res.set_content(json{{"error", what}}.dump(), "application/json");
  });
}

InferenceService::~InferenceService() { stop(); }

void InferenceService::set_model(Checkpoint checkpoint) {
  if (checkpoint.digest.empty()) checkpoint.digest = model_digest(checkpoint.model);
  std::atomic_store(&impl_->model, std::shared_ptr<const Checkpoint>(std::make_shared<Checkpoint>(std::move(checkpoint))));
}

bool InferenceService::has_model() const { return impl_->current() != nullptr; }

HttpReply InferenceService::handle_predict(const std::string& body) const {
  const auto started = std::chrono::steady_clock::now();
  const auto ckpt = impl_->current();
  if (!ckpt) return error_reply(503, "model not loaded");

  json request = json::parse(body, nullptr, false);
  if (request.is_discarded()) return error_reply(400, "body is not valid JSON");
  if (!request.is_object() || !request.contains("data")) return error_reply(400, "body must be an object with a 'data' array");
  const auto& data = request["data"];
  if (!data.is_array()) return error_reply(400, "'data' must be an array");
  if (data.size() != kWindowLength)
    return error_reply(400, "'data' must hold " + std::to_string(kWindowLength) + " values, got " + std::to_string(data.size()),
                       {{"expected_length", kWindowLength}, {"actual_length", data.size()}});
  std::vector<double> window(kWindowLength);
  for (std::size_t i = 0; i < kWindowLength; ++i) {
    if (!data[i].is_number()) return error_reply(400, "'data[" + std::to_string(i) + "]' is not a number");
    window[i] = data[i].get<double>();
    if (!std::isfinite(window[i])) return error_reply(400, "'data[" + std::to_string(i) + "]' is not finite");
  }

  const auto prediction = predict(ckpt->model, window, ckpt->norm);
  const auto& names = ckpt->metadata.class_names;
  json reply;
  reply["label_index"] = prediction.label_index;
  reply["label"] = prediction.label_index < names.size() ? names[prediction.label_index] : std::to_string(prediction.label_index);
  reply["probabilities"] = prediction.probabilities;
  reply["model_digest"] = ckpt->digest;
  reply["processing_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return {200, reply.dump()};
}

HttpReply InferenceService::handle_health() const {
  const auto ckpt = impl_->current();
  json reply;
  reply["status"] = ckpt ? "ok" : "degraded";
  reply["model_digest"] = ckpt ? json(ckpt->digest) : json(nullptr);
  reply["group_mode"] = ckpt ? json(to_string(ckpt->metadata.group_mode)) : json(nullptr);
  reply["class_names"] = ckpt ? json(ckpt->metadata.class_names) : json::array();
  reply["uptime_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - impl_->started).count();
  reply["events_stored"] = impl_->events.size();
  return {200, reply.dump()};
}

HttpReply InferenceService::handle_post_event(const std::string& patient_id, const std::string& body) {
  if (!valid_patient_id(patient_id)) return error_reply(400, "invalid patient id");
  try {
    const auto id = impl_->events.append(parse_event(body, patient_id));
    return {201, json{{"id", id}, {"patient_id", patient_id}}.dump()};
  } catch (const EventValidationError& e) {
    return error_reply(e.status(), e.what());
  }
}

HttpReply InferenceService::handle_get_events(const std::string& patient_id) const {
  if (!valid_patient_id(patient_id)) return error_reply(400, "invalid patient id");
  json out = json::array();
  for (const auto& e : impl_->events.list(patient_id)) out.push_back(json::parse(event_to_json(e)));
  return {200, out.dump()};
}

int InferenceService::bind() {
  if (impl_->port >= 0) return impl_->port;
  auto& cfg = impl_->config;
  impl_->port = cfg.port == 0 ? impl_->server.bind_to_any_port(cfg.host)
                              : (impl_->server.bind_to_port(cfg.host, cfg.port) ? cfg.port : -1);
  if (impl_->port < 0) throw std::runtime_error("cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  return impl_->port;
}

void InferenceService::run() {
  bind();
  spdlog::info("serving on {}:{} (model {}, events {})", impl_->config.host, impl_->port,
               has_model() ? impl_->current()->digest : std::string("none"), impl_->config.event_store.string());
  impl_->server.listen_after_bind();
}

int InferenceService::start() {
  const int p = bind();
  impl_->thread = std::thread([this] { run(); });
  impl_->server.wait_until_ready();
  return p;
}

void InferenceService::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

int InferenceService::port() const { return impl_->port; }

}  // namespace epilnet
