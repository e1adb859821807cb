#include "epilnet/loadtest.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "epilnet/errors.hpp"

namespace epilnet {

void LoadConfig::validate() const {
  if (clients < 1) throw ConfigError("clients must be >= 1");
  if (!(duration_seconds > 0.0)) throw ConfigError("duration must be > 0");
  if (!(rampup_seconds >= 0.0)) throw ConfigError("ramp-up must be >= 0");
  if (payloads.empty()) throw ConfigError("no payloads to send");
  for (const auto& p : payloads)
    if (p.windows.empty()) throw ConfigError("payload set '" + p.label + "' is empty");
}

namespace {

using Clock = std::chrono::steady_clock;

std::vector<LoadSample> run_once(const LoadConfig& config, const std::vector<const PayloadSet*>& sets) {
  std::vector<std::vector<std::string>> bodies;
  for (const auto* set : sets) {
    auto& b = bodies.emplace_back();
    for (const auto& w : set->windows) b.push_back(nlohmann::json{{"data", w}}.dump());
  }

  const auto t0 = Clock::now();
  const auto end = t0 + std::chrono::duration_cast<Clock::duration>(
                            std::chrono::duration<double>(config.rampup_seconds + config.duration_seconds));
  std::mutex merge_mutex;
  std::vector<LoadSample> log;

  auto client_main = [&](std::size_t client) {
    const std::size_t set = client % sets.size();
    const double offset = config.rampup_seconds * static_cast<double>(client) / static_cast<double>(config.clients);
    std::this_thread::sleep_until(t0 + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(offset)));

    httplib::Client cli(config.url);
    cli.set_keep_alive(true);
    cli.set_connection_timeout(config.timeout_seconds, 0);
    cli.set_read_timeout(config.timeout_seconds, 0);
    cli.set_write_timeout(config.timeout_seconds, 0);
    std::vector<LoadSample> local;
    std::size_t k = client / sets.size();
    while (Clock::now() < end) {
      const auto& body = bodies[set][k++ % bodies[set].size()];
      const auto started = Clock::now();
      const auto res = cli.Post("/predict", body, "application/json");
      const auto finished = Clock::now();
      LoadSample s;
      s.label = sets[set]->label;
      s.client = client;
      s.start_us = std::chrono::duration_cast<std::chrono::microseconds>(started - t0).count();
      s.latency_us = std::chrono::duration_cast<std::chrono::microseconds>(finished - started).count();
      s.status = res ? res->status : 0;
      local.push_back(std::move(s));
      if (!res) std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    std::lock_guard lock(merge_mutex);
    log.insert(log.end(), std::make_move_iterator(local.begin()), std::make_move_iterator(local.end()));
  };

  std::vector<std::thread> threads;
  threads.reserve(config.clients);
  for (std::size_t c = 0; c < config.clients; ++c) threads.emplace_back(client_main, c);
  for (auto& t : threads) t.join();
  std::sort(log.begin(), log.end(), [](const LoadSample& a, const LoadSample& b) {
    return std::tie(a.start_us, a.client) < std::tie(b.start_us, b.client);
  });
  return log;
}

void preflight(const LoadConfig& config) {
  httplib::Client cli(config.url);
  cli.set_connection_timeout(5, 0);
  cli.set_read_timeout(config.timeout_seconds, 0);
  const auto res = cli.Get("/health");
  if (!res)
    throw LoadError("cannot reach " + config.url + "/health: " + httplib::to_string(res.error()) +
                    " (is `epilnet serve` running on that host and port?)");
  if (res->status != 200) throw LoadError(config.url + "/health answered HTTP " + std::to_string(res->status));
  const auto health = nlohmann::json::parse(res->body, nullptr, false);
  if (health.is_object() && health.value("status", "") != "ok")
    spdlog::warn("service at {} reports status '{}'", config.url, health.value("status", "?"));
}

}  // namespace

std::vector<LoadSample> run_load(const LoadConfig& config) {
  config.validate();
  if (config.preflight) preflight(config);
  if (config.mode == LoadMode::concurrent) {
    std::vector<const PayloadSet*> sets;
    for (const auto& p : config.payloads) sets.push_back(&p);
    return run_once(config, sets);
  }
  std::vector<LoadSample> log;
  std::int64_t shift = 0;
  for (const auto& p : config.payloads) {
    spdlog::info("load section {}: {} clients, {} s + {} s ramp-up", p.label, config.clients, config.duration_seconds,
                 config.rampup_seconds);
    auto part = run_once(config, {&p});
    std::int64_t last = 0;
    for (auto& s : part) {
      last = std::max(last, s.start_us + s.latency_us);
      s.start_us += shift;
    }
    shift += last;
    log.insert(log.end(), part.begin(), part.end());
  }
  return log;
}

std::vector<LoadRow> summarize(const std::vector<LoadSample>& log) {
  if (log.empty()) throw LoadError("cannot summarize an empty load log");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const LoadSample*>> groups;
  for (const auto& s : log) {
    auto& g = groups[s.label];
    if (g.empty()) order.push_back(s.label);
    g.push_back(&s);
  }
  std::vector<LoadRow> rows;
  for (const auto& label : order) {
    const auto& g = groups[label];
    LoadRow row;
    row.label = label;
    row.samples = g.size();
    std::int64_t sum = 0, lo = g.front()->latency_us, hi = lo;
    std::int64_t first = g.front()->start_us, last = 0;
    std::vector<std::int64_t> latencies;
    latencies.reserve(g.size());
    for (const auto* s : g) {
      if (s->ok()) ++row.completed;
      sum += s->latency_us;
      lo = std::min(lo, s->latency_us);
      hi = std::max(hi, s->latency_us);
      first = std::min(first, s->start_us);
      last = std::max(last, s->start_us + s->latency_us);
      latencies.push_back(s->latency_us);
    }
    row.failed = row.samples - row.completed;
    const double n = static_cast<double>(row.samples);
    const double mean_us = static_cast<double>(sum) / n;
    row.average_ms = mean_us / 1000.0;
    row.min_ms = static_cast<double>(lo) / 1000.0;
    row.max_ms = static_cast<double>(hi) / 1000.0;
    double ss = 0.0;
    for (const auto* s : g) {
      const double d = static_cast<double>(s->latency_us) - mean_us;
      ss += d * d;
    }
    row.std_ms = row.samples > 1 ? std::sqrt(ss / (n - 1.0)) / 1000.0 : 0.0;
    std::sort(latencies.begin(), latencies.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.99 * n));
    row.p99_ms = static_cast<double>(latencies[std::max<std::size_t>(rank, 1) - 1]) / 1000.0;
    row.span_s = static_cast<double>(last - first) / 1e6;
    row.throughput_per_sec = row.span_s > 0.0 ? static_cast<double>(row.completed) / row.span_s : 0.0;
    rows.push_back(row);
  }
  return rows;
}

std::string format_throughput(double per_second) {
  char buf[64];
  if (per_second >= 1.0 || per_second == 0.0)
    std::snprintf(buf, sizeof buf, "%.1f /sec", per_second);
  else
    std::snprintf(buf, sizeof buf, "%.1f /min", per_second * 60.0);
  return buf;
}

std::string format_table(const std::vector<LoadRow>& rows) {
  const std::vector<std::string> head{"Label", "Samples", "Average", "Min", "Max", "Std. dev.", "Throughput", "p99", "Errors"};
  std::vector<std::vector<std::string>> cells{head};
  auto ms = [](double v) { return std::to_string(static_cast<long long>(std::llround(v))); };
  for (const auto& r : rows) {
    char sd[32];
    std::snprintf(sd, sizeof sd, "%.2f", r.std_ms);
    cells.push_back({"Request " + r.label, std::to_string(r.samples), ms(r.average_ms), ms(r.min_ms), ms(r.max_ms), sd,
                     format_throughput(r.throughput_per_sec), ms(r.p99_ms), std::to_string(r.failed)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& line : cells)
    for (std::size_t i = 0; i < line.size(); ++i) width[i] = std::max(width[i], line[i].size());
  std::ostringstream out;
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (i == 0)
        out << line[i] << std::string(width[i] - line[i].size(), ' ');
      else
        out << "  " << std::string(width[i] - line[i].size(), ' ') << line[i];
    }
    out << '\n';
  }
  out << "(latencies in milliseconds)\n";
  return out.str();
}

void write_load_log(std::ostream& out, const std::vector<LoadSample>& log) {
  out << "label,client,start_us,latency_us,status\n";
  for (const auto& s : log) out << s.label << ',' << s.client << ',' << s.start_us << ',' << s.latency_us << ',' << s.status << '\n';
}

std::vector<LoadSample> read_load_log(std::istream& in) {
  std::vector<LoadSample> log;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1 || line.empty()) continue;
    std::istringstream fields(line);
    LoadSample s;
    std::string client, start, latency, status;
    if (!std::getline(fields, s.label, ',') || !std::getline(fields, client, ',') || !std::getline(fields, start, ',') ||
        !std::getline(fields, latency, ',') || !std::getline(fields, status))
      throw LoadError("load log line " + std::to_string(line_no) + ": expected 5 fields");
    try {
      s.client = std::stoul(client);
      s.start_us = std::stoll(start);
      s.latency_us = std::stoll(latency);
      s.status = std::stoi(status);
    } catch (const std::exception&) {
      throw LoadError("load log line " + std::to_string(line_no) + ": non-numeric field");
    }
    log.push_back(std::move(s));
  }
  return log;
}

void write_load_summary(std::ostream& out, const std::vector<LoadRow>& rows) {
  out << "label,samples,completed,failed,average_ms,min_ms,max_ms,std_ms,p99_ms,span_s,throughput_per_sec\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.label.c_str(), r.samples,
                  r.completed, r.failed, r.average_ms, r.min_ms, r.max_ms, r.std_ms, r.p99_ms, r.span_s,
                  r.throughput_per_sec);
    out << buf;
  }
}

}  // namespace epilnet
