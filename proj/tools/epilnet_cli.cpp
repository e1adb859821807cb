#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "epilnet/alert.hpp"
#include "epilnet/checkpoint.hpp"
#include "epilnet/data.hpp"
#include "epilnet/loadtest.hpp"
#include "epilnet/plot.hpp"
#include "epilnet/service.hpp"
#include "epilnet/synthetic.hpp"
#include "epilnet/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace epilnet;

namespace {

constexpr const char* kFormats = R"(
File formats:
  data CSV        header row, optional leading ID column, 178 sample columns, label 1..5
  split manifest  "source_index,split" per record (split = train|val|test)
  checkpoint      "EPNT1\n" <header bytes>"\n" <JSON header>"\n" <little-endian float32 payload>
  epoch report    epoch,train_loss,train_acc,val_acc,best
  load raw log    label,client,start_us,latency_us,status
  notifications   JSON lines {channel,class,location,recipient,time[,duration_seconds]}
  contacts        JSON lines {name,phone,role}
Environment: EPILNET_DATA is the default for --data.)";

struct RunDir {
  fs::path root = "runs";
  fs::path path;

  fs::path create(const std::string& command, std::uint64_t seed) {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    const std::string base = std::string(stamp) + "-seed" + std::to_string(seed) + "-" + command;
    path = root / base;
    for (int k = 2; fs::exists(path); ++k) path = root / (base + "-" + std::to_string(k));
    fs::create_directories(path);
    return path;
  }
};

std::string iso_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

void announce(const std::string& command, const json& config, const fs::path& run_dir) {
  json resolved = config;
  resolved["command"] = command;
  if (!run_dir.empty()) {
    resolved["run_dir"] = run_dir.string();
    write_text(run_dir / "config.json", resolved.dump(2) + "\n");
  }
  std::cout << "config " << resolved.dump() << std::endl;
}

std::string resolve_data(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("EPILNET_DATA"); env && *env) return env;
  throw ConfigError("no data file: pass --data or set EPILNET_DATA");
}

EegDataset load_data(const std::string& path, const std::string& counts) {
  LoadOptions opts;
  auto data = load_csv(path, opts);
  const bool verify = counts == "on" || (counts == "auto" && data.records.size() == kOfficialRecordCount);
  if (verify) verify_official_counts(data);
  const auto c = data.label_counts();
  spdlog::info("loaded {} records from {} (A..E: {} {} {} {} {})", data.records.size(), path, c[0], c[1], c[2], c[3], c[4]);
  return data;
}

SplitRatios parse_ratios(const std::string& text) {
  SplitRatios r;
  char c1 = 0, c2 = 0;
  std::istringstream in(text);
  if (!(in >> r.train >> c1 >> r.val >> c2 >> r.test) || c1 != ',' || c2 != ',')
    throw ConfigError("--split-ratios expects three comma-separated numbers, got '" + text + "'");
  return r;
}

EegDataset prepare_split(const EegDataset& data, GroupMode mode, const std::string& ratios, std::uint64_t seed,
                         const std::string& manifest) {
  const auto grouped = map_group(data, mode);
  if (!manifest.empty()) return apply_split_manifest(grouped, manifest);
  return stratified_split(grouped, parse_ratios(ratios), seed);
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const DataError*>(&e)) return "data." + to_string(static_cast<const DataError&>(e).kind());
  if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint." + to_string(static_cast<const CheckpointError&>(e).kind());
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const TrainingError*>(&e)) return "training";
  if (dynamic_cast<const LoadError*>(&e)) return "loadtest";
  if (dynamic_cast<const ScriptError*>(&e)) return "script";
  if (dynamic_cast<const StateError*>(&e)) return "state";
  if (dynamic_cast<const ContactError*>(&e)) return "contacts";
  return "runtime";
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data, group = "five", out, split_manifest, ratios = "0.76,0.12,0.12", counts = "auto";
  TrainConfig cfg;
};

int cmd_train(const TrainArgs& a, RunDir& run) {
  auto cfg = a.cfg;
  cfg.group_mode = parse_group_mode(a.group);
  const auto data_path = resolve_data(a.data);
  const auto dir = run.create("train", cfg.seed);
  announce("train",
           {{"data", data_path}, {"group", to_string(cfg.group_mode)}, {"epochs", cfg.epochs}, {"batch_size", cfg.batch_size},
            {"seed", cfg.seed}, {"learning_rate", cfg.learning_rate}, {"width_multiplier", cfg.width_multiplier},
            {"shuffle", cfg.shuffle}, {"eval_threads", cfg.eval_threads}, {"split_ratios", a.ratios},
            {"split_manifest", a.split_manifest}, {"out", a.out}},
           dir);

  const auto split = prepare_split(load_data(data_path, a.counts), cfg.group_mode, a.ratios, cfg.seed, a.split_manifest);
  write_split_manifest(dir / "split.csv", split);
  spdlog::info("split train/val/test = {}/{}/{}", split.count(Split::train), split.count(Split::val), split.count(Split::test));

  auto result = train(EpilNet<float>::build(cfg.model_config()), split, cfg, [](const EpochReport& r) {
    std::printf("epoch %2zu  loss %.4f  train_acc %.4f  val_acc %.4f%s  (%.1f s)\n", r.epoch, r.train_loss, r.train_accuracy,
                r.val_accuracy, r.best ? "  *best" : "", r.wall_seconds);
    std::fflush(stdout);
  });
  {
    std::ofstream reports(dir / "epochs.csv");
    write_epoch_reports(reports, result.reports);
  }
  result.best.metadata.created_at = iso_now();
  result.best.metadata.extra["split_ratios"] = a.ratios;
  result.best.metadata.extra["epochs"] = std::to_string(cfg.epochs);
  const fs::path ckpt_path = a.out.empty() ? dir / "model.ckpt" : fs::path(a.out);
  if (ckpt_path.has_parent_path()) fs::create_directories(ckpt_path.parent_path());
  const auto digest = save_checkpoint(result.best, ckpt_path);

  const auto test = evaluate(result.best, split, Split::test, cfg.eval_threads);
  const auto table = test.matrix.to_table(result.best.metadata.class_names);
  write_text(dir / "confusion_test.txt", table);
  const json metrics{{"best_epoch", result.best.metadata.best_epoch},
                     {"best_val_accuracy", result.best.metadata.val_accuracy},
                     {"test_accuracy", test.accuracy},
                     {"test_records", test.matrix.total()},
                     {"checkpoint", ckpt_path.string()},
                     {"digest", digest}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  std::cout << "best epoch " << result.best.metadata.best_epoch << ", test accuracy " << test.accuracy << "\n"
            << table << "checkpoint " << ckpt_path.string() << " " << digest << "\nrun dir " << dir.string() << "\n";
  return 0;
}

struct EvalArgs {
  std::string model, data, split = "test", split_manifest, ratios = "0.76,0.12,0.12", counts = "auto";
  std::uint64_t seed = 42;
  std::size_t threads = 1;
};

int cmd_eval(const EvalArgs& a, RunDir& run) {
  const auto ckpt = load_checkpoint(a.model);
  const auto data_path = resolve_data(a.data);
  const auto dir = run.create("eval", a.seed);
  announce("eval",
           {{"model", a.model}, {"digest", ckpt.digest}, {"data", data_path}, {"split", a.split}, {"seed", a.seed},
            {"split_ratios", a.ratios}, {"split_manifest", a.split_manifest}, {"eval_threads", a.threads}},
           dir);
  const auto split = prepare_split(load_data(data_path, a.counts), ckpt.metadata.group_mode, a.ratios, a.seed, a.split_manifest);
  const auto result = evaluate(ckpt, split, parse_split(a.split), a.threads);
  const auto table = result.matrix.to_table(ckpt.metadata.class_names);
  write_text(dir / ("confusion_" + a.split + ".txt"), table);
  write_text(dir / "metrics.json",
             json{{"split", a.split}, {"accuracy", result.accuracy}, {"records", result.matrix.total()}, {"digest", ckpt.digest}}.dump(2) +
                 "\n");
  std::cout << a.split << " accuracy " << result.accuracy << " (" << result.matrix.trace() << "/" << result.matrix.total() << ")\n"
            << table;
  return 0;
}

struct ServeArgs {
  std::string model, host = "0.0.0.0", events = "events.jsonl";
  int port = 8080, timeout = 30;
  std::size_t threads = 128;
};

int cmd_serve(const ServeArgs& a) {
  announce("serve",
           {{"model", a.model}, {"host", a.host}, {"port", a.port}, {"events", a.events}, {"threads", a.threads},
            {"timeout_seconds", a.timeout}},
           {});
  ServiceConfig cfg;
  cfg.host = a.host;
  cfg.port = a.port;
  if (!a.model.empty()) cfg.checkpoint = a.model;
  cfg.event_store = a.events;
  cfg.threads = a.threads;
  cfg.timeout_seconds = a.timeout;
  InferenceService service(cfg);
  if (!service.has_model()) spdlog::warn("no --model given: /health reports degraded and /predict answers 503");
  service.run();
  return 0;
}

struct LoadArgs {
  std::string url = "http://127.0.0.1:8080", data, split = "test", mode = "concurrent", counts = "auto";
  std::vector<std::string> classes{"A"};
  std::size_t clients = 100, windows = 50;
  double duration = 60, rampup = 10;
  bool no_preflight = false, synthetic = false;
  std::uint64_t seed = 42;
  int timeout = 30;
};

int cmd_loadtest(const LoadArgs& a, RunDir& run) {
  LoadConfig cfg;
  cfg.url = a.url;
  cfg.clients = a.clients;
  cfg.duration_seconds = a.duration;
  cfg.rampup_seconds = a.rampup;
  cfg.preflight = !a.no_preflight;
  cfg.timeout_seconds = a.timeout;
  if (a.mode == "concurrent")
    cfg.mode = LoadMode::concurrent;
  else if (a.mode == "sequential")
    cfg.mode = LoadMode::sequential;
  else
    throw ConfigError("--mode must be concurrent or sequential");

  std::vector<std::string> letters;
  for (const auto& c : a.classes) {
    std::stringstream ss(c);
    std::string part;
    while (std::getline(ss, part, ',')) {
      if (part.size() != 1) throw ConfigError("--class takes letters A..E, got '" + part + "'");
      letters.emplace_back(1, label_letter(label_from_letter(part[0])));
    }
  }
  std::string source;
  if (a.synthetic) {
    source = "synthetic";
    for (const auto& l : letters) {
      PayloadSet p{l, {}};
      for (std::size_t k = 0; k < a.windows; ++k) p.windows.push_back(synthetic_window(label_from_letter(l[0]), a.seed + k));
      cfg.payloads.push_back(std::move(p));
    }
  } else {
    source = resolve_data(a.data);
    const auto split = prepare_split(load_data(source, a.counts), GroupMode::five_class, "0.76,0.12,0.12", a.seed, "");
    const auto rows = split.indices(parse_split(a.split));
    for (const auto& l : letters) {
      PayloadSet p{l, {}};
      for (const auto i : rows)
        if (split.records[i].label == label_from_letter(l[0]) && p.windows.size() < a.windows) p.windows.push_back(split.records[i].samples);
      cfg.payloads.push_back(std::move(p));
    }
  }
  const auto dir = run.create("loadtest", a.seed);
  announce("loadtest",
           {{"url", a.url}, {"clients", a.clients}, {"duration_seconds", a.duration}, {"rampup_seconds", a.rampup},
            {"classes", letters}, {"mode", a.mode}, {"payload_source", source}, {"split", a.split},
            {"windows_per_class", a.windows}, {"preflight", cfg.preflight}, {"seed", a.seed}},
           dir);

  const auto log = run_load(cfg);
  const auto rows = summarize(log);
  {
    std::ofstream raw(dir / "raw.csv");
    write_load_log(raw, log);
    std::ofstream summary(dir / "summary.csv");
    write_load_summary(summary, rows);
  }
  const auto table = format_table(rows);
  write_text(dir / "summary.txt", table);
  std::cout << table << "raw log " << (dir / "raw.csv").string() << "\nsummary " << (dir / "summary.csv").string() << "\n";
  return 0;
}

struct SimArgs {
  std::string script, contacts = "contacts.jsonl", patient = "patient-1", service_url, model, predict_url, data, log;
  std::uint64_t seed = 42;
};

Classifier make_classifier(const SimArgs& a) {
  if (!a.model.empty()) {
    auto ckpt = std::make_shared<Checkpoint>(load_checkpoint(a.model));
    return [ckpt](const std::vector<double>& w) {
      const auto p = predict(ckpt->model, w, ckpt->norm);
      return std::pair{parse_category(ckpt->metadata.class_names.at(p.label_index)), p.probabilities};
    };
  }
  if (!a.predict_url.empty()) {
    auto url = a.predict_url;
    return [url](const std::vector<double>& w) {
      httplib::Client cli(url);
      const auto res = cli.Post("/predict", json{{"data", w}}.dump(), "application/json");
      if (!res || res->status != 200) throw std::runtime_error("prediction request to " + url + " failed");
      const auto body = json::parse(res->body);
      return std::pair{parse_category(body.at("label").get<std::string>()), body.at("probabilities").get<std::vector<double>>()};
    };
  }
  return {};
}

WindowResolver make_resolver(const std::string& data_path) {
  if (data_path.empty()) return {};
  auto data = std::make_shared<EegDataset>(load_csv(data_path));
  return [data](const std::string& ref) {
    // "<row>" or "<letter>:<k>" (k-th record of that class)
    if (const auto colon = ref.find(':'); colon != std::string::npos) {
      const int label = label_from_letter(ref.at(0));
      std::size_t k = std::stoul(ref.substr(colon + 1));
      for (const auto& r : data->records)
        if (r.label == label && k-- == 0) return r.samples;
      throw std::out_of_range("no record " + ref);
    }
    return data->records.at(std::stoul(ref)).samples;
  };
}

int cmd_simulate(const SimArgs& a, RunDir& run) {
  std::ifstream script(a.script);
  if (!script) throw ConfigError("cannot open script " + a.script);
  const auto dir = run.create("simulate", a.seed);
  announce("simulate",
           {{"script", a.script}, {"contacts", a.contacts}, {"patient", a.patient}, {"service_url", a.service_url},
            {"model", a.model}, {"predict_url", a.predict_url}, {"data", a.data}},
           dir);
  auto contacts = fs::exists(a.contacts) ? ContactBook::open(a.contacts) : ContactBook{};
  std::unique_ptr<EventSink> sink;
  if (!a.service_url.empty()) sink = std::make_unique<HttpEventSink>(a.service_url);
  else sink = std::make_unique<MemoryEventSink>();
  SimulatorConfig cfg;
  cfg.patient_id = a.patient;
  const auto result = run_scenario(script, cfg, std::move(contacts), sink.get(), make_classifier(a), make_resolver(a.data));
  const fs::path log_path = a.log.empty() ? dir / "notifications.jsonl" : fs::path(a.log);
  write_text(log_path, result.notification_log);
  if (auto* memory = dynamic_cast<MemoryEventSink*>(sink.get())) {
    std::string events;
    for (const auto& e : memory->events) events += event_to_json(e) + "\n";
    write_text(dir / "events.jsonl", events);
  }
  std::cout << result.notification_log << "final state " << to_string(result.final_state) << ", "
            << result.notifications.size() << " notifications, " << result.queued_events << " events still queued\n"
            << "log " << log_path.string() << "\n";
  return 0;
}

struct PlotArgs {
  std::string data, out = "sample.svg", out_dir;
  std::size_t row = 0;
  bool per_class = false;
};

int cmd_plot(const PlotArgs& a) {
  const auto data = load_csv(resolve_data(a.data));
  if (a.per_class) {
    const fs::path dir = a.out_dir.empty() ? fs::path("plots") : fs::path(a.out_dir);
    for (const auto& p : plot_per_class(data, dir)) std::cout << p.string() << "\n";
    return 0;
  }
  const auto& record = data.records.at(a.row);
  plot_sample(record, std::string(1, label_letter(record.label)), a.out);
  std::cout << a.out << "\n";
  return 0;
}

struct SynthArgs {
  std::string out = "synthetic_esr.csv";
  std::size_t per_label = 2300;
  std::uint64_t seed = 42;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EpilNet: EEG seizure classifier training, evaluation, serving and alert simulation"};
  app.footer(kFormats);
  app.require_subcommand(1);
  RunDir run;
  std::string log_level = "info";
  app.add_option("--run-root", run.root, "Directory that holds per-run output directories")->capture_default_str();
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off")->capture_default_str();

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train EpilNet from scratch and keep the best validation checkpoint");
  train_cmd->add_option("--data", ta.data, "ESR CSV (default $EPILNET_DATA)");
  train_cmd->add_option("--group", ta.group, "three (AB/D/E) or five (A..E)")->capture_default_str();
  train_cmd->add_option("--epochs", ta.cfg.epochs, "Training epochs")->capture_default_str();
  train_cmd->add_option("--batch-size", ta.cfg.batch_size, "Mini-batch size")->capture_default_str();
  train_cmd->add_option("--seed", ta.cfg.seed, "Seed for init, split and shuffling")->capture_default_str();
  train_cmd->add_option("--lr", ta.cfg.learning_rate, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--width", ta.cfg.width_multiplier, "Channel width multiplier")->capture_default_str();
  train_cmd->add_option("--eval-threads", ta.cfg.eval_threads, "Threads for validation/test evaluation")->capture_default_str();
  train_cmd->add_flag("!--no-shuffle", ta.cfg.shuffle, "Keep file order within the train split");
  train_cmd->add_option("--split-ratios", ta.ratios, "train,val,test")->capture_default_str();
  train_cmd->add_option("--split-manifest", ta.split_manifest, "Reuse an existing split manifest");
  train_cmd->add_option("--official-counts", ta.counts, "Check 11500/2300 counts: auto|on|off")->capture_default_str();
  train_cmd->add_option("--out", ta.out, "Checkpoint path (default <run dir>/model.ckpt)");

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion matrix of a checkpoint on one split");
  eval_cmd->add_option("--model", ea.model, "Checkpoint file")->required();
  eval_cmd->add_option("--data", ea.data, "ESR CSV (default $EPILNET_DATA)");
  eval_cmd->add_option("--split", ea.split, "train|val|test")->capture_default_str();
  eval_cmd->add_option("--seed", ea.seed, "Split seed (must match training)")->capture_default_str();
  eval_cmd->add_option("--split-ratios", ea.ratios, "train,val,test")->capture_default_str();
  eval_cmd->add_option("--split-manifest", ea.split_manifest, "Split manifest written by train");
  eval_cmd->add_option("--eval-threads", ea.threads, "Evaluation threads")->capture_default_str();
  eval_cmd->add_option("--official-counts", ea.counts, "auto|on|off")->capture_default_str();

  ServeArgs sa;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP service: POST /predict, GET /health, /patients/{id}/events");
  serve_cmd->add_option("--model", sa.model, "Checkpoint to serve (omit to start degraded)");
  serve_cmd->add_option("--host", sa.host, "Bind address")->capture_default_str();
  serve_cmd->add_option("--port", sa.port, "Port")->capture_default_str();
  serve_cmd->add_option("--events", sa.events, "Patient event store (JSON lines)")->capture_default_str();
  serve_cmd->add_option("--threads", sa.threads, "Handler threads")->capture_default_str();
  serve_cmd->add_option("--timeout", sa.timeout, "Read/write timeout in seconds")->capture_default_str();

  LoadArgs la;
  auto* load_cmd = app.add_subcommand("loadtest", "Closed-loop load test with a Samples/Average/Min/Max/Std. dev./Throughput report");
  load_cmd->add_option("--url", la.url, "Service base URL")->capture_default_str();
  load_cmd->add_option("--clients", la.clients, "Concurrent closed-loop clients")->capture_default_str();
  load_cmd->add_option("--duration", la.duration, "Sustain seconds after ramp-up")->capture_default_str();
  load_cmd->add_option("--rampup", la.rampup, "Seconds over which clients start")->capture_default_str();
  load_cmd->add_option("--class", la.classes, "Payload class letters, e.g. A or A,B,C,D,E")->capture_default_str();
  load_cmd->add_option("--mode", la.mode, "concurrent (clients split across classes) or sequential (one run per class)")
      ->capture_default_str();
  load_cmd->add_option("--data", la.data, "ESR CSV for request bodies (default $EPILNET_DATA)");
  load_cmd->add_option("--split", la.split, "Split to draw bodies from")->capture_default_str();
  load_cmd->add_option("--windows", la.windows, "Distinct bodies per class")->capture_default_str();
  load_cmd->add_flag("--synthetic", la.synthetic, "Use generated windows instead of --data");
  load_cmd->add_flag("--no-preflight", la.no_preflight, "Skip the GET /health reachability check");
  load_cmd->add_option("--seed", la.seed, "Split/synthetic seed")->capture_default_str();
  load_cmd->add_option("--timeout", la.timeout, "Per-request timeout in seconds")->capture_default_str();

  SimArgs ma;
  auto* sim_cmd = app.add_subcommand("simulate", "Run an alert scenario script on a virtual clock");
  sim_cmd->add_option("--script", ma.script, "Scenario script");
  sim_cmd->add_option("--contacts", ma.contacts, "Contacts file (JSON lines)")->capture_default_str();
  sim_cmd->add_option("--patient", ma.patient, "Patient id for stored events")->capture_default_str();
  sim_cmd->add_option("--service-url", ma.service_url, "Post finished episodes to this service");
  sim_cmd->add_option("--model", ma.model, "Classify 'window' lines with this checkpoint");
  sim_cmd->add_option("--predict-url", ma.predict_url, "Classify 'window' lines through this service");
  sim_cmd->add_option("--data", ma.data, "CSV that 'window <row>' and 'window <letter>:<k>' refer to");
  sim_cmd->add_option("--log", ma.log, "Notification log path (default <run dir>/notifications.jsonl)");
  std::string contact_name, contact_phone, contact_role = "caretaker";
  auto* contacts_cmd = sim_cmd->add_subcommand("contacts", "Manage the contacts file");
  contacts_cmd->require_subcommand(1);
  auto* c_add = contacts_cmd->add_subcommand("add", "Add a contact");
  c_add->add_option("--name", contact_name, "Unique name")->required();
  c_add->add_option("--phone", contact_phone, "Phone or address token")->required();
  c_add->add_option("--role", contact_role, "caretaker|doctor|hospital")->capture_default_str();
  auto* c_list = contacts_cmd->add_subcommand("list", "List contacts in insertion order");
  auto* c_del = contacts_cmd->add_subcommand("delete", "Delete a contact by name");
  c_del->add_option("--name", contact_name, "Name to delete")->required();

  PlotArgs pa;
  auto* plot_cmd = app.add_subcommand("plot", "SVG plot of one EEG window, or one per class A..E");
  plot_cmd->add_option("--data", pa.data, "ESR CSV (default $EPILNET_DATA)");
  plot_cmd->add_option("--row", pa.row, "Data row (0-based)")->capture_default_str();
  plot_cmd->add_option("--out", pa.out, "Output SVG")->capture_default_str();
  plot_cmd->add_flag("--per-class", pa.per_class, "First row of each class A..E");
  plot_cmd->add_option("--out-dir", pa.out_dir, "Directory for --per-class (default plots)");

  SynthArgs ya;
  auto* synth_cmd = app.add_subcommand("synth", "Write an ESR-shaped synthetic CSV (stand-in data, not EEG)");
  synth_cmd->add_option("--out", ya.out, "Output CSV")->capture_default_str();
  synth_cmd->add_option("--per-label", ya.per_label, "Windows per class")->capture_default_str();
  synth_cmd->add_option("--seed", ya.seed, "Generator seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: kind=usage message=" << json(e.what()).dump() << "\n\n" << app.help();
    return 2;
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    spdlog::set_default_logger(spdlog::stderr_logger_mt("epilnet"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    if (*train_cmd) return cmd_train(ta, run);
    if (*eval_cmd) return cmd_eval(ea, run);
    if (*serve_cmd) return cmd_serve(sa);
    if (*load_cmd) return cmd_loadtest(la, run);
    if (*sim_cmd) {
      if (*contacts_cmd) {
        auto book = ContactBook::open(ma.contacts);
        if (*c_add) book.add({contact_name, contact_phone, parse_role(contact_role)});
        if (*c_del) book.remove(contact_name);
        if (*c_list || *c_add || *c_del)
          for (const auto& c : book.list()) std::cout << c.name << "," << c.phone << "," << to_string(c.role) << "\n";
        return 0;
      }
      if (ma.script.empty()) throw ConfigError("simulate needs --script (or a contacts subcommand)");
      return cmd_simulate(ma, run);
    }
    if (*plot_cmd) return cmd_plot(pa);
    if (*synth_cmd) {
      write_csv(ya.out, make_synthetic_dataset(ya.per_label, ya.seed));
      std::cout << ya.out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: kind=" << error_kind(e) << " message=" << json(e.what()).dump() << "\n";
    return 1;
  }
  return 2;
}
