// Acceptance checks that need no external data: gradients, shapes, overfit,
// serving under load, checkpoint roundtrip, alert scenarios.
// Usage: acceptance [criterion ...]
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include <httplib.h>
#include <json.hpp>

#include "epilnet/alert.hpp"
#include "epilnet/checkpoint.hpp"
#include "epilnet/gradcheck.hpp"
#include "epilnet/layers.hpp"
#include "epilnet/loadtest.hpp"
#include "epilnet/service.hpp"
#include "epilnet/synthetic.hpp"
#include "epilnet/trainer.hpp"
#include "report.hpp"

using namespace epilnet;
using acceptance::Outcome;
using acceptance::str;
namespace fs = std::filesystem;

namespace {

constexpr double kEps = 1e-3;
constexpr double kPrimitiveTol = 1e-4;
constexpr double kBlockTol = 1e-3;
const std::vector<std::size_t> kTrace{89, 45, 45, 23, 12, 6, 1};
constexpr std::size_t kLoadClients = 100;
constexpr double kLoadSeconds = 60.0;
constexpr double kRampSeconds = 10.0;
constexpr double kOverfitTarget = 0.99;
constexpr std::size_t kOverfitEpochs = 100;
constexpr double kOverfitBudget = 300.0;

std::vector<double> uniform(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

SignalTensor<double> tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  return SignalTensor<double>(s, uniform(s.numel(), seed, lo, hi));
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct Worst {
  double err = 0.0;
  std::string where;
  std::size_t probes = 0;

  void add(const std::string& name, const GradCheckResult& r) {
    probes += r.probes;
    if (r.max_relative_error >= err) {
      err = r.max_relative_error;
      where = name;
    }
  }
};

Outcome gradient_suite() {
  Worst prim;
  using GC = GradCheckResult;
  auto gc = [](std::span<double> v, std::span<const double> g, const std::function<double()>& f,
               const std::function<std::uint64_t()>& sig = {}) -> GC { return gradient_check<double>(v, g, f, kEps, {}, sig); };

  for (const std::size_t stride : {1u, 2u}) {
    auto spec = ConvSpec<double>::zeros(2, 3, 3, stride, 1);
    spec.weights = uniform(spec.weights.size(), 1 + stride);
    spec.bias = uniform(3, 3 + stride);
    auto x = tensor({2, 2, 9}, 5 + stride);
    const auto r = uniform(conv1d_forward(x, spec).size(), 7 + stride);
    const auto g = conv1d_backward(x, spec, SignalTensor<double>(conv1d_forward(x, spec).shape(), r));
    auto f = [&] { return dot(conv1d_forward(x, spec).values(), r); };
    prim.add("conv.x", gc(x.values(), g.grad_x.values(), f));
    prim.add("conv.w", gc(spec.weights, g.grad_weights, f));
    prim.add("conv.b", gc(spec.bias, g.grad_bias, f));
  }
  {
    auto spec = ConvSpec<double>::zeros(1, 4, 7, 2, 3);
    spec.weights = uniform(spec.weights.size(), 11);
    auto x = tensor({2, 1, 20}, 12);
    const auto shape = conv1d_forward(x, spec).shape();
    const auto r = uniform(shape.numel(), 13);
    const auto g = conv1d_backward(x, spec, SignalTensor<double>(shape, r));
    auto f = [&] { return dot(conv1d_forward(x, spec).values(), r); };
    prim.add("stem.x", gc(x.values(), g.grad_x.values(), f));
    prim.add("stem.w", gc(spec.weights, g.grad_weights, f));
  }
  for (const Mode mode : {Mode::train, Mode::eval}) {
    auto spec = BatchNormSpec<double>::identity(3);
    spec.gamma = uniform(3, 20, 0.5, 2.0);
    spec.beta = uniform(3, 21);
    spec.running_mean = uniform(3, 22);
    spec.running_var = uniform(3, 23, 0.5, 2.0);
    auto x = tensor({2, 3, 5}, 24, -2.0, 2.0);
    const auto r = uniform(x.size(), 25);
    const auto g = batchnorm1d_backward(x, spec, SignalTensor<double>(x.shape(), r), mode);
    auto f = [&] {
      auto copy = spec;
      return dot(batchnorm1d(x, copy, mode).values(), r);
    };
    const std::string tag = mode == Mode::train ? "bn.train" : "bn.eval";
    prim.add(tag + ".x", gc(x.values(), g.grad_x.values(), f));
    prim.add(tag + ".gamma", gc(spec.gamma, g.grad_gamma, f));
    prim.add(tag + ".beta", gc(spec.beta, g.grad_beta, f));
  }
  {
    auto x = tensor({2, 2, 6}, 30);
    for (auto& v : x.values()) v += v >= 0 ? 0.05 : -0.05;
    const auto r = uniform(x.size(), 31);
    const auto g = relu_backward(x, SignalTensor<double>(x.shape(), r));
    prim.add("relu", gc(x.values(), g.values(), [&] { return dot(relu(x).values(), r); }));
  }
  {
    auto x = tensor({2, 2, 9}, 40);
    const auto pooled = maxpool1d(x);
    const auto r = uniform(pooled.output.size(), 41);
    const auto g = maxpool1d_backward(x.shape(), pooled.argmax, SignalTensor<double>(pooled.output.shape(), r));
    std::function<std::uint64_t()> sig = [&] {
      std::uint64_t h = 1469598103934665603ULL;
      for (const auto a : maxpool1d(x).argmax) h = (h ^ a) * 1099511628211ULL;
      return h;
    };
    prim.add("maxpool", gc(x.values(), g.values(), [&] { return dot(maxpool1d(x).output.values(), r); }, sig));
  }
  {
    auto x = tensor({2, 3, 6}, 50);
    const auto r = uniform(6, 51);
    const auto g = global_avg_pool_backward(x.shape(), SignalTensor<double>({2, 3, 1}, r));
    prim.add("gap", gc(x.values(), g.values(), [&] { return dot(global_avg_pool(x).values(), r); }));
  }
  {
    auto spec = DenseSpec<double>::zeros(4, 3);
    spec.weights = uniform(12, 60);
    spec.bias = uniform(3, 61);
    auto x = tensor({2, 4, 1}, 62);
    const auto r = uniform(6, 63);
    const auto g = dense_backward(x, spec, SignalTensor<double>({2, 3, 1}, r));
    auto f = [&] { return dot(dense_forward(x, spec).values(), r); };
    prim.add("dense.x", gc(x.values(), g.grad_x.values(), f));
    prim.add("dense.w", gc(spec.weights, g.grad_weights, f));
    prim.add("dense.b", gc(spec.bias, g.grad_bias, f));
  }
  {
    auto logits = uniform(5, 70, -3.0, 3.0);
    const auto ce = softmax_cross_entropy<double>(logits, 3);
    prim.add("softmax_ce", gc(logits, ce.grad_logits, [&] { return softmax_cross_entropy<double>(logits, 3).loss; }));
  }

  Worst block_worst;
  for (const bool down : {false, true}) {
    auto block = BasicBlock<double>::make(3, down ? 5 : 3, down ? 2 : 1);
    block.conv1.weights = uniform(block.conv1.weights.size(), 80);
    block.conv2.weights = uniform(block.conv2.weights.size(), 81);
    block.conv1.bias = uniform(block.conv1.bias.size(), 82);
    block.bn1.gamma = uniform(block.bn1.channels, 83, 0.5, 1.5);
    block.bn2.gamma = uniform(block.bn2.channels, 84, 0.5, 1.5);
    block.bn2.beta = uniform(block.bn2.channels, 85, -0.2, 0.2);
    if (block.projection) block.projection->weights = uniform(block.projection->weights.size(), 86);
    auto x = tensor({2, 3, 9}, 87, -2.0, 2.0);
    BlockTape<double> tape;
    const auto y = block_forward_train(block, x, tape);
    const auto r = uniform(y.size(), 88);
    const auto grads = block_backward(block, tape, SignalTensor<double>(y.shape(), r));
    std::uint64_t signature = 0;
    auto f = [&] {
      BlockTape<double> t;
      auto copy = block;
      const auto out = block_forward_train(copy, x, t);
      std::uint64_t h = 1469598103934665603ULL;
      for (const auto* v : {&t.bn1_out, &t.bn2_out, &t.sum})
        for (const double e : v->values()) h = (h ^ static_cast<std::uint64_t>(e > 0)) * 1099511628211ULL;
      signature = h;
      return dot(out.values(), r);
    };
    std::function<std::uint64_t()> sig = [&] { return signature; };
    auto grad_of = [&](const std::string& name) -> const std::vector<double>& {
      for (const auto& [n, g] : grads.params)
        if (n == name) return g;
      throw std::runtime_error("no gradient for " + name);
    };
    const std::string tag = down ? "block.down." : "block.";
    block_worst.add(tag + "x", gc(x.values(), grads.grad_x.values(), f, sig));
    block_worst.add(tag + "conv1.weight", gc(block.conv1.weights, grad_of("conv1.weight"), f, sig));
    block_worst.add(tag + "conv1.bias", gc(block.conv1.bias, grad_of("conv1.bias"), f, sig));
    block_worst.add(tag + "bn1.gamma", gc(block.bn1.gamma, grad_of("bn1.gamma"), f, sig));
    block_worst.add(tag + "bn1.beta", gc(block.bn1.beta, grad_of("bn1.beta"), f, sig));
    block_worst.add(tag + "conv2.weight", gc(block.conv2.weights, grad_of("conv2.weight"), f, sig));
    block_worst.add(tag + "bn2.gamma", gc(block.bn2.gamma, grad_of("bn2.gamma"), f, sig));
    block_worst.add(tag + "bn2.beta", gc(block.bn2.beta, grad_of("bn2.beta"), f, sig));
    if (block.projection) {
      block_worst.add(tag + "projection.conv.weight",
                      gc(block.projection->weights, grad_of("projection.conv.weight"), f, sig));
      block_worst.add(tag + "projection.bn.gamma", gc(block.projection_bn->gamma, grad_of("projection.bn.gamma"), f, sig));
    }
  }
  const bool ok = prim.err <= kPrimitiveTol && block_worst.err <= kBlockTol;
  return {ok, str("primitives max rel err ", prim.err, " at ", prim.where, " (", prim.probes, " probes, tol ", kPrimitiveTol,
                  "); block max rel err ", block_worst.err, " at ", block_worst.where, " (", block_worst.probes,
                  " probes, tol ", kBlockTol, "), eps ", kEps)};
}

Outcome shape_pipeline() {
  std::string detail;
  bool ok = true;
  for (const std::size_t classes : {3u, 5u}) {
    const auto model = EpilNet<float>::build({classes, 1.0, 42});
    ForwardTrace trace;
    const auto logits = forward(model, SignalTensor<float>(Shape{1, 1, kWindowLength}), &trace);
    const bool match = trace.lengths == kTrace && logits.shape() == Shape{1, classes, 1};
    ok = ok && match;
    detail += str("C=", classes, " trace [");
    for (std::size_t i = 0; i < trace.lengths.size(); ++i) detail += str(i ? "," : "", trace.lengths[i]);
    detail += str("] logits ", logits.batch(), "x", logits.channels(), "; ");
  }
  return {ok, detail + "expected [89,45,45,23,12,6,1]"};
}

Outcome overfit_smoke() {
  auto data = map_group(make_synthetic_dataset(14, 21), GroupMode::five_class);
  data.splits.assign(data.records.size(), Split::val);
  for (std::size_t i = 0; i < 64; ++i) data.splits[i] = Split::train;
  TrainConfig cfg;
  cfg.epochs = kOverfitEpochs;
  cfg.width_multiplier = 0.25;
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t first = 0;
  const auto result = train(EpilNet<float>::build(cfg.model_config()), data, cfg, [&](const EpochReport& r) {
    if (first == 0 && r.train_accuracy >= kOverfitTarget) first = r.epoch;
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double final_acc = result.reports.back().train_accuracy;
  const bool ok = first > 0 && final_acc >= kOverfitTarget && seconds < kOverfitBudget;
  return {ok, str("64 records, width 0.25: train acc >= ", kOverfitTarget, " first at epoch ", first, ", final running acc ",
                  final_acc, ", ", seconds, " s (budget ",
                  kOverfitBudget, " s)")};
}

Outcome serving_contract(const fs::path& artifacts) {
  ServiceConfig scfg;
  scfg.port = 0;
  scfg.event_store = artifacts / "events.jsonl";
  scfg.threads = 128;
  fs::remove(scfg.event_store);
  InferenceService service(scfg);
  Checkpoint ckpt;
  ckpt.model = EpilNet<float>::build({5, 1.0, 42});
  ckpt.metadata.class_names = GroupMapping::for_mode(GroupMode::five_class).names;
  service.set_model(ckpt);
  const int port = service.start();

  LoadConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(port);
  cfg.clients = kLoadClients;
  cfg.duration_seconds = kLoadSeconds;
  cfg.rampup_seconds = kRampSeconds;
  const std::string classes = "ABCDE";
  for (const char c : classes) {
    PayloadSet p{std::string(1, c), {}};
    for (std::uint64_t k = 0; k < 20; ++k) p.windows.push_back(synthetic_window(label_from_letter(c), 1000 + k));
    cfg.payloads.push_back(std::move(p));
  }
  const auto log = run_load(cfg);
  service.stop();

  const auto rows = summarize(log);
  const auto table = format_table(rows);
  {
    std::ofstream raw(artifacts / "raw.csv"), summary(artifacts / "summary.csv"), text(artifacts / "summary.txt");
    write_load_log(raw, log);
    write_load_summary(summary, rows);
    text << table;
  }
  std::printf("%s", table.c_str());

  std::size_t errors = 0;
  for (const auto& s : log) errors += s.status == 200 ? 0 : 1;
  bool columns = true;
  for (const char* col : {"Samples", "Average", "Min", "Max", "Std. dev.", "Throughput"})
    columns = columns && table.find(col) != std::string::npos;
  bool every_class = rows.size() == classes.size();
  bool p99_finite = true;
  for (const auto& r : rows) {
    every_class = every_class && table.find("Request " + r.label) != std::string::npos && r.samples > 0;
    p99_finite = p99_finite && std::isfinite(r.p99_ms);
  }
  const std::string cmd = std::string("python3 ") + EPILNET_SOURCE_DIR + "/scripts/recompute_load_summary.py " +
                          (artifacts / "raw.csv").string() + " " + (artifacts / "summary.csv").string();
  const bool recompute = std::system(cmd.c_str()) == 0;
  double worst_p99 = 0.0;
  for (const auto& r : rows) worst_p99 = std::max(worst_p99, r.p99_ms);
  const bool ok = errors == 0 && columns && every_class && p99_finite && recompute;
  return {ok, str(log.size(), " requests, ", errors, " errors; report columns ", columns ? "present" : "MISSING",
                  "; rows for A-E ", every_class ? "present" : "MISSING", "; max p99 ", worst_p99, " ms; independent recompute ",
                  recompute ? "MATCH" : "MISMATCH", "; ", kLoadClients, " clients, ", kRampSeconds, " s ramp + ",
                  kLoadSeconds, " s")};
}

Outcome checkpoint_roundtrip(const fs::path& artifacts) {
  Checkpoint ckpt;
  ckpt.model = EpilNet<float>::build({5, 1.0, 42});
  // non-trivial running statistics so eval mode exercises them
  auto blob = ckpt.model.flatten();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> d(0.5f, 1.5f);
  ckpt.model.for_each_tensor([&](const ManifestEntry& e, std::span<const float>) {
    if (!e.trainable)
      for (std::size_t i = 0; i < e.numel(); ++i) blob[e.offset + i] = d(rng);
  });
  ckpt.model.load_flat(blob);
  ckpt.norm = {1.25, 37.5};
  ckpt.metadata.class_names = GroupMapping::for_mode(GroupMode::five_class).names;
  const auto path = artifacts / "roundtrip.ckpt";
  const auto digest = save_checkpoint(ckpt, path);
  const auto loaded = load_checkpoint(path);

  std::size_t exact = 0;
  for (std::uint64_t i = 0; i < 100; ++i) {
    const auto w = uniform(kWindowLength, 500 + i, -3.0, 3.0);
    SignalTensor<float> x(Shape{1, 1, kWindowLength});
    for (std::size_t t = 0; t < kWindowLength; ++t) x.data()[t] = static_cast<float>(w[t]);
    const auto a = forward(ckpt.model, x), b = forward(loaded.model, x);
    exact += a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0 ? 1 : 0;
  }

  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> good{std::istreambuf_iterator<char>(in), {}};
  const std::size_t payload_at = good.size() - ckpt.model.blob_size() * sizeof(float);
  auto kind_of = [](std::vector<std::uint8_t> bytes) -> std::string {
    try {
      decode_checkpoint(bytes);
      return "accepted";
    } catch (const CheckpointError& e) {
      return to_string(e.kind());
    }
  };
  struct Case {
    std::string name;
    std::vector<std::uint8_t> bytes;
    CheckpointErrorKind expect;
  };
  std::vector<Case> cases;
  auto flipped = good;
  flipped[payload_at + 1234] ^= 0x10;
  cases.push_back({"flipped payload byte", flipped, CheckpointErrorKind::digest_mismatch});
  cases.push_back({"truncated payload", {good.begin(), good.end() - 4}, CheckpointErrorKind::truncated});
  cases.push_back({"truncated header", {good.begin(), good.begin() + 40}, CheckpointErrorKind::truncated});
  auto magic = good;
  magic[1] = 'Q';
  cases.push_back({"bad magic", magic, CheckpointErrorKind::bad_magic});
  auto trailing = good;
  trailing.push_back(0);
  cases.push_back({"trailing bytes", trailing, CheckpointErrorKind::trailing_bytes});
  std::string text(good.begin(), good.end());
  text[text.find("\"major\": 1") + 9] = '2';
  cases.push_back({"major version 2", {text.begin(), text.end()}, CheckpointErrorKind::version_mismatch});
  std::string broken(good.begin(), good.end());
  broken[broken.find('{')] = '[';
  cases.push_back({"malformed header", {broken.begin(), broken.end()}, CheckpointErrorKind::malformed_header});

  std::string detail = str(exact, "/100 inputs bit-exact; digest ", loaded.digest == digest ? "preserved" : "CHANGED");
  bool ok = exact == 100 && loaded.digest == digest;
  for (const auto& c : cases) {
    const auto got = kind_of(c.bytes);
    ok = ok && got == to_string(c.expect);
    detail += str("; ", c.name, " -> ", got);
  }
  return {ok, detail};
}

struct ScenarioRun {
  std::string log;
  std::string final_state;
};

Outcome alert_scenarios(const fs::path& artifacts) {
  ServiceConfig scfg;
  scfg.port = 0;
  scfg.event_store = artifacts / "alert_events.jsonl";
  fs::remove(scfg.event_store);
  InferenceService service(scfg);
  const int port = service.start();
  const std::string url = "http://127.0.0.1:" + std::to_string(port);

  const std::string contacts =
      "contact caretaker Ann sms:555-0101\n"
      "contact caretaker Ben sms:555-0102\n"
      "contact doctor Dr.Cho mail:cho@clinic\n"
      "contact hospital General er:general\n";
  struct Scenario {
    std::string name, patient, script;
  };
  const std::vector<Scenario> scenarios{
      {"pre-ictal alarm", "acc-alarm",
       contacts + "start\nnet-loc on 51.5 -0.12\nat 60 inject pre-ictal\nat 120 inject healthy\nstop\n"},
      {"ictal > 300 s", "acc-ictal",
       contacts + "start\ngps on 40.7 -74.0\nat 100 inject ictal\nat 160 inject ictal\nat 220 inject ictal\n"
                  "at 280 inject ictal\nat 340 inject ictal\nat 401 inject ictal\nat 430 inject ictal\nat 460 inject ictal\n"},
      {"healthy recovery", "acc-recovery",
       contacts + "start\nnet-loc on 48.85 2.35\nat 30 inject ictal\nat 90 inject ictal\nat 150 inject healthy\n"},
  };

  auto run = [&](const Scenario& s, bool post) {
    std::istringstream in(s.script);
    SimulatorConfig cfg;
    cfg.patient_id = s.patient;
    HttpEventSink sink(url);
    MemoryEventSink memory;
    EventSink* target = post ? static_cast<EventSink*>(&sink) : &memory;
    const auto r = run_scenario(in, cfg, ContactBook{}, target);
    return ScenarioRun{r.notification_log, to_string(r.final_state)};
  };
  auto count = [](const std::string& log, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = log.find(needle); p != std::string::npos; p = log.find(needle, p + 1)) ++n;
    return n;
  };

  std::vector<ScenarioRun> first, second;
  for (const auto& s : scenarios) first.push_back(run(s, true));
  for (const auto& s : scenarios) second.push_back(run(s, false));
  bool identical = true;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    identical = identical && first[i].log == second[i].log;
    std::ofstream(artifacts / ("scenario_" + std::to_string(i + 1) + ".jsonl")) << first[i].log;
  }

  const auto& alarm = first[0].log;
  const bool alarm_ok = count(alarm, "\"channel\":\"alarm\"") == 1 && count(alarm, "\"recipient\":\"sms:555-0101\"") == 1 &&
                        count(alarm, "\"recipient\":\"sms:555-0102\"") == 1 && count(alarm, "\"channel\":\"sms\"") == 2 &&
                        count(alarm, "\"channel\":\"hospital\"") == 0;
  const auto hospital = count(first[1].log, "\"channel\":\"hospital\"");
  const bool ictal_ok = hospital == 1 && first[1].final_state == "HospitalAlerted";

  httplib::Client cli(url);
  const auto res = cli.Get("/patients/acc-recovery/events");
  service.stop();
  std::size_t stored = 0;
  std::string kind;
  if (res && res->status == 200) {
    const auto events = nlohmann::json::parse(res->body);
    stored = events.size();
    if (stored) kind = events[0].value("kind", "");
  }
  const bool recovery_ok = stored == 1 && kind == "ictal" && first[2].final_state == "Idle";
  const bool ok = identical && alarm_ok && ictal_ok && recovery_ok;
  return {ok, str("logs byte-identical across runs: ", identical ? "yes" : "NO", "; alarm + per-caretaker SMS: ",
                  alarm_ok ? "ok" : "WRONG", "; hospital notifications after >300 s ictal: ", hospital, " (state ",
                  first[1].final_state, "); GET /patients/acc-recovery/events -> ", stored, " event(s) kind '", kind, "'")};
}

}  // namespace

int main(int argc, char** argv) {
  acceptance::Report report(argc, argv);
  const fs::path artifacts = fs::absolute("acceptance_artifacts");
  fs::create_directories(artifacts);
  report.run(1, "gradient check suite", gradient_suite);
  report.run(2, "shape pipeline", shape_pipeline);
  report.run(3, "overfit smoke", overfit_smoke);
  report.run(7, "serving contract under load", [&] { return serving_contract(artifacts); });
  report.run(8, "checkpoint roundtrip", [&] { return checkpoint_roundtrip(artifacts); });
  report.run(9, "alert scenario suite", [&] { return alert_scenarios(artifacts); });
  return report.finish();
}
