#include "epilnet/alert.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <sstream>

#include <httplib.h>
#include <json.hpp>

namespace epilnet {

using nlohmann::json;

std::string to_string(AlertStateKind state) {
  switch (state) {
    case AlertStateKind::idle: return "Idle";
    case AlertStateKind::pre_ictal_alarm: return "PreIctalAlarm";
    case AlertStateKind::ictal_active: return "IctalActive";
    case AlertStateKind::hospital_alerted: return "HospitalAlerted";
    case AlertStateKind::stopped: return "Stopped";
  }
  return "?";
}

std::string to_string(Category category) {
  switch (category) {
    case Category::healthy: return "healthy";
    case Category::pre_ictal: return "pre-ictal";
    case Category::ictal: return "ictal";
  }
  return "?";
}

Category parse_category(const std::string& text) {
  if (text == "healthy" || text == "A" || text == "B" || text == "C") return Category::healthy;
  if (text == "pre-ictal" || text == "D") return Category::pre_ictal;
  if (text == "ictal" || text == "E") return Category::ictal;
  throw std::invalid_argument("unknown class '" + text + "' (expected healthy, pre-ictal, ictal or A..E)");
}

std::string to_string(Role role) {
  switch (role) {
    case Role::caretaker: return "caretaker";
    case Role::doctor: return "doctor";
    case Role::hospital: return "hospital";
  }
  return "?";
}

Role parse_role(const std::string& text) {
  if (text == "caretaker") return Role::caretaker;
  if (text == "doctor") return Role::doctor;
  if (text == "hospital") return Role::hospital;
  throw ContactError("unknown role '" + text + "' (expected caretaker, doctor or hospital)");
}

std::string to_string(Channel channel) {
  switch (channel) {
    case Channel::alarm: return "alarm";
    case Channel::sms: return "sms";
    case Channel::email: return "email";
    case Channel::hospital: return "hospital";
  }
  return "?";
}

ContactBook ContactBook::open(const std::filesystem::path& path) {
  ContactBook book;
  std::ifstream in(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object())
      throw ContactError(path.string() + ":" + std::to_string(line_no) + ": not a JSON object");
    book.add({j.value("name", ""), j.value("phone", ""), parse_role(j.value("role", "caretaker"))});
  }
  book.path_ = path;
  return book;
}

void ContactBook::add(Contact contact) {
  if (contact.name.empty()) throw ContactError("contact name is empty");
  if (contact.phone.empty()) throw ContactError("contact '" + contact.name + "' has an empty phone token");
  if (std::any_of(contacts_.begin(), contacts_.end(), [&](const Contact& c) { return c.name == contact.name; }))
    throw ContactError("contact '" + contact.name + "' already exists");
  contacts_.push_back(std::move(contact));
  if (path_) save();
}

void ContactBook::remove(const std::string& name) {
  const auto it = std::find_if(contacts_.begin(), contacts_.end(), [&](const Contact& c) { return c.name == name; });
  if (it == contacts_.end()) throw ContactError("no contact named '" + name + "'");
  contacts_.erase(it);
  if (path_) save();
}

std::vector<Contact> ContactBook::with_role(Role role) const {
  std::vector<Contact> out;
  for (const auto& c : contacts_)
    if (c.role == role) out.push_back(c);
  return out;
}

void ContactBook::save() const {
  if (!path_) return;
  const auto tmp = path_->string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw ContactError("cannot write " + tmp);
    for (const auto& c : contacts_) out << json{{"name", c.name}, {"phone", c.phone}, {"role", to_string(c.role)}}.dump() << '\n';
  }
  std::filesystem::rename(tmp, *path_);
}

namespace {

json location_json(const std::optional<Location>& loc) {
  if (!loc) return "unavailable";
  return {{"lat", loc->lat}, {"lon", loc->lon}, {"source", loc->source}, {"stale", loc->stale}};
}

}  // namespace

std::string notification_to_json(const Notification& n) {
  json j;
  j["channel"] = to_string(n.channel);
  j["recipient"] = n.recipient;
  j["time"] = n.time;
  j["class"] = n.category;
  j["location"] = location_json(n.location);
  if (n.duration_seconds) j["duration_seconds"] = *n.duration_seconds;
  return j.dump();
}

std::string RecordingSink::jsonl() const {
  std::string out;
  for (const auto& n : records) out += notification_to_json(n) + "\n";
  return out;
}

bool HttpEventSink::post(const SeizureEvent& event) {
  if (!online) return false;
  httplib::Client cli(base_url_);
  cli.set_connection_timeout(5, 0);
  cli.set_read_timeout(30, 0);
  const auto res = cli.Post("/patients/" + event.patient_id + "/events", event_to_json(event), "application/json");
  if (!res) return false;
  if (res->status == 201) return true;
  if (res->status >= 500) return false;
  // A 4xx will not succeed on retry.
  throw std::runtime_error("event rejected with HTTP " + std::to_string(res->status) + ": " + res->body);
}

std::optional<Location> location_fix(const LocationProviders& providers, const std::optional<Location>& last_fix) {
  if (providers.network_up && providers.network) {
    auto loc = *providers.network;
    loc.source = "network";
    loc.stale = false;
    return loc;
  }
  if (providers.gps_up && providers.gps) {
    auto loc = *providers.gps;
    loc.source = "gps";
    loc.stale = false;
    return loc;
  }
  if (last_fix) {
    auto loc = *last_fix;
    loc.stale = true;
    return loc;
  }
  return std::nullopt;
}

void VirtualClock::advance_to(double t) {
  if (t < now_) throw StateError("virtual clock cannot move backwards (" + std::to_string(t) + " < " + std::to_string(now_) + ")");
  now_ = t;
}

double DutyCycle::next_submission(double t) const {
  const double slot = std::floor(t / slot_seconds);
  const double within = t - slot * slot_seconds;
  return within < active_seconds ? t : (slot + 1.0) * slot_seconds;
}

std::vector<Submission> schedule_windows(const std::vector<TimedWindow>& stream, const DutyCycle& cycle) {
  std::vector<Submission> out;
  for (std::size_t i = 0; i < stream.size(); ++i) out.push_back({cycle.next_submission(stream[i].arrival), i});
  std::stable_sort(out.begin(), out.end(), [](const Submission& a, const Submission& b) { return a.time < b.time; });
  return out;
}

AlertSimulator::AlertSimulator(SimulatorConfig config, ContactBook contacts, NotificationSink& notifications,
                               EventSink* events, Classifier classifier)
    : config_(std::move(config)),
      contacts_(std::move(contacts)),
      notifications_(notifications),
      events_(events),
      classifier_(std::move(classifier)) {
  providers_.network_up = false;
  providers_.gps_up = false;
}

void AlertSimulator::start(double t) {
  advance_to(t);
  if (state_ != AlertStateKind::stopped) throw StateError("service already started");
  if (contacts_.with_role(Role::caretaker).empty()) throw StateError("cannot start: at least one caretaker contact is required");
  state_ = AlertStateKind::idle;
  seizure_start_.reset();
  alarm_time_.reset();
}

void AlertSimulator::stop(double t) {
  advance_to(t);
  if (state_ == AlertStateKind::stopped) throw StateError("service is not running");
  if (state_ != AlertStateKind::idle) flush_episode(t, true);
  state_ = AlertStateKind::stopped;
  pending_.clear();
}

std::optional<Location> AlertSimulator::current_location() {
  auto fix = location_fix(providers_, last_fix_);
  if (fix && !fix->stale) last_fix_ = fix;
  return fix;
}

void AlertSimulator::notify(Channel channel, const std::string& recipient, Category category, std::optional<double> duration) {
  notifications_.deliver({channel, recipient, clock_.now(), to_string(category), current_location(), duration});
}

void AlertSimulator::notify_caretakers(Category category) {
  for (const auto& c : contacts_.with_role(Role::caretaker)) notify(Channel::sms, c.phone, category);
}

void AlertSimulator::flush_episode(double t, bool truncated) {
  SeizureEvent e;
  e.patient_id = config_.patient_id;
  e.location = current_location();
  e.probabilities = episode_probabilities_;
  e.truncated = truncated;
  if (state_ == AlertStateKind::pre_ictal_alarm) {
    e.kind = "pre-ictal-alarm";
    e.timestamp = alarm_time_.value_or(t);
  } else {
    e.kind = "ictal";
    e.timestamp = seizure_start_.value_or(t);
    e.duration_seconds = t - e.timestamp;
    e.hospital_alerted = hospital_alerted_;
  }
  seizure_start_.reset();
  alarm_time_.reset();
  hospital_alerted_ = false;
  outbox_.push_back(std::move(e));
  deliver_outbox();
}

void AlertSimulator::deliver_outbox() {
  if (!events_) {
    outbox_.clear();
    return;
  }
  while (!outbox_.empty() && events_->post(outbox_.front())) outbox_.pop_front();
}

void AlertSimulator::on_prediction(Category category, double t, std::vector<double> probabilities) {
  if (state_ == AlertStateKind::stopped) throw StateError("prediction received while the service is stopped");
  clock_.advance_to(t);

  auto enter_alarm = [&] {
    state_ = AlertStateKind::pre_ictal_alarm;
    alarm_time_ = t;
    episode_probabilities_ = probabilities;
    notify(Channel::alarm, "patient-device", category);
    notify_caretakers(category);
  };

  switch (category) {
    case Category::healthy:
      if (state_ != AlertStateKind::idle) {
        flush_episode(t, false);
        state_ = AlertStateKind::idle;
      }
      break;
    case Category::pre_ictal:
      if (state_ == AlertStateKind::idle) {
        enter_alarm();
      } else if (state_ == AlertStateKind::ictal_active || state_ == AlertStateKind::hospital_alerted) {
        flush_episode(t, false);
        enter_alarm();
      }
      break;
    case Category::ictal:
      if (state_ == AlertStateKind::idle || state_ == AlertStateKind::pre_ictal_alarm) {
        if (state_ == AlertStateKind::pre_ictal_alarm) flush_episode(t, false);
        state_ = AlertStateKind::ictal_active;
        seizure_start_ = t;
        hospital_alerted_ = false;
        episode_probabilities_ = probabilities;
        notify_caretakers(category);
        for (const auto& d : contacts_.with_role(Role::doctor)) notify(Channel::email, d.phone, category);
      } else if (state_ == AlertStateKind::ictal_active && t - *seizure_start_ > config_.hospital_after_seconds) {
        state_ = AlertStateKind::hospital_alerted;
        hospital_alerted_ = true;
        const auto hospitals = contacts_.with_role(Role::hospital);
        notify(Channel::hospital, hospitals.empty() ? "emergency-services" : hospitals.front().phone, category,
               t - *seizure_start_);
      }
      break;
  }
}

void AlertSimulator::submit_window(std::vector<double> window, double arrival) {
  if (state_ == AlertStateKind::stopped) throw StateError("window received while the service is stopped");
  if (arrival < clock_.now()) throw StateError("window arrives in the past");
  pending_.push_back({config_.duty_cycle.next_submission(arrival), sequence_++, std::move(window)});
}

void AlertSimulator::advance_to(double t) {
  std::stable_sort(pending_.begin(), pending_.end(),
                   [](const Pending& a, const Pending& b) { return std::tie(a.time, a.sequence) < std::tie(b.time, b.sequence); });
  while (!pending_.empty() && pending_.front().time <= t) {
    auto next = std::move(pending_.front());
    pending_.erase(pending_.begin());
    if (!classifier_) throw StateError("a window was submitted but no classifier is configured");
    auto [category, probabilities] = classifier_(next.window);
    submissions_.push_back(next.time);
    on_prediction(category, next.time, std::move(probabilities));
  }
  clock_.advance_to(t);
}

void AlertSimulator::set_network(bool up, std::optional<Location> fix) {
  providers_.network_up = up;
  if (fix) providers_.network = fix;
  current_location();
}

void AlertSimulator::set_gps(bool up, std::optional<Location> fix) {
  providers_.gps_up = up;
  if (fix) providers_.gps = fix;
  current_location();
}

void AlertSimulator::set_uplink(bool up) {
  if (!events_) return;
  events_->online = up;
  if (up) deliver_outbox();
}

ScenarioResult run_scenario(std::istream& script, SimulatorConfig config, ContactBook contacts, EventSink* events,
                            Classifier classifier, WindowResolver resolver) {
  RecordingSink sink;
  AlertSimulator sim(std::move(config), std::move(contacts), sink, events, std::move(classifier));
  std::string line;
  std::size_t line_no = 0;
  double t = 0.0;

  auto on_off = [&](std::istringstream& in, std::size_t n) {
    std::string flag;
    in >> flag;
    if (flag != "on" && flag != "off") throw ScriptError(n, "expected on or off");
    return flag == "on";
  };
  auto optional_fix = [&](std::istringstream& in, std::size_t n) -> std::optional<Location> {
    double lat = 0, lon = 0;
    if (!(in >> lat)) return std::nullopt;
    if (!(in >> lon)) throw ScriptError(n, "expected longitude after latitude");
    return Location{lat, lon, "", false};
  };

  while (std::getline(script, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream in(line);
    std::string word;
    if (!(in >> word)) continue;
    if (word == "at") {
      double at = 0;
      if (!(in >> at) || !std::isfinite(at)) throw ScriptError(line_no, "expected a time after 'at'");
      if (at < t) throw ScriptError(line_no, "time " + std::to_string(at) + " is before the previous line");
      t = at;
      if (!(in >> word)) throw ScriptError(line_no, "missing command after time");
    }
    try {
      sim.advance_to(t);
      if (word == "start") {
        sim.start(t);
      } else if (word == "stop") {
        sim.stop(t);
      } else if (word == "inject") {
        std::string cls;
        if (!(in >> cls)) throw ScriptError(line_no, "inject needs a class");
        sim.on_prediction(parse_category(cls), t);
      } else if (word == "window") {
        std::string ref;
        if (!(in >> ref)) throw ScriptError(line_no, "window needs a reference");
        if (!resolver) throw ScriptError(line_no, "window lines need a data source");
        sim.submit_window(resolver(ref), t);
      } else if (word == "net-loc") {
        const bool up = on_off(in, line_no);
        sim.set_network(up, optional_fix(in, line_no));
      } else if (word == "gps") {
        const bool up = on_off(in, line_no);
        sim.set_gps(up, optional_fix(in, line_no));
      } else if (word == "uplink") {
        sim.set_uplink(on_off(in, line_no));
      } else if (word == "contact") {
        std::string role, name, phone;
        if (!(in >> role >> name >> phone)) throw ScriptError(line_no, "contact needs role, name and phone");
        sim.contacts().add({name, phone, parse_role(role)});
      } else {
        throw ScriptError(line_no, "unknown command '" + word + "'");
      }
      std::string rest;
      if (in >> rest) throw ScriptError(line_no, "unexpected trailing text '" + rest + "'");
    } catch (const ScriptError&) {
      throw;
    } catch (const std::exception& e) {
      throw ScriptError(line_no, e.what());
    }
  }
  if (sim.state() != AlertStateKind::stopped) sim.advance_to(std::numeric_limits<double>::max());

  ScenarioResult result;
  result.final_state = sim.state();
  result.notifications = sink.records;
  result.notification_log = sink.jsonl();
  result.queued_events = sim.queued_events();
  return result;
}

}  // namespace epilnet
