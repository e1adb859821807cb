#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "epilnet/events.hpp"

namespace epilnet {

enum class AlertStateKind { idle, pre_ictal_alarm, ictal_active, hospital_alerted, stopped };
std::string to_string(AlertStateKind state);

enum class Category { healthy, pre_ictal, ictal };
std::string to_string(Category category);
/// "healthy" | "pre-ictal" | "ictal", or a five-class letter (A,B,C healthy; D pre-ictal; E ictal).
Category parse_category(const std::string& text);

enum class Role { caretaker, doctor, hospital };
std::string to_string(Role role);
Role parse_role(const std::string& text);

struct Contact {
  std::string name;
  std::string phone;
  Role role = Role::caretaker;
  friend bool operator==(const Contact&, const Contact&) = default;
};

class ContactError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Insertion-ordered contacts, optionally persisted as JSON lines.
class ContactBook {
 public:
  ContactBook() = default;
  static ContactBook open(const std::filesystem::path& path);

  void add(Contact contact);
  void remove(const std::string& name);
  const std::vector<Contact>& list() const noexcept { return contacts_; }
  std::vector<Contact> with_role(Role role) const;
  void save() const;

 private:
  std::optional<std::filesystem::path> path_;
  std::vector<Contact> contacts_;
};

enum class Channel { alarm, sms, email, hospital };
std::string to_string(Channel channel);

struct Notification {
  Channel channel = Channel::alarm;
  std::string recipient;
  double time = 0.0;
  std::string category;
  std::optional<Location> location;  // nullopt is logged as "unavailable"
  std::optional<double> duration_seconds;
};

/// One JSON object, keys sorted.
std::string notification_to_json(const Notification& n);

class NotificationSink {
 public:
  virtual ~NotificationSink() = default;
  virtual void deliver(const Notification& notification) = 0;
};

/// Records instead of sending.
class RecordingSink : public NotificationSink {
 public:
  void deliver(const Notification& notification) override { records.push_back(notification); }
  std::string jsonl() const;
  std::vector<Notification> records;
};

/// Destination for completed seizure episodes. post() returns false when the
/// backend is unreachable; the simulator then queues the event.
class EventSink {
 public:
  virtual ~EventSink() = default;
  virtual bool post(const SeizureEvent& event) = 0;
  bool online = true;  // scripted uplink switch
};

class MemoryEventSink : public EventSink {
 public:
  bool post(const SeizureEvent& event) override {
    if (!online) return false;
    events.push_back(event);
    return true;
  }
  std::vector<SeizureEvent> events;
};

/// POSTs to <base_url>/patients/{id}/events.
class HttpEventSink : public EventSink {
 public:
  explicit HttpEventSink(std::string base_url) : base_url_(std::move(base_url)) {}
  bool post(const SeizureEvent& event) override;

 private:
  std::string base_url_;
};

struct LocationProviders {
  bool network_up = true;
  bool gps_up = true;
  std::optional<Location> network;  // current fix when up
  std::optional<Location> gps;
};

/// Network preferred, then GPS, then `last_fix` marked stale.
std::optional<Location> location_fix(const LocationProviders& providers, const std::optional<Location>& last_fix);

class VirtualClock {
 public:
  double now() const noexcept { return now_; }
  void advance_to(double t);

 private:
  double now_ = 0.0;
};

struct DutyCycle {
  double slot_seconds = 300.0;
  double active_seconds = 60.0;

  /// Earliest submission time >= t that falls in an active sub-slot.
  double next_submission(double t) const;
};

struct TimedWindow {
  double arrival = 0.0;
  std::vector<double> samples;
};

struct Submission {
  double time = 0.0;
  std::size_t index = 0;  // into the input stream
};

std::vector<Submission> schedule_windows(const std::vector<TimedWindow>& stream, const DutyCycle& cycle);

class StateError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

struct SimulatorConfig {
  std::string patient_id = "patient-1";
  double hospital_after_seconds = 300.0;
  DutyCycle duty_cycle;
};

using Classifier = std::function<std::pair<Category, std::vector<double>>(const std::vector<double>& window)>;

class AlertSimulator {
 public:
  AlertSimulator(SimulatorConfig config, ContactBook contacts, NotificationSink& notifications, EventSink* events = nullptr,
                 Classifier classifier = {});

  void start(double t);
  void stop(double t);
  /// State machine step for one classified window at virtual time t.
  void on_prediction(Category category, double t, std::vector<double> probabilities = {});
  /// Queues a raw window; it is classified at its duty-cycle submission time.
  void submit_window(std::vector<double> window, double arrival);
  /// Runs queued windows whose submission time is <= t, then moves the clock.
  void advance_to(double t);
  void set_network(bool up, std::optional<Location> fix = std::nullopt);
  void set_gps(bool up, std::optional<Location> fix = std::nullopt);
  void set_uplink(bool up);

  AlertStateKind state() const noexcept { return state_; }
  std::optional<double> seizure_start() const noexcept { return seizure_start_; }
  double now() const noexcept { return clock_.now(); }
  std::size_t queued_events() const noexcept { return outbox_.size(); }
  const std::vector<double>& submission_times() const noexcept { return submissions_; }
  ContactBook& contacts() noexcept { return contacts_; }

 private:
  struct Pending {
    double time;
    std::size_t sequence;
    std::vector<double> window;
  };

  void notify(Channel channel, const std::string& recipient, Category category, std::optional<double> duration = {});
  void notify_caretakers(Category category);
  void flush_episode(double t, bool truncated);
  void deliver_outbox();
  std::optional<Location> current_location();

  SimulatorConfig config_;
  ContactBook contacts_;
  NotificationSink& notifications_;
  EventSink* events_;
  Classifier classifier_;
  VirtualClock clock_;
  AlertStateKind state_ = AlertStateKind::stopped;
  bool started_once_ = false;
  std::optional<double> seizure_start_;
  std::optional<double> alarm_time_;
  bool hospital_alerted_ = false;
  std::vector<double> episode_probabilities_;
  LocationProviders providers_;
  std::optional<Location> last_fix_;
  std::deque<SeizureEvent> outbox_;
  std::vector<Pending> pending_;
  std::size_t sequence_ = 0;
  std::vector<double> submissions_;
};

class ScriptError : public std::runtime_error {
 public:
  ScriptError(std::size_t line, const std::string& message)
      : std::runtime_error("script line " + std::to_string(line) + ": " + message), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Resolves "window <ref>" lines to samples.
using WindowResolver = std::function<std::vector<double>(const std::string& ref)>;

struct ScenarioResult {
  AlertStateKind final_state = AlertStateKind::stopped;
  std::vector<Notification> notifications;
  std::string notification_log;  // JSON lines
  std::size_t queued_events = 0;
};

/// Line grammar, '#' comments, optional "at <seconds>" prefix (times non-decreasing):
///   start | stop | inject <class> | window <ref> | net-loc on|off [lat lon] | gps on|off [lat lon]
///   uplink on|off | contact <caretaker|doctor|hospital> <name> <phone>
ScenarioResult run_scenario(std::istream& script, SimulatorConfig config, ContactBook contacts, EventSink* events = nullptr,
                            Classifier classifier = {}, WindowResolver resolver = {});

}  // namespace epilnet
