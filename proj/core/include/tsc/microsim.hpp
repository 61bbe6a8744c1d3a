#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/netmodel.hpp"
#include "tsc/observation.hpp"

namespace tsc {

struct FlowSpec {
  double total_rate_vph = 4000.0;
  std::uint64_t seed = 1;
  /// (through, left, right); must sum to 1.
  std::array<double, 3> turn_probabilities{0.6, 0.2, 0.2};
  double emergency_fraction = 0.0;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
  friend bool operator==(const FlowSpec&, const FlowSpec&) = default;
};

std::string flow_to_json(const FlowSpec& spec);
FlowSpec flow_from_json(std::string_view text);

struct RouteStep {
  IntersectionId intersection;
  Approach approach;  // arm the vehicle arrives on
  Movement movement;
  friend bool operator==(const RouteStep&, const RouteStep&) = default;
};

struct Arrival {
  int time_s = 0;
  std::vector<RouteStep> route;  // route.front() is the entry intersection and arm
  bool is_emergency = false;
};

/// Poisson arrivals on every boundary entry arm with the total rate split
/// evenly; routes are drawn from the turn probabilities until they leave the
/// grid. Sorted by time, deterministic in (spec, network, horizon).
std::vector<Arrival> spawn_flow(const FlowSpec& spec, const GridNetwork& network, int horizon_s);

/// Line-delimited JSON, one arrival per line.
std::string schedule_to_jsonl(std::span<const Arrival> schedule);

enum class Stage : std::uint8_t { Green, Yellow, AllRed };
std::string_view to_string(Stage s);

struct SignalState {
  PhaseId current_phase = PhaseId::ETWT;
  Stage stage = Stage::Green;
  int stage_remaining = 0;  // seconds left in this stage
};

using VehicleId = std::uint32_t;

struct Vehicle {
  VehicleId id = 0;
  std::vector<RouteStep> route;
  int entry_time = 0;
  std::optional<int> exit_time;
  int waiting_seconds = 0;
  bool is_emergency = false;
};

struct MetricsReport {
  double att = 0.0;
  double awt = 0.0;
  double aett = 0.0;
  double aewt = 0.0;
  double avg_queue = 0.0;
  int max_queue = 0;
  std::int64_t vehicles_entered = 0;
  std::int64_t vehicles_exited = 0;
  std::int64_t emergency_entered = 0;
  std::int64_t emergency_exited = 0;
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

std::string metrics_to_json(const MetricsReport& report);
MetricsReport metrics_from_json(std::string_view text);

struct SimConfig {
  double free_flow_speed_mps = 10.0;
  int discharge_headway_s = 2;
  double vehicle_spacing_m = 7.5;
  int green_s = 15;
  int yellow_s = 3;
  int all_red_s = 2;
  /// Insert yellow + all-red even when the current phase is reselected.
  bool always_transition = false;
  /// Emergency vehicles within this many segments of the stop line (buffer
  /// included) are reported in observations.
  int emergency_advisory_segments = 2;
};

/// One record per set_phase call.
struct DecisionEvent {
  int time = 0;
  IntersectionId intersection;
  PhaseId phase = PhaseId::ETWT;
  std::array<int, 4> early_queued{};  // per phase, kPhases order
};

std::string decision_event_to_json(const DecisionEvent& e);

// Queue-propagation simulator on a GridNetwork with one-second ticks.
//
// Each incoming lane is a stop-line buffer plus `segment_count` FIFO
// segments. Vehicles cross a segment in segment_length / free_flow_speed
// ticks when the next one has room, and leave the buffer at one vehicle per
// discharge_headway_s while their movement has right of way. A vehicle's
// decision point is the green expiry of its signal; until set_phase is called
// the current green is held.
class Simulator {
 public:
  Simulator(const GridNetwork& network, SimConfig config, std::vector<Arrival> schedule);

  const GridNetwork& network() const { return network_; }
  const SimConfig& config() const { return config_; }
  int now() const { return now_; }

  /// Advances one second.
  void tick();
  void run_until(int time_s);

  bool at_decision_instant(IntersectionId id) const;
  /// Throws ContractViolation when `id` is not at a decision instant.
  /// `green_s` overrides the configured green duration when positive.
  void set_phase(IntersectionId id, PhaseId phase, int green_s = 0);
  const SignalState& signal(IntersectionId id) const;

  Observation observe(IntersectionId id) const;
  MetricsReport metrics() const;

  const std::vector<DecisionEvent>& events() const { return events_; }
  const std::vector<Vehicle>& vehicles() const { return vehicles_; }

  int segment_capacity() const { return segment_capacity_; }
  std::int64_t spawned() const { return static_cast<std::int64_t>(vehicles_.size()); }
  std::int64_t exited() const { return exited_; }
  /// Vehicles on lanes or waiting at a source, i.e. spawned but not exited.
  std::int64_t in_network() const;
  std::int64_t source_delayed() const;
  /// Total stop-line discharges so far.
  std::int64_t discharges() const { return discharges_; }
  /// Occupancy of segment `segment` (0 = nearest the stop line) of a lane.
  int segment_occupancy(IntersectionId id, Approach a, Movement m, int segment) const;
  int buffer_occupancy(IntersectionId id, Approach a, Movement m) const;

  /// Places a vehicle on the lane (id, approach, first movement), in the
  /// buffer when segment < 0 or in the given segment otherwise. The route
  /// follows `movements` from `id` and must leave the grid. Intended for
  /// fixtures and tests.
  VehicleId inject(IntersectionId id, Approach approach, std::span<const Movement> movements,
                   int segment = -1, bool emergency = false);

 private:
  struct Lane {
    std::deque<VehicleId> buffer;
    std::vector<std::deque<VehicleId>> segments;
    std::deque<VehicleId> source;  // entry arms only
    int last_discharge = -1000000;
  };

  struct VehicleState {
    std::size_t route_pos = 0;
    int segment_timer = 0;
  };

  std::size_t lane_index(IntersectionId id, Approach a, Movement m) const;
  Lane& lane_of(const RouteStep& step);
  bool permitted(const SignalState& s, Movement m, Approach a) const;
  void admit_arrivals();
  void discharge();
  void accrue_waiting();
  void advance_segments();
  void advance_signals();
  VehicleId add_vehicle(std::vector<RouteStep> route, int entry_time, bool emergency);
  LaneCounts lane_counts(const Lane& lane) const;
  LaneCounts road_counts(IntersectionId id, Approach arm) const;

  GridNetwork network_;
  SimConfig config_;
  std::vector<Arrival> schedule_;
  std::size_t next_arrival_ = 0;
  int now_ = 0;
  int segment_capacity_ = 1;
  int buffer_capacity_ = 1;
  int travel_ticks_ = 1;

  std::vector<Lane> lanes_;
  std::vector<SignalState> signals_;
  std::vector<int> next_green_;
  std::vector<Vehicle> vehicles_;
  std::vector<VehicleState> state_;
  std::vector<DecisionEvent> events_;

  std::int64_t exited_ = 0;
  std::int64_t discharges_ = 0;
  std::int64_t source_waiting_ = 0;
  double queue_time_sum_ = 0.0;  // sum over ticks of mean buffered per intersection
  int queue_ticks_ = 0;
  int max_queue_ = 0;
};

}  // namespace tsc
