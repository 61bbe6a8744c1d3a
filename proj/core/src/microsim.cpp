#include "tsc/microsim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_io.hpp"
#include "tsc/error.hpp"
#include "tsc/rng.hpp"

namespace tsc {

using detail::json;

void FlowSpec::validate() const {
  if (!(total_rate_vph >= 0.0) || !std::isfinite(total_rate_vph))
    throw InvalidArgument("flow.total_rate_vph must be a nonnegative number");
  double sum = 0.0;
  for (double p : turn_probabilities) {
    if (!(p >= 0.0)) throw InvalidArgument("flow.turn_probabilities must be nonnegative");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("flow.turn_probabilities must sum to 1");
  if (!(emergency_fraction >= 0.0 && emergency_fraction <= 1.0))
    throw InvalidArgument("flow.emergency_fraction must lie in [0, 1]");
}

std::string flow_to_json(const FlowSpec& spec) {
  json j{{"total_rate_vph", spec.total_rate_vph},
         {"seed", spec.seed},
         {"turn_probabilities", spec.turn_probabilities},
         {"emergency_fraction", spec.emergency_fraction}};
  return j.dump(2);
}

FlowSpec flow_from_json(std::string_view text) {
  const json j = detail::parse_json(text, "flow");
  if (!j.is_object()) throw ParseError("flow: expected an object");
  FlowSpec spec;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "total_rate_vph") spec.total_rate_vph = value.get<double>();
      else if (key == "seed") spec.seed = value.get<std::uint64_t>();
      else if (key == "turn_probabilities") spec.turn_probabilities = value.get<std::array<double, 3>>();
      else if (key == "emergency_fraction") spec.emergency_fraction = value.get<double>();
      else throw ParseError("flow: unknown field '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("flow: ") + e.what());
  }
  spec.validate();
  return spec;
}

namespace {

// Stream ids keep arrival times, routes and emergency flags independent, so
// changing one knob (say the emergency fraction) leaves the others intact.
constexpr std::uint64_t kTimeStream = 1000;
constexpr std::uint64_t kRouteStream = 2000;
constexpr std::uint64_t kEmergencyStream = 3000;

std::vector<RouteStep> draw_route(const GridNetwork& net, IntersectionId entry, Approach arm,
                                  const std::array<double, 3>& turn, Rng& rng) {
  std::vector<RouteStep> route;
  IntersectionId at = entry;
  Approach from = arm;
  // Bound on turning; past it vehicles go straight, which always exits.
  const std::size_t max_turning_steps = 2 * static_cast<std::size_t>(net.rows() + net.cols()) + 4;
  for (;;) {
    Movement m = Movement::Through;
    if (route.size() < max_turning_steps) m = kMovements[rng.categorical(turn)];
    route.push_back({at, from, m});
    const Approach out = exit_side(from, m);
    const auto next = net.neighbor(at, out);
    if (!next) break;
    at = *next;
    from = opposite(out);
  }
  return route;
}

}  // namespace

std::vector<Arrival> spawn_flow(const FlowSpec& spec, const GridNetwork& network, int horizon_s) {
  spec.validate();
  if (horizon_s <= 0) throw InvalidArgument("horizon_s must be positive");

  struct Arm {
    IntersectionId id;
    Approach side;
  };
  std::vector<Arm> arms;
  for (const auto& l : network.links())
    if (!l.upstream) arms.push_back({*l.downstream, l.arm});

  std::vector<std::pair<std::size_t, Arrival>> tagged;  // (arm index, arrival)
  if (spec.total_rate_vph > 0.0) {
    const double rate_per_arm = spec.total_rate_vph / 3600.0 / static_cast<double>(arms.size());
    for (std::size_t a = 0; a < arms.size(); ++a) {
      Rng times(spec.seed, kTimeStream + a);
      Rng routes(spec.seed, kRouteStream + a);
      Rng emergency(spec.seed, kEmergencyStream + a);
      for (double t = times.exponential(rate_per_arm); t < horizon_s;
           t += times.exponential(rate_per_arm)) {
        Arrival arr;
        arr.time_s = static_cast<int>(std::floor(t));
        arr.route = draw_route(network, arms[a].id, arms[a].side, spec.turn_probabilities, routes);
        arr.is_emergency = emergency.bernoulli(spec.emergency_fraction);
        tagged.emplace_back(a, std::move(arr));
      }
    }
  }
  std::stable_sort(tagged.begin(), tagged.end(), [](const auto& x, const auto& y) {
    if (x.second.time_s != y.second.time_s) return x.second.time_s < y.second.time_s;
    return x.first < y.first;
  });
  std::vector<Arrival> out;
  out.reserve(tagged.size());
  for (auto& [_, arr] : tagged) out.push_back(std::move(arr));
  return out;
}

std::string schedule_to_jsonl(std::span<const Arrival> schedule) {
  std::string out;
  for (const auto& a : schedule) {
    json route = json::array();
    for (const auto& s : a.route)
      route.push_back({detail::id_to_json(s.intersection), to_string(s.approach), to_string(s.movement)});
    out += json{{"time", a.time_s}, {"emergency", a.is_emergency}, {"route", route}}.dump();
    out += '\n';
  }
  return out;
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::Green: return "green";
    case Stage::Yellow: return "yellow";
    case Stage::AllRed: return "all_red";
  }
  return "?";
}

std::string metrics_to_json(const MetricsReport& r) {
  json j{{"att", r.att},
         {"awt", r.awt},
         {"aett", r.aett},
         {"aewt", r.aewt},
         {"avg_queue", r.avg_queue},
         {"max_queue", r.max_queue},
         {"vehicles_entered", r.vehicles_entered},
         {"vehicles_exited", r.vehicles_exited},
         {"emergency_entered", r.emergency_entered},
         {"emergency_exited", r.emergency_exited}};
  return j.dump(2);
}

MetricsReport metrics_from_json(std::string_view text) {
  const json j = detail::parse_json(text, "metrics");
  try {
    MetricsReport r;
    r.att = j.at("att").get<double>();
    r.awt = j.at("awt").get<double>();
    r.aett = j.at("aett").get<double>();
    r.aewt = j.at("aewt").get<double>();
    r.avg_queue = j.at("avg_queue").get<double>();
    r.max_queue = j.at("max_queue").get<int>();
    r.vehicles_entered = j.at("vehicles_entered").get<std::int64_t>();
    r.vehicles_exited = j.at("vehicles_exited").get<std::int64_t>();
    r.emergency_entered = j.value("emergency_entered", std::int64_t{0});
    r.emergency_exited = j.value("emergency_exited", std::int64_t{0});
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("metrics: ") + e.what());
  }
}

std::string decision_event_to_json(const DecisionEvent& e) {
  json eq;
  for (PhaseId p : kPhases) eq[std::string(to_string(p))] = e.early_queued[index(p)];
  return json{{"time", e.time},
              {"intersection", detail::id_to_json(e.intersection)},
              {"phase", to_string(e.phase)},
              {"early_queued", eq}}
      .dump();
}

// ---------------------------------------------------------------------------

Simulator::Simulator(const GridNetwork& network, SimConfig config, std::vector<Arrival> schedule)
    : network_(network), config_(config), schedule_(std::move(schedule)) {
  if (!(config_.free_flow_speed_mps > 0) || config_.discharge_headway_s < 1 ||
      !(config_.vehicle_spacing_m > 0) || config_.green_s < 1 || config_.yellow_s < 0 ||
      config_.all_red_s < 0)
    throw InvalidArgument("invalid simulator configuration");
  std::stable_sort(schedule_.begin(), schedule_.end(),
                   [](const Arrival& a, const Arrival& b) { return a.time_s < b.time_s; });
  for (const auto& a : schedule_) {
    if (a.route.empty()) throw InvalidArgument("arrival with empty route");
    for (const auto& s : a.route) (void)network_.index_of(s.intersection);
  }

  const double seg_len = network_.segment_length_m();
  segment_capacity_ = std::max(1, static_cast<int>(std::floor(seg_len / config_.vehicle_spacing_m)));
  buffer_capacity_ = segment_capacity_;
  travel_ticks_ = std::max(1, static_cast<int>(std::lround(seg_len / config_.free_flow_speed_mps)));

  lanes_.resize(network_.size() * 12);
  for (auto& l : lanes_) l.segments.resize(network_.segment_count());
  signals_.resize(network_.size());
  next_green_.assign(network_.size(), config_.green_s);
}

std::size_t Simulator::lane_index(IntersectionId id, Approach a, Movement m) const {
  return network_.index_of(id) * 12 + index(a) * 3 + index(m);
}

Simulator::Lane& Simulator::lane_of(const RouteStep& step) {
  return lanes_[lane_index(step.intersection, step.approach, step.movement)];
}

VehicleId Simulator::add_vehicle(std::vector<RouteStep> route, int entry_time, bool emergency) {
  const auto id = static_cast<VehicleId>(vehicles_.size());
  Vehicle v;
  v.id = id;
  v.route = std::move(route);
  v.entry_time = entry_time;
  v.is_emergency = emergency;
  vehicles_.push_back(std::move(v));
  state_.push_back({});
  return id;
}

VehicleId Simulator::inject(IntersectionId id, Approach approach,
                            std::span<const Movement> movements, int segment, bool emergency) {
  if (movements.empty()) throw InvalidArgument("inject: empty route");
  if (segment >= network_.segment_count()) throw InvalidArgument("inject: segment out of range");
  std::vector<RouteStep> route;
  IntersectionId at = id;
  Approach from = approach;
  for (std::size_t i = 0;; ++i) {
    if (i == movements.size()) throw InvalidArgument("inject: route does not leave the grid");
    route.push_back({at, from, movements[i]});
    const Approach out = exit_side(from, movements[i]);
    const auto next = network_.neighbor(at, out);
    if (!next) break;
    at = *next;
    from = opposite(out);
  }
  const RouteStep first = route.front();
  Lane& lane = lane_of(first);
  auto& target = segment < 0 ? lane.buffer : lane.segments[segment];
  const int cap = segment < 0 ? buffer_capacity_ : segment_capacity_;
  if (static_cast<int>(target.size()) >= cap) throw InvalidArgument("inject: target is full");
  const VehicleId v = add_vehicle(std::move(route), now_, emergency);
  target.push_back(v);
  return v;
}

bool Simulator::permitted(const SignalState& s, Movement m, Approach a) const {
  if (m == Movement::Right) return s.stage != Stage::AllRed;
  if (s.stage != Stage::Green) return false;
  for (const auto& am : phase_movements(s.current_phase))
    if (am.approach == a && am.movement == m) return true;
  return false;
}

void Simulator::admit_arrivals() {
  while (next_arrival_ < schedule_.size() && schedule_[next_arrival_].time_s <= now_) {
    Arrival& a = schedule_[next_arrival_++];
    const RouteStep first = a.route.front();
    const VehicleId v = add_vehicle(std::move(a.route), a.time_s, a.is_emergency);
    lane_of(first).source.push_back(v);
    ++source_waiting_;
  }
  const int outer = network_.segment_count() - 1;
  for (auto& lane : lanes_) {
    while (!lane.source.empty() &&
           static_cast<int>(lane.segments[outer].size()) < segment_capacity_) {
      const VehicleId v = lane.source.front();
      lane.source.pop_front();
      --source_waiting_;
      state_[v].segment_timer = 0;
      lane.segments[outer].push_back(v);
    }
  }
}

void Simulator::discharge() {
  const int outer = network_.segment_count() - 1;
  for (const auto& id : network_.intersections()) {
    const SignalState& sig = signals_[network_.index_of(id)];
    for (Approach a : kApproaches) {
      for (Movement m : kMovements) {
        Lane& lane = lanes_[lane_index(id, a, m)];
        if (lane.buffer.empty() || !permitted(sig, m, a)) continue;
        if (now_ - lane.last_discharge < config_.discharge_headway_s) continue;
        const VehicleId v = lane.buffer.front();
        VehicleState& st = state_[v];
        const auto& route = vehicles_[v].route;
        if (st.route_pos + 1 == route.size()) {
          vehicles_[v].exit_time = now_ + 1;
          ++exited_;
        } else {
          Lane& next = lane_of(route[st.route_pos + 1]);
          if (static_cast<int>(next.segments[outer].size()) >= segment_capacity_) continue;
          ++st.route_pos;
          st.segment_timer = 0;
          next.segments[outer].push_back(v);
        }
        lane.buffer.pop_front();
        lane.last_discharge = now_;
        ++discharges_;
      }
    }
  }
}

void Simulator::accrue_waiting() {
  for (auto& lane : lanes_)
    for (VehicleId v : lane.buffer) ++vehicles_[v].waiting_seconds;
}

void Simulator::advance_segments() {
  const int n = network_.segment_count();
  for (auto& lane : lanes_) {
    for (int s = 0; s < n; ++s) {
      auto& seg = lane.segments[s];
      for (VehicleId v : seg) ++state_[v].segment_timer;
      auto& target = s == 0 ? lane.buffer : lane.segments[s - 1];
      const int cap = s == 0 ? buffer_capacity_ : segment_capacity_;
      while (!seg.empty() && state_[seg.front()].segment_timer >= travel_ticks_ &&
             static_cast<int>(target.size()) < cap) {
        const VehicleId v = seg.front();
        seg.pop_front();
        state_[v].segment_timer = 0;
        target.push_back(v);
      }
    }
  }
}

void Simulator::advance_signals() {
  for (std::size_t i = 0; i < signals_.size(); ++i) {
    SignalState& s = signals_[i];
    if (s.stage_remaining == 0) continue;  // green held awaiting a decision
    if (--s.stage_remaining > 0) continue;
    if (s.stage == Stage::Yellow) {
      s.stage = Stage::AllRed;
      s.stage_remaining = config_.all_red_s;
      if (s.stage_remaining > 0) continue;
    }
    if (s.stage == Stage::AllRed) {
      s.stage = Stage::Green;
      s.stage_remaining = next_green_[i];
    }
  }
}

void Simulator::tick() {
  admit_arrivals();
  discharge();
  accrue_waiting();
  advance_segments();

  int total = 0;
  for (std::size_t i = 0; i < network_.size(); ++i) {
    int buffered = 0;
    for (std::size_t k = 0; k < 12; ++k) buffered += static_cast<int>(lanes_[i * 12 + k].buffer.size());
    total += buffered;
    max_queue_ = std::max(max_queue_, buffered);
  }
  queue_time_sum_ += static_cast<double>(total) / static_cast<double>(network_.size());
  ++queue_ticks_;

  advance_signals();
  ++now_;
}

void Simulator::run_until(int time_s) {
  while (now_ < time_s) tick();
}

bool Simulator::at_decision_instant(IntersectionId id) const {
  const SignalState& s = signal(id);
  return s.stage == Stage::Green && s.stage_remaining == 0;
}

const SignalState& Simulator::signal(IntersectionId id) const {
  return signals_[network_.index_of(id)];
}

void Simulator::set_phase(IntersectionId id, PhaseId phase, int green_s) {
  if (!at_decision_instant(id))
    throw ContractViolation("set_phase at " + to_string(id) + " outside a decision instant (t=" +
                            std::to_string(now_) + ")");
  const Observation obs = observe(id);
  DecisionEvent e{now_, id, phase, {}};
  for (PhaseId p : kPhases) e.early_queued[index(p)] = obs.block(p).early_queued_total();
  events_.push_back(e);

  SignalState& s = signals_[network_.index_of(id)];
  next_green_[network_.index_of(id)] = green_s > 0 ? green_s : config_.green_s;
  if (phase == s.current_phase && !config_.always_transition) {
    s.stage_remaining = next_green_[network_.index_of(id)];
    return;
  }
  s.current_phase = phase;
  if (config_.yellow_s > 0) {
    s.stage = Stage::Yellow;
    s.stage_remaining = config_.yellow_s;
  } else if (config_.all_red_s > 0) {
    s.stage = Stage::AllRed;
    s.stage_remaining = config_.all_red_s;
  } else {
    s.stage_remaining = next_green_[network_.index_of(id)];
  }
}

LaneCounts Simulator::lane_counts(const Lane& lane) const {
  LaneCounts c;
  c.early_queued = static_cast<int>(lane.buffer.size());
  const int n = network_.segment_count();
  for (int s = 0; s < n; ++s) {
    // Bin n segments into three distance bands.
    const auto band = static_cast<std::size_t>(s * static_cast<int>(LaneCounts::kSegments) / n);
    c.segments[band] += static_cast<int>(lane.segments[s].size());
  }
  return c;
}

LaneCounts Simulator::road_counts(IntersectionId id, Approach arm) const {
  LaneCounts total;
  for (Movement m : kMovements) {
    const LaneCounts c = lane_counts(lanes_[lane_index(id, arm, m)]);
    total.early_queued += c.early_queued;
    for (std::size_t b = 0; b < LaneCounts::kSegments; ++b) total.segments[b] += c.segments[b];
  }
  return total;
}

Observation Simulator::observe(IntersectionId id) const {
  Observation obs = empty_observation(id);
  for (PhaseId p : kPhases) {
    PhaseBlock& b = obs.block(p);
    const auto moves = phase_movements(p);
    for (std::size_t k = 0; k < 2; ++k) {
      b.upstream[k] = lane_counts(lanes_[lane_index(id, moves[k].approach, moves[k].movement)]);
      const Approach out = exit_side(moves[k].approach, moves[k].movement);
      if (const auto next = network_.neighbor(id, out)) b.downstream[k] = road_counts(*next, opposite(out));
    }
  }
  for (Approach a : kApproaches)
    obs.right_turn[index(a)] = lane_counts(lanes_[lane_index(id, a, Movement::Right)]);

  // Emergency vehicles, nearest first: buffers, then segments outward.
  const int reach = std::min(config_.emergency_advisory_segments, network_.segment_count());
  auto scan = [&](auto&& queue_of) {
    for (Approach a : kApproaches)
      for (Movement m : kMovements)
        for (VehicleId v : queue_of(lanes_[lane_index(id, a, m)]))
          if (vehicles_[v].is_emergency) obs.emergencies.push_back({a, m});
  };
  scan([](const Lane& l) -> const std::deque<VehicleId>& { return l.buffer; });
  for (int s = 0; s < reach; ++s)
    scan([s](const Lane& l) -> const std::deque<VehicleId>& { return l.segments[s]; });
  return obs;
}

MetricsReport Simulator::metrics() const {
  MetricsReport r;
  double travel = 0, wait = 0, e_travel = 0, e_wait = 0;
  for (const auto& v : vehicles_) {
    const int end = v.exit_time.value_or(now_);
    travel += end - v.entry_time;
    wait += v.waiting_seconds;
    ++r.vehicles_entered;
    if (v.exit_time) ++r.vehicles_exited;
    if (v.is_emergency) {
      e_travel += end - v.entry_time;
      e_wait += v.waiting_seconds;
      ++r.emergency_entered;
      if (v.exit_time) ++r.emergency_exited;
    }
  }
  if (r.vehicles_entered > 0) {
    r.att = travel / static_cast<double>(r.vehicles_entered);
    r.awt = wait / static_cast<double>(r.vehicles_entered);
  }
  if (r.emergency_entered > 0) {
    r.aett = e_travel / static_cast<double>(r.emergency_entered);
    r.aewt = e_wait / static_cast<double>(r.emergency_entered);
  }
  if (queue_ticks_ > 0) r.avg_queue = queue_time_sum_ / queue_ticks_;
  r.max_queue = max_queue_;
  return r;
}

std::int64_t Simulator::in_network() const { return spawned() - exited_; }

std::int64_t Simulator::source_delayed() const { return source_waiting_; }

int Simulator::segment_occupancy(IntersectionId id, Approach a, Movement m, int segment) const {
  return static_cast<int>(lanes_[lane_index(id, a, m)].segments.at(segment).size());
}

int Simulator::buffer_occupancy(IntersectionId id, Approach a, Movement m) const {
  return static_cast<int>(lanes_[lane_index(id, a, m)].buffer.size());
}

}  // namespace tsc
