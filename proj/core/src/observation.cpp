#include "tsc/observation.hpp"

#include <charconv>

#include "json_io.hpp"

namespace tsc {

int Observation::protected_buffered() const {
  int n = 0;
  for (const auto& b : phases) n += b.early_queued_total();
  return n;
}

int Observation::buffered_total() const {
  int n = protected_buffered();
  for (const auto& r : right_turn) n += r.early_queued;
  return n;
}

Observation empty_observation(IntersectionId id) {
  Observation obs;
  obs.intersection = id;
  for (PhaseId p : kPhases) obs.block(p).phase = p;
  return obs;
}

namespace {

void scale_lane(LaneCounts& lane, int factor) {
  lane.early_queued *= factor;
  for (int& s : lane.segments) s *= factor;
}

}  // namespace

Observation scaled(const Observation& obs, int factor) {
  Observation out = obs;
  for (auto& b : out.phases) {
    for (auto& l : b.upstream) scale_lane(l, factor);
    for (auto& l : b.downstream) scale_lane(l, factor);
  }
  for (auto& l : out.right_turn) scale_lane(l, factor);
  return out;
}

namespace detail {

json lane_to_json(const LaneCounts& lane) {
  return json{{"early_queued", lane.early_queued}, {"segments", lane.segments}};
}

LaneCounts lane_from_json(const json& j) {
  LaneCounts lane;
  lane.early_queued = j.at("early_queued").get<int>();
  const auto& s = j.at("segments");
  if (!s.is_array() || s.size() != LaneCounts::kSegments)
    throw ParseError("lane segments must have 3 entries");
  for (std::size_t i = 0; i < LaneCounts::kSegments; ++i) lane.segments[i] = s[i].get<int>();
  return lane;
}

json observation_to_json_value(const Observation& obs) {
  json phases = json::array();
  for (const auto& b : obs.phases) {
    phases.push_back({{"phase", to_string(b.phase)},
                      {"upstream", {lane_to_json(b.upstream[0]), lane_to_json(b.upstream[1])}},
                      {"downstream",
                       {lane_to_json(b.downstream[0]), lane_to_json(b.downstream[1])}}});
  }
  json right = json::array();
  for (const auto& r : obs.right_turn) right.push_back(lane_to_json(r));
  json emergencies = json::array();
  for (const auto& e : obs.emergencies)
    emergencies.push_back({to_string(e.approach), to_string(e.movement)});
  return json{{"intersection", id_to_json(obs.intersection)},
              {"phases", phases},
              {"right_turn", right},
              {"emergencies", emergencies}};
}

namespace {

Approach approach_from(const std::string& s) {
  for (Approach a : kApproaches)
    if (s == to_string(a)) return a;
  throw ParseError("unknown approach '" + s + "'");
}

Movement movement_from(const std::string& s) {
  for (Movement m : kMovements)
    if (s == to_string(m)) return m;
  throw ParseError("unknown movement '" + s + "'");
}

}  // namespace

Observation observation_from_json_value(const json& j) {
  try {
    Observation obs = empty_observation(id_from_json(j.at("intersection")));
    const auto& phases = j.at("phases");
    if (!phases.is_array() || phases.size() != 4) throw ParseError("expected 4 phase blocks");
    for (std::size_t i = 0; i < 4; ++i) {
      auto& b = obs.phases[i];
      b.phase = phase_from_json(phases[i].at("phase"));
      if (b.phase != kPhases[i]) throw ParseError("phase blocks out of order");
      for (std::size_t k = 0; k < 2; ++k) {
        b.upstream[k] = lane_from_json(phases[i].at("upstream").at(k));
        b.downstream[k] = lane_from_json(phases[i].at("downstream").at(k));
      }
    }
    if (j.contains("right_turn")) {
      const auto& r = j.at("right_turn");
      if (!r.is_array() || r.size() != 4) throw ParseError("expected 4 right-turn lanes");
      for (std::size_t i = 0; i < 4; ++i) obs.right_turn[i] = lane_from_json(r[i]);
    }
    if (j.contains("emergencies"))
      for (const auto& e : j.at("emergencies"))
        obs.emergencies.push_back(
            {approach_from(e.at(0).get<std::string>()), movement_from(e.at(1).get<std::string>())});
    return obs;
  } catch (const json::exception& e) {
    throw ParseError(std::string("observation: ") + e.what());
  }
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

std::string observation_to_json(const Observation& obs) {
  return detail::observation_to_json_value(obs).dump();
}

Observation observation_from_json(std::string_view text) {
  return detail::observation_from_json_value(detail::parse_json(text, "observation"));
}

}  // namespace tsc
