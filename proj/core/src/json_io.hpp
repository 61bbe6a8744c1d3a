#pragma once

// Private JSON conversions shared by the library sources.

#include <string>

#include <json.hpp>

#include "tsc/error.hpp"
#include "tsc/netmodel.hpp"
#include "tsc/observation.hpp"

namespace tsc::detail {

using nlohmann::json;

inline json parse_json(std::string_view text, const std::string& what, std::size_t line = 0) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(what + ": " + e.what(), line);
  }
}

inline json id_to_json(IntersectionId id) { return json::array({id.row, id.col}); }

inline IntersectionId id_from_json(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ParseError("intersection id must be [row, col]");
  return {j[0].get<int>(), j[1].get<int>()};
}

inline PhaseId phase_from_json(const json& j) {
  const auto s = j.get<std::string>();
  if (auto p = parse_phase(s)) return *p;
  throw ParseError("unknown phase '" + s + "'");
}

json lane_to_json(const LaneCounts& lane);
LaneCounts lane_from_json(const json& j);
json observation_to_json_value(const Observation& obs);
Observation observation_from_json_value(const json& j);

/// Shortest round-trip decimal for a double.
std::string format_double(double v);

}  // namespace tsc::detail
