#include "tsc/netmodel.hpp"

#include <cmath>

#include <json.hpp>

#include "tsc/error.hpp"

namespace tsc {

using nlohmann::json;

std::string_view to_string(Approach a) {
  switch (a) {
    case Approach::North: return "North";
    case Approach::South: return "South";
    case Approach::East: return "East";
    case Approach::West: return "West";
  }
  return "?";
}

std::string_view to_string(Movement m) {
  switch (m) {
    case Movement::Through: return "through";
    case Movement::Left: return "left";
    case Movement::Right: return "right";
  }
  return "?";
}

std::string_view to_string(PhaseId p) {
  switch (p) {
    case PhaseId::ETWT: return "ETWT";
    case PhaseId::ELWL: return "ELWL";
    case PhaseId::NTST: return "NTST";
    case PhaseId::NLSL: return "NLSL";
  }
  return "?";
}

std::optional<PhaseId> parse_phase(std::string_view token) {
  for (PhaseId p : kPhases)
    if (token == to_string(p)) return p;
  return std::nullopt;
}

std::string to_string(IntersectionId id) {
  return "(" + std::to_string(id.row) + ", " + std::to_string(id.col) + ")";
}

namespace {

Approach left_of(Approach heading) {
  switch (heading) {
    case Approach::North: return Approach::West;
    case Approach::West: return Approach::South;
    case Approach::South: return Approach::East;
    case Approach::East: return Approach::North;
  }
  return heading;
}

}  // namespace

Approach exit_side(Approach from, Movement movement) {
  const Approach heading = opposite(from);
  switch (movement) {
    case Movement::Through: return heading;
    case Movement::Left: return left_of(heading);
    case Movement::Right: return opposite(left_of(heading));
  }
  return heading;
}

std::array<ApproachMovement, 2> phase_movements(PhaseId phase) {
  switch (phase) {
    case PhaseId::ETWT:
      return {{{Approach::East, Movement::Through}, {Approach::West, Movement::Through}}};
    case PhaseId::ELWL:
      return {{{Approach::East, Movement::Left}, {Approach::West, Movement::Left}}};
    case PhaseId::NTST:
      return {{{Approach::North, Movement::Through}, {Approach::South, Movement::Through}}};
    case PhaseId::NLSL:
      return {{{Approach::North, Movement::Left}, {Approach::South, Movement::Left}}};
  }
  return {};
}

Phase make_phase(PhaseId phase) { return Phase{phase, phase_movements(phase)}; }

std::array<ApproachMovement, 4> always_permitted() {
  return {{{Approach::North, Movement::Right},
           {Approach::South, Movement::Right},
           {Approach::East, Movement::Right},
           {Approach::West, Movement::Right}}};
}

std::optional<PhaseId> phase_serving(ApproachMovement am) {
  for (PhaseId p : kPhases)
    for (const auto& m : phase_movements(p))
      if (m == am) return p;
  return std::nullopt;
}

GridNetwork::GridNetwork(int rows, int cols, double link_length_m, int segment_count)
    : rows_(rows), cols_(cols), link_length_m_(link_length_m), segment_count_(segment_count) {
  if (rows < 1 || cols < 1)
    throw InvalidArgument("grid dimensions must be >= 1, got " + std::to_string(rows) + "x" +
                          std::to_string(cols));
  if (!(link_length_m > 0.0) || !std::isfinite(link_length_m))
    throw InvalidArgument("link_length_m must be positive");
  if (segment_count < 1) throw InvalidArgument("segment_count must be >= 1");

  intersections_.reserve(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) intersections_.push_back({r, c});

  for (const auto& id : intersections_) {
    for (Approach side : kApproaches) {
      const auto other = neighbor(id, side);
      if (other) {
        // Each internal link once per direction: other -> id arriving on `side`.
        links_.push_back({*other, id, side, link_length_m_});
      } else {
        links_.push_back({std::nullopt, id, side, link_length_m_});  // entry arm
        links_.push_back({id, std::nullopt, side, link_length_m_});  // exit arm
      }
    }
  }
}

bool GridNetwork::contains(IntersectionId id) const {
  return id.row >= 0 && id.row < rows_ && id.col >= 0 && id.col < cols_;
}

std::size_t GridNetwork::index_of(IntersectionId id) const {
  if (!contains(id)) throw NotFound("unknown intersection " + to_string(id));
  return static_cast<std::size_t>(id.row) * cols_ + id.col;
}

std::optional<IntersectionId> GridNetwork::neighbor(IntersectionId id, Approach side) const {
  IntersectionId n = id;
  switch (side) {
    case Approach::North: --n.row; break;
    case Approach::South: ++n.row; break;
    case Approach::East: ++n.col; break;
    case Approach::West: --n.col; break;
  }
  if (!contains(n)) return std::nullopt;
  return n;
}

std::vector<IntersectionId> GridNetwork::neighbors(IntersectionId id) const {
  std::vector<IntersectionId> out;
  for (Approach side : kApproaches)
    if (auto n = neighbor(id, side)) out.push_back(*n);
  return out;
}

bool GridNetwork::is_boundary(IntersectionId id) const {
  return id.row == 0 || id.col == 0 || id.row == rows_ - 1 || id.col == cols_ - 1;
}

std::array<double, 2> GridNetwork::position(IntersectionId id) const {
  return {id.col * link_length_m_, id.row * link_length_m_};
}

GridNetwork build_grid(int rows, int cols, double link_length_m, int segment_count) {
  return GridNetwork(rows, cols, link_length_m, segment_count);
}

ParityPartition parity_partition(const GridNetwork& network) {
  ParityPartition p;
  for (const auto& id : network.intersections())
    (p.in_group1(id) ? p.group1 : p.group2).push_back(id);
  return p;
}

double neighbor_distance(IntersectionId a, IntersectionId b, const GridNetwork& network) {
  if (!network.contains(a)) throw NotFound("unknown intersection " + to_string(a));
  if (!network.contains(b)) throw NotFound("unknown intersection " + to_string(b));
  const auto pa = network.position(a);
  const auto pb = network.position(b);
  return std::hypot(pa[0] - pb[0], pa[1] - pb[1]);
}

std::string network_to_json(const GridNetwork& network) {
  json j;
  j["rows"] = network.rows();
  j["cols"] = network.cols();
  j["link_length_m"] = network.link_length_m();
  j["segment_count"] = network.segment_count();
  return j.dump(2);
}

GridNetwork network_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("network: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("network: expected an object");
  for (const auto& [key, _] : j.items())
    if (key != "rows" && key != "cols" && key != "link_length_m" && key != "segment_count")
      throw ParseError("network: unknown field '" + key + "'");
  try {
    return GridNetwork(j.at("rows").get<int>(), j.at("cols").get<int>(),
                       j.at("link_length_m").get<double>(),
                       j.value("segment_count", GridNetwork::kDefaultSegments));
  } catch (const json::exception& e) {
    throw ParseError(std::string("network: ") + e.what());
  }
}

}  // namespace tsc
