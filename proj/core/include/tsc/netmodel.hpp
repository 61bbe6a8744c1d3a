#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tsc {

/// The arm of an intersection a vehicle arrives on (or leaves by).
enum class Approach : std::uint8_t { North, South, East, West };
enum class Movement : std::uint8_t { Through, Left, Right };
enum class PhaseId : std::uint8_t { ETWT, ELWL, NTST, NLSL };

inline constexpr std::array<Approach, 4> kApproaches{Approach::North, Approach::South,
                                                     Approach::East, Approach::West};
inline constexpr std::array<Movement, 3> kMovements{Movement::Through, Movement::Left,
                                                    Movement::Right};
/// Fixed phase order; also the MaxPressure tie-break order.
inline constexpr std::array<PhaseId, 4> kPhases{PhaseId::ETWT, PhaseId::ELWL, PhaseId::NTST,
                                                PhaseId::NLSL};

constexpr std::size_t index(Approach a) { return static_cast<std::size_t>(a); }
constexpr std::size_t index(Movement m) { return static_cast<std::size_t>(m); }
constexpr std::size_t index(PhaseId p) { return static_cast<std::size_t>(p); }

constexpr Approach opposite(Approach a) {
  switch (a) {
    case Approach::North: return Approach::South;
    case Approach::South: return Approach::North;
    case Approach::East: return Approach::West;
    case Approach::West: return Approach::East;
  }
  return a;
}

std::string_view to_string(Approach a);    // "North", ...
std::string_view to_string(Movement m);    // "through", ...
std::string_view to_string(PhaseId p);     // "ETWT", ...
std::optional<PhaseId> parse_phase(std::string_view token);

struct IntersectionId {
  int row = 0;
  int col = 0;
  friend constexpr auto operator<=>(const IntersectionId&, const IntersectionId&) = default;
};

std::string to_string(IntersectionId id);  // "(r, c)"

struct ApproachMovement {
  Approach approach;
  Movement movement;
  friend constexpr bool operator==(const ApproachMovement&, const ApproachMovement&) = default;
};

/// Side through which a vehicle that arrived on `from` leaves the
/// intersection when making `movement` (right-hand traffic).
Approach exit_side(Approach from, Movement movement);

struct Phase {
  PhaseId id;
  std::array<ApproachMovement, 2> allowed;
};

/// The two protected movements of a phase.
std::array<ApproachMovement, 2> phase_movements(PhaseId phase);
Phase make_phase(PhaseId phase);
/// Right turns, permitted under every phase.
std::array<ApproachMovement, 4> always_permitted();
/// The protected phase serving a movement, if any (right turns have none).
std::optional<PhaseId> phase_serving(ApproachMovement am);

/// One directed link. A missing endpoint means a boundary arm: a link with
/// no `upstream` is an entry arm, one with no `downstream` is an exit arm.
/// `arm` is the approach at the downstream end, or the exit side at the
/// upstream end for exit arms.
struct Link {
  std::optional<IntersectionId> upstream;
  std::optional<IntersectionId> downstream;
  Approach arm;
  double length_m;
};

struct ParityPartition {
  std::vector<IntersectionId> group1;  // (row + col) even
  std::vector<IntersectionId> group2;  // (row + col) odd
  static bool in_group1(IntersectionId id) { return (id.row + id.col) % 2 == 0; }
};

// Rectangular grid road network. Intersection (0, 0) is the north-west
// corner; rows grow southwards and columns eastwards. Immutable once built.
class GridNetwork {
 public:
  static constexpr int kDefaultSegments = 3;

  GridNetwork(int rows, int cols, double link_length_m, int segment_count = kDefaultSegments);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  double link_length_m() const { return link_length_m_; }
  int segment_count() const { return segment_count_; }
  double segment_length_m() const { return link_length_m_ / segment_count_; }
  std::size_t size() const { return intersections_.size(); }

  const std::vector<IntersectionId>& intersections() const { return intersections_; }
  const std::vector<Link>& links() const { return links_; }

  bool contains(IntersectionId id) const;
  /// Dense index in row-major order; throws NotFound for unknown ids.
  std::size_t index_of(IntersectionId id) const;
  IntersectionId at(std::size_t index) const { return intersections_.at(index); }

  /// Intersection adjacent on the given side, or nothing for a boundary arm.
  std::optional<IntersectionId> neighbor(IntersectionId id, Approach side) const;
  std::vector<IntersectionId> neighbors(IntersectionId id) const;
  bool is_boundary(IntersectionId id) const;

  /// Planar coordinates in meters (x east, y south).
  std::array<double, 2> position(IntersectionId id) const;

 private:
  int rows_;
  int cols_;
  double link_length_m_;
  int segment_count_;
  std::vector<IntersectionId> intersections_;
  std::vector<Link> links_;
};

GridNetwork build_grid(int rows, int cols, double link_length_m,
                       int segment_count = GridNetwork::kDefaultSegments);

ParityPartition parity_partition(const GridNetwork& network);

/// Euclidean distance in meters; throws NotFound if either id is unknown.
double neighbor_distance(IntersectionId a, IntersectionId b, const GridNetwork& network);

/// {"rows", "cols", "link_length_m", "segment_count"}; unknown fields are rejected.
std::string network_to_json(const GridNetwork& network);
GridNetwork network_from_json(std::string_view text);

}  // namespace tsc
