#pragma once

#include <array>
#include <string>
#include <string_view>
#include <vector>

#include "tsc/netmodel.hpp"

namespace tsc {

/// Vehicles on one lane: the stop-line buffer plus three distance bands,
/// band 0 ("Segment 1") nearest the stop line.
struct LaneCounts {
  static constexpr std::size_t kSegments = 3;

  int early_queued = 0;
  std::array<int, kSegments> segments{};

  int total() const { return early_queued + segments[0] + segments[1] + segments[2]; }
  friend bool operator==(const LaneCounts&, const LaneCounts&) = default;
};

/// Counts for one phase's two protected movements, in phase_movements()
/// order, plus the receiving road of each movement (all lanes summed, zero at
/// boundary exits).
struct PhaseBlock {
  PhaseId phase = PhaseId::ETWT;
  std::array<LaneCounts, 2> upstream{};
  std::array<LaneCounts, 2> downstream{};

  int early_queued_total() const { return upstream[0].early_queued + upstream[1].early_queued; }
  int segment_total(std::size_t band) const {
    return upstream[0].segments[band] + upstream[1].segments[band];
  }
  friend bool operator==(const PhaseBlock&, const PhaseBlock&) = default;
};

struct Observation {
  IntersectionId intersection{};
  std::array<PhaseBlock, 4> phases{};       // kPhases order
  std::array<LaneCounts, 4> right_turn{};   // per approach, kApproaches order
  /// Emergency vehicles near the stop line, nearest first.
  std::vector<ApproachMovement> emergencies;

  const PhaseBlock& block(PhaseId p) const { return phases[index(p)]; }
  PhaseBlock& block(PhaseId p) { return phases[index(p)]; }

  /// Buffered vehicles on protected lanes across all phases.
  int protected_buffered() const;
  /// Buffered vehicles including right-turn lanes.
  int buffered_total() const;

  friend bool operator==(const Observation&, const Observation&) = default;
};

/// An observation with every phase block labeled and all counts zero.
Observation empty_observation(IntersectionId id = {});

/// Multiplies every count by `factor`.
Observation scaled(const Observation& obs, int factor);

std::string observation_to_json(const Observation& obs);
Observation observation_from_json(std::string_view text);

}  // namespace tsc
