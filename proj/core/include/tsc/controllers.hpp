#pragma once

#include <array>

#include "tsc/microsim.hpp"
#include "tsc/netmodel.hpp"
#include "tsc/observation.hpp"
#include "tsc/rng.hpp"

namespace tsc {

struct FixedTimePlan {
  std::array<PhaseId, 4> cycle_order = kPhases;
  std::array<int, 4> green_s{15, 15, 15, 15};  // per phase, kPhases order

  /// Throws InvalidArgument unless every phase appears exactly once.
  void validate() const;
};

/// Next phase in the cycle after the current one; traffic independent.
PhaseId fixed_time_next(const FixedTimePlan& plan, const SignalState& state);

/// Buffered vehicles on the receiving road of each protected movement,
/// [phase][movement] in kPhases / phase_movements() order. Zero at boundary exits.
using DownstreamQueues = std::array<std::array<int, 2>, 4>;

DownstreamQueues downstream_queues(const Observation& obs);

/// Sum over the phase's protected movements of
/// (early_queued + segment 1) upstream minus early_queued downstream.
int pressure(const Observation& obs, PhaseId phase, const DownstreamQueues& downstream);

/// Argmax pressure; ties go to the earliest phase in kPhases.
PhaseId max_pressure_next(const Observation& obs, const DownstreamQueues& downstream);
PhaseId max_pressure_next(const Observation& obs);

/// Uniform over the four phases.
PhaseId random_next(Rng& rng);

}  // namespace tsc
