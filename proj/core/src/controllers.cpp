#include "tsc/controllers.hpp"

#include <algorithm>

#include "tsc/error.hpp"

namespace tsc {

void FixedTimePlan::validate() const {
  std::array<int, 4> seen{};
  for (PhaseId p : cycle_order) ++seen[index(p)];
  if (std::any_of(seen.begin(), seen.end(), [](int n) { return n != 1; }))
    throw InvalidArgument("fixed-time cycle_order must list each phase exactly once");
  if (std::any_of(green_s.begin(), green_s.end(), [](int g) { return g < 1; }))
    throw InvalidArgument("fixed-time green_s must be positive");
}

PhaseId fixed_time_next(const FixedTimePlan& plan, const SignalState& state) {
  const auto it = std::find(plan.cycle_order.begin(), plan.cycle_order.end(), state.current_phase);
  if (it == plan.cycle_order.end()) return plan.cycle_order.front();
  const auto pos = static_cast<std::size_t>(it - plan.cycle_order.begin());
  return plan.cycle_order[(pos + 1) % plan.cycle_order.size()];
}

DownstreamQueues downstream_queues(const Observation& obs) {
  DownstreamQueues d{};
  for (PhaseId p : kPhases)
    for (std::size_t k = 0; k < 2; ++k) d[index(p)][k] = obs.block(p).downstream[k].early_queued;
  return d;
}

int pressure(const Observation& obs, PhaseId phase, const DownstreamQueues& downstream) {
  const PhaseBlock& b = obs.block(phase);
  int total = 0;
  for (std::size_t k = 0; k < 2; ++k)
    total += b.upstream[k].early_queued + b.upstream[k].segments[0] - downstream[index(phase)][k];
  return total;
}

PhaseId max_pressure_next(const Observation& obs, const DownstreamQueues& downstream) {
  PhaseId best = kPhases[0];
  int best_pressure = pressure(obs, best, downstream);
  for (std::size_t i = 1; i < kPhases.size(); ++i) {
    const int p = pressure(obs, kPhases[i], downstream);
    if (p > best_pressure) {
      best_pressure = p;
      best = kPhases[i];
    }
  }
  return best;
}

PhaseId max_pressure_next(const Observation& obs) {
  return max_pressure_next(obs, downstream_queues(obs));
}

PhaseId random_next(Rng& rng) { return kPhases[rng.below(kPhases.size())]; }

}  // namespace tsc
