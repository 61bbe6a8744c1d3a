#include "tsc/asynccomm.hpp"

#include "json_io.hpp"
#include "tsc/error.hpp"

namespace tsc {

std::vector<AgentMessage> MessageBuffer::take(IntersectionId id) {
  auto it = pending_.find(id);
  if (it == pending_.end()) return {};
  auto out = std::move(it->second);
  pending_.erase(it);
  return out;
}

const std::vector<AgentMessage>* MessageBuffer::peek(IntersectionId id) const {
  auto it = pending_.find(id);
  return it == pending_.end() ? nullptr : &it->second;
}

std::size_t MessageBuffer::size() const {
  std::size_t n = 0;
  for (const auto& [_, v] : pending_) n += v.size();
  return n;
}

std::vector<IntersectionId> MessageBuffer::recipients() const {
  std::vector<IntersectionId> out;
  for (const auto& [id, _] : pending_) out.push_back(id);
  return out;
}

std::string message_log_to_json(const MessageLogEntry& e) {
  return detail::json{{"step", e.step},
                      {"half_step", e.half_step},
                      {"sender", detail::id_to_json(e.sender)},
                      {"recipient", detail::id_to_json(e.recipient)},
                      {"body", e.body}}
      .dump();
}

std::size_t deliver(MessageBuffer& buffer, IntersectionId sender, std::string_view body,
                    std::span<const IntersectionId> recipients, const GridNetwork& network,
                    std::int64_t half_step_index, double radius_m,
                    std::vector<Violation>* violations) {
  std::size_t sent = 0;
  const bool sender_g1 = ParityPartition::in_group1(sender);
  for (const auto& r : recipients) {
    std::string reason;
    if (!network.contains(r) || !network.contains(sender))
      reason = "unknown intersection";
    else if (r == sender)
      reason = "self-addressed";
    else if (ParityPartition::in_group1(r) == sender_g1)
      reason = "same parity group";
    else if (neighbor_distance(sender, r, network) > radius_m)
      continue;  // out of range is ordinary filtering, not a protocol breach
    if (!reason.empty()) {
      if (violations) violations->push_back({half_step_index, sender, r, reason});
      continue;
    }
    buffer.add(make_message(sender, r, body, half_step_index));
    ++sent;
  }
  return sent;
}

AsyncScheduler::AsyncScheduler(Simulator& sim, Agent& agent, CommConfig config)
    : sim_(&sim), agent_(&agent), config_(config), partition_(parity_partition(sim.network())) {
  if (config.offset_s < 0) throw InvalidArgument("offset_s must be >= 0");
  if (!(config.radius_m >= 0.0)) throw InvalidArgument("radius_m must be >= 0");
}

bool AsyncScheduler::group_due(const std::vector<IntersectionId>& group) const {
  for (const auto& id : group)
    if (!sim_->at_decision_instant(id)) return false;
  return true;
}

bool AsyncScheduler::advance_until(const std::vector<IntersectionId>& group, int earliest,
                                   int horizon_s) {
  while (sim_->now() < earliest || !group_due(group)) {
    if (sim_->now() >= horizon_s) return false;
    sim_->tick();
  }
  return sim_->now() < horizon_s;
}

void AsyncScheduler::half_step(const std::vector<IntersectionId>& group, int which) {
  const std::int64_t h = half_index_;
  std::vector<DecisionContext> ctxs;
  ctxs.reserve(group.size());
  for (const auto& id : group) {
    DecisionContext c;
    c.intersection = id;
    c.observation = sim_->observe(id);
    c.inbox = buffer_.take(id);
    if (read_hook_) read_hook_(id, c.inbox, h);
    c.signal = sim_->signal(id);
    c.time = sim_->now();
    if (incidents_) c.incident = incidents_(id, c.time);
    ctxs.push_back(std::move(c));
  }
  // Anything left behind was addressed to this group but not to a member.
  for (const auto& id : group)
    if (buffer_.peek(id)) buffer_.take(id);

  const auto decisions = agent_->decide_batch(ctxs);
  // Group members are already in id order, which fixes application order.
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& id = group[i];
    const auto& d = decisions.at(i);
    sim_->set_phase(id, d.phase, d.green_s);
    if (!config_.messages_enabled || !d.message) continue;
    const auto neighbors = sim_->network().neighbors(id);
    const std::size_t before = buffer_.size();
    deliver(buffer_, id, *d.message, neighbors, sim_->network(), h, config_.radius_m,
            &violations_);
    if (buffer_.size() == before) continue;
    for (const auto& r : neighbors) {
      const auto* inbox = buffer_.peek(r);
      if (inbox && !inbox->empty() && inbox->back().sender == id &&
          inbox->back().issued_half_step == h)
        log_.push_back({step_, which, id, r, inbox->back().body});
    }
  }
  ++half_index_;
}

bool AsyncScheduler::step(int horizon_s) {
  if (!advance_until(partition_.group1, sim_->now(), horizon_s)) return false;
  const int t1 = sim_->now();
  half_step(partition_.group1, 1);
  if (!advance_until(partition_.group2, t1 + config_.offset_s, horizon_s)) return false;
  half_step(partition_.group2, 2);
  ++step_;
  return true;
}

void AsyncScheduler::run(int horizon_s) {
  while (step(horizon_s)) {
  }
  while (sim_->now() < horizon_s) sim_->tick();
}

void run_independent(Simulator& sim, Agent& agent, int horizon_s,
                     const AsyncScheduler::IncidentFn& incidents) {
  const auto& ids = sim.network().intersections();
  while (sim.now() < horizon_s) {
    std::vector<DecisionContext> ctxs;
    for (const auto& id : ids) {
      if (!sim.at_decision_instant(id)) continue;
      DecisionContext c;
      c.intersection = id;
      c.observation = sim.observe(id);
      c.signal = sim.signal(id);
      c.time = sim.now();
      if (incidents) c.incident = incidents(id, c.time);
      ctxs.push_back(std::move(c));
    }
    if (!ctxs.empty()) {
      const auto decisions = agent.decide_batch(ctxs);
      for (std::size_t i = 0; i < ctxs.size(); ++i)
        sim.set_phase(ctxs[i].intersection, decisions.at(i).phase, decisions.at(i).green_s);
    }
    sim.tick();
  }
}

}  // namespace tsc
