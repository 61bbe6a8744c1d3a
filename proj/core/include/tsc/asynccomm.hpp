#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsc/agentio.hpp"
#include "tsc/microsim.hpp"
#include "tsc/netmodel.hpp"

namespace tsc {

inline constexpr double kDeliveryRadiusM = 2000.0;

/// Pending messages per recipient. Reading an inbox clears it.
class MessageBuffer {
 public:
  void add(AgentMessage m) { pending_[m.recipient].push_back(std::move(m)); }
  std::vector<AgentMessage> take(IntersectionId id);
  const std::vector<AgentMessage>* peek(IntersectionId id) const;
  bool empty() const { return pending_.empty(); }
  std::size_t size() const;
  /// Recipients holding messages, in id order.
  std::vector<IntersectionId> recipients() const;

 private:
  std::map<IntersectionId, std::vector<AgentMessage>> pending_;
};

struct MessageLogEntry {
  std::int64_t step = 0;
  int half_step = 1;  // 1 or 2 within the step
  IntersectionId sender;
  IntersectionId recipient;
  std::string body;
};

std::string message_log_to_json(const MessageLogEntry& e);

struct Violation {
  std::int64_t half_step_index = 0;
  IntersectionId sender;
  IntersectionId recipient;
  std::string reason;
};

/// Queues `body` for every recipient in the opposite parity group within
/// `radius_m`. Recipients out of range are skipped silently; same-group,
/// self or unknown recipients are dropped and, when `violations` is given,
/// recorded. Returns the number of messages queued.
std::size_t deliver(MessageBuffer& buffer, IntersectionId sender, std::string_view body,
                    std::span<const IntersectionId> recipients, const GridNetwork& network,
                    std::int64_t half_step_index, double radius_m = kDeliveryRadiusM,
                    std::vector<Violation>* violations = nullptr);

struct CommConfig {
  /// Ticks between half-step 1 and half-step 2.
  int offset_s = 7;
  bool messages_enabled = true;
  double radius_m = kDeliveryRadiusM;
};

/// Two-group scheduler: group 1 reads last half-step's messages, decides and
/// emits to group 2; the environment advances; group 2 does the same toward
/// group 1. A half-step fires once every member of its group has reached a
/// decision instant, and never earlier than `offset_s` after the previous one.
class AsyncScheduler {
 public:
  using IncidentFn = std::function<std::optional<std::string>(IntersectionId, int)>;
  /// Called with each inbox as it is consumed: (reader, messages, half-step index).
  using ReadHook =
      std::function<void(IntersectionId, std::span<const AgentMessage>, std::int64_t)>;

  AsyncScheduler(Simulator& sim, Agent& agent, CommConfig config = {});

  /// One full decision step (both half-steps). Returns false once the
  /// simulator reached `horizon_s` before the step could complete.
  bool step(int horizon_s);
  void run(int horizon_s);

  void set_incidents(IncidentFn fn) { incidents_ = std::move(fn); }
  void set_read_hook(ReadHook hook) { read_hook_ = std::move(hook); }

  const ParityPartition& partition() const { return partition_; }
  const MessageBuffer& buffer() const { return buffer_; }
  const std::vector<MessageLogEntry>& message_log() const { return log_; }
  const std::vector<Violation>& violations() const { return violations_; }
  std::int64_t steps_completed() const { return step_; }
  std::int64_t half_steps_completed() const { return half_index_; }

 private:
  bool group_due(const std::vector<IntersectionId>& group) const;
  bool advance_until(const std::vector<IntersectionId>& group, int earliest, int horizon_s);
  void half_step(const std::vector<IntersectionId>& group, int which);

  Simulator* sim_;
  Agent* agent_;
  CommConfig config_;
  ParityPartition partition_;
  MessageBuffer buffer_;
  IncidentFn incidents_;
  ReadHook read_hook_;
  std::vector<MessageLogEntry> log_;
  std::vector<Violation> violations_;
  std::int64_t step_ = 0;
  std::int64_t half_index_ = 0;
};

/// Baseline loop without communication: every intersection decides on its
/// own as soon as it reaches a decision instant.
void run_independent(Simulator& sim, Agent& agent, int horizon_s,
                     const AsyncScheduler::IncidentFn& incidents = {});

}  // namespace tsc
