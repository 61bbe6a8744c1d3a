#include <gtest/gtest.h>

#include <map>
#include <set>

#include "tsc/asynccomm.hpp"

using namespace tsc;

namespace {

// Emits one report per decision and keeps the current phase.
class Reporter : public Agent {
 public:
  Decision decide(const DecisionContext& ctx) override {
    Decision d;
    d.phase = ctx.signal.current_phase;
    d.message = "from " + to_string(ctx.intersection);
    return d;
  }
  std::string name() const override { return "reporter"; }
};

class Silent : public Agent {
 public:
  Decision decide(const DecisionContext& ctx) override { return {ctx.signal.current_phase, {}, 0, 0}; }
  std::string name() const override { return "silent"; }
};

std::vector<IntersectionId> all_neighbors(const GridNetwork& g, IntersectionId id) { return g.neighbors(id); }

}  // namespace

TEST(Deliver, InteriorSenderReachesAllNeighbors) {
  const auto g = build_grid(4, 4, 300);
  MessageBuffer buf;
  const IntersectionId sender{1, 1};
  const auto n = all_neighbors(g, sender);
  EXPECT_EQ(n.size(), 4u);
  EXPECT_EQ(deliver(buf, sender, "hi", n, g, 0), 4u);
  EXPECT_EQ(buf.size(), 4u);
}

TEST(Deliver, CornerSenderHasTwoRecipients) {
  const auto g = build_grid(4, 4, 300);
  MessageBuffer buf;
  const IntersectionId corner{0, 0};
  EXPECT_EQ(deliver(buf, corner, "hi", all_neighbors(g, corner), g, 0), 2u);
}

TEST(Deliver, SameParityDroppedAndRecorded) {
  const auto g = build_grid(4, 4, 300);
  MessageBuffer buf;
  std::vector<Violation> v;
  const std::vector<IntersectionId> targets{{0, 1}, {1, 1}, {0, 0}, {9, 9}};
  EXPECT_EQ(deliver(buf, {0, 0}, "hi", targets, g, 0, kDeliveryRadiusM, &v), 1u);
  EXPECT_EQ(v.size(), 3u);
  EXPECT_EQ(buf.recipients(), (std::vector<IntersectionId>{{0, 1}}));
}

TEST(Deliver, BeyondRadiusNeverDelivered) {
  const auto g = build_grid(2, 2, 2100);
  MessageBuffer buf;
  std::vector<Violation> v;
  EXPECT_EQ(deliver(buf, {0, 0}, "hi", all_neighbors(g, {0, 0}), g, 0, kDeliveryRadiusM, &v), 0u);
  EXPECT_TRUE(buf.empty());
  EXPECT_TRUE(v.empty());
}

TEST(Buffer, TakeClears) {
  MessageBuffer buf;
  buf.add(make_message({0, 0}, {0, 1}, "a", 0));
  buf.add(make_message({1, 1}, {0, 1}, "b", 0));
  EXPECT_NE(buf.peek({0, 1}), nullptr);
  EXPECT_EQ(buf.take({0, 1}).size(), 2u);
  EXPECT_EQ(buf.peek({0, 1}), nullptr);
  EXPECT_TRUE(buf.empty());
  EXPECT_TRUE(buf.take({5, 5}).empty());
}

TEST(Scheduler, SilentAgentsLeaveBufferEmpty) {
  const auto g = build_grid(4, 4, 300);
  Simulator sim(g, SimConfig{}, {});
  Silent agent;
  AsyncScheduler s(sim, agent);
  for (int i = 0; i < 10; ++i) ASSERT_TRUE(s.step(10000));
  EXPECT_TRUE(s.buffer().empty());
  EXPECT_TRUE(s.message_log().empty());
  EXPECT_EQ(s.steps_completed(), 10);
  EXPECT_EQ(s.half_steps_completed(), 20);
}

TEST(Scheduler, Group1MessagesReadInSameStepSecondHalf) {
  const auto g = build_grid(4, 4, 300);
  Simulator sim(g, SimConfig{}, {});
  Reporter agent;
  AsyncScheduler s(sim, agent);
  std::vector<std::pair<std::int64_t, AgentMessage>> reads;
  s.set_read_hook([&](IntersectionId, std::span<const AgentMessage> inbox, std::int64_t h) {
    for (const auto& m : inbox) reads.emplace_back(h, m);
  });
  ASSERT_TRUE(s.step(10000));
  // Step 0: half-step 0 is group 1 (nothing to read), half-step 1 group 2.
  ASSERT_FALSE(reads.empty());
  for (const auto& [h, m] : reads) {
    EXPECT_EQ(h, 1);
    EXPECT_EQ(m.issued_half_step, 0);
    EXPECT_TRUE(ParityPartition::in_group1(m.sender));
    EXPECT_FALSE(ParityPartition::in_group1(m.recipient));
  }
  // Group 2's replies wait for group 1 in the next step.
  for (const auto& id : s.buffer().recipients()) EXPECT_TRUE(ParityPartition::in_group1(id));
}

TEST(Scheduler, LatencyIsExactlyOneHalfStep) {
  const auto g = build_grid(3, 4, 300);
  FlowSpec f;
  f.total_rate_vph = 3000;
  Simulator sim(g, SimConfig{}, spawn_flow(f, g, 3000));
  Reporter agent;
  AsyncScheduler s(sim, agent);
  int reads = 0;
  s.set_read_hook([&](IntersectionId reader, std::span<const AgentMessage> inbox, std::int64_t h) {
    for (const auto& m : inbox) {
      ++reads;
      EXPECT_EQ(m.issued_half_step + 1, h);
      EXPECT_NE(ParityPartition::in_group1(m.sender), ParityPartition::in_group1(reader));
    }
  });
  s.run(3000);
  EXPECT_GT(reads, 0);
  EXPECT_TRUE(s.violations().empty());
}

TEST(Scheduler, Group2WaitsForOffset) {
  const auto g = build_grid(2, 2, 300);
  Simulator sim(g, SimConfig{}, {});
  Silent agent;
  CommConfig cfg;
  cfg.offset_s = 7;
  AsyncScheduler s(sim, agent, cfg);
  ASSERT_TRUE(s.step(10000));
  std::map<IntersectionId, int> when;
  for (const auto& e : sim.events()) when.emplace(e.intersection, e.time);
  EXPECT_GE(when.at({0, 1}) - when.at({0, 0}), 7);
}

TEST(Scheduler, DisabledMessagesProduceNoTraffic) {
  const auto g = build_grid(3, 3, 300);
  Simulator sim(g, SimConfig{}, {});
  Reporter agent;
  CommConfig cfg;
  cfg.messages_enabled = false;
  cfg.offset_s = 0;
  AsyncScheduler s(sim, agent, cfg);
  s.run(600);
  EXPECT_TRUE(s.message_log().empty());
}

TEST(Scheduler, MessageLogJson) {
  MessageLogEntry e{3, 2, {0, 1}, {0, 0}, "Heavy \"eastbound\" traffic."};
  const auto j = message_log_to_json(e);
  EXPECT_NE(j.find("\"half_step\":2"), std::string::npos);
  EXPECT_NE(j.find("\\\"eastbound\\\""), std::string::npos);
}

TEST(Independent, EveryIntersectionDecides) {
  const auto g = build_grid(2, 3, 300);
  Simulator sim(g, SimConfig{}, {});
  Silent agent;
  run_independent(sim, agent, 150);
  std::set<IntersectionId> seen;
  for (const auto& e : sim.events()) seen.insert(e.intersection);
  EXPECT_EQ(seen.size(), g.size());
}
