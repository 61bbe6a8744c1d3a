#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "tsc/agentio.hpp"
#include "tsc/error.hpp"
#include "tsc/incidents.hpp"

using namespace tsc;

namespace {

Observation sample_observation() {
  auto obs = empty_observation({0, 0});
  auto& b = obs.block(PhaseId::ETWT);
  b.upstream[0].early_queued = 2;
  b.upstream[1].early_queued = 1;
  return obs;
}

// Canned model: returns the same text for every prompt.
class Canned : public TextModel {
 public:
  explicit Canned(std::optional<std::string> text) : text_(std::move(text)) {}
  std::vector<std::optional<std::string>> complete(std::span<const std::string> prompts) override {
    seen.assign(prompts.begin(), prompts.end());
    return std::vector<std::optional<std::string>>(prompts.size(), text_);
  }
  std::vector<std::string> seen;

 private:
  std::optional<std::string> text_;
};

}  // namespace

TEST(Prompt, SampleObservationBlock) {
  const auto text = render_prompt(sample_observation(), std::nullopt, {}).text();
  EXPECT_NE(text.find("Early queued: 2 (East), 1 (West), 3 (Total)"), std::string::npos);
  EXPECT_NE(text.find("\\boxed{"), std::string::npos);
}

TEST(Prompt, EmptyObservationKeepsStructure) {
  const auto empty = render_prompt(empty_observation(), std::nullopt, {});
  const auto full = render_prompt(sample_observation(), std::nullopt, {});
  EXPECT_NE(empty.observation_block.find("Early queued: 0 (East), 0 (West), 0 (Total)"), std::string::npos);
  auto lines = [](const std::string& s) { return std::count(s.begin(), s.end(), '\n'); };
  EXPECT_EQ(lines(empty.text()), lines(full.text()));
  EXPECT_FALSE(empty.incident_block.has_value());
  EXPECT_FALSE(empty.messages_block.has_value());
}

TEST(Prompt, InjectiveOnObservations) {
  Rng rng(12);
  std::set<std::string> prompts;
  std::set<std::string> observations;
  for (int i = 0; i < 300; ++i) {
    const auto obs = random_observation(rng, {0, 0});
    if (observations.insert(observation_to_json(obs)).second) {
      EXPECT_TRUE(prompts.insert(render_prompt(obs, std::nullopt, {}).text()).second);
    }
  }
}

TEST(Prompt, OptionalBlocks) {
  const std::vector<AgentMessage> inbox{make_message({0, 1}, {0, 0}, "Heavy traffic.", 0)};
  const auto p = render_prompt(empty_observation(), std::string("Road closed"), inbox);
  ASSERT_TRUE(p.incident_block.has_value());
  EXPECT_NE(p.incident_block->find("Road closed"), std::string::npos);
  ASSERT_TRUE(p.messages_block.has_value());
  EXPECT_NE(p.messages_block->find("Heavy traffic."), std::string::npos);
}

TEST(Prompt, EmergencyAdvisory) {
  auto obs = empty_observation();
  obs.emergencies.push_back({Approach::East, Movement::Through});
  const auto adv = emergency_advisories(obs);
  ASSERT_EQ(adv.size(), 1u);
  EXPECT_EQ(adv[0], "An ambulance is currently approaching from the east.");
  const auto p = render_prompt(obs, std::nullopt, {});
  ASSERT_TRUE(p.incident_block.has_value());
  EXPECT_TRUE(emergency_advisories(empty_observation()).empty());
}

TEST(Parse, WellFormed) {
  const auto r = parse_response("<think>x</think> \\boxed{ETWT}");
  EXPECT_EQ(r.reasoning, "x");
  EXPECT_EQ(r.action, PhaseId::ETWT);
  EXPECT_TRUE(r.format_ok);
}

TEST(Parse, MissingThink) {
  const auto r = parse_response("\\boxed{ETWT}");
  EXPECT_EQ(r.action, PhaseId::ETWT);
  EXPECT_FALSE(r.format_ok);
}

TEST(Parse, InvalidPhase) {
  const auto r = parse_response("<think>y</think> \\boxed{GREEN}");
  EXPECT_FALSE(r.action.has_value());
  EXPECT_FALSE(r.format_ok);
}

TEST(Parse, DuplicateBoxedIsMalformed) {
  EXPECT_FALSE(parse_response("<think>a</think> \\boxed{ETWT} \\boxed{NTST}").format_ok);
  EXPECT_FALSE(parse_response("\\boxed{ETWT} <think>a</think>").format_ok);
}

TEST(Parse, MessageSpan) {
  const auto r = parse_response("<think>t</think><message>Heavy eastbound traffic.</message>\\boxed{NTST}");
  EXPECT_TRUE(r.format_ok);
  EXPECT_EQ(r.message, "Heavy eastbound traffic.");
}

TEST(Parse, RoundTripForEveryPhase) {
  for (auto p : kPhases) {
    const auto r = parse_response(format_answer(p, "because"));
    EXPECT_EQ(r.action, p);
    EXPECT_TRUE(r.format_ok);
  }
}

TEST(Parse, TotalOnGarbage) {
  Rng rng(13);
  const std::string alphabet = "<>/{}\\boxedthinkETWNLS \n";
  for (int i = 0; i < 5000; ++i) {
    std::string s;
    const auto n = rng.below(60);
    for (std::size_t j = 0; j < n; ++j) s += alphabet[rng.below(alphabet.size())];
    EXPECT_NO_THROW(parse_response(s));
  }
  EXPECT_NO_THROW(parse_response(std::string("\0\xff\\boxed{", 9)));
}

TEST(Features, Dimension) {
  EXPECT_EQ(kFeatureDim, 4u * 4 * 4 * 2 + kInboxSlots);
  EXPECT_EQ(featurize(empty_observation(), empty_inbox_summary()).size(), kFeatureDim);
}

TEST(Features, EmptyObservationIsZero) {
  const auto x = featurize(empty_observation(), empty_inbox_summary());
  for (std::size_t i = 0; i < kObservationFeatures; ++i) EXPECT_EQ(x[i], 0.0);
}

TEST(Features, DoublingOneCountTouchesTwoCoordinates) {
  auto obs = sample_observation();
  const auto before = featurize(obs, empty_inbox_summary());
  obs.block(PhaseId::ETWT).upstream[0].early_queued *= 2;
  const auto after = featurize(obs, empty_inbox_summary());
  int changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before[i] != after[i];
  EXPECT_EQ(changed, 2);
}

TEST(Inbox, CountsHeavyReportsHeadedOurWay) {
  // The eastern neighbor's westbound traffic comes here; its southbound does not.
  const std::vector<AgentMessage> inbox{
      make_message({0, 1}, {0, 0}, heavy_traffic_message(Approach::East), 0),
      make_message({0, 1}, {0, 0}, heavy_traffic_message(Approach::North), 0)};
  const auto s = summarize_inbox(inbox, {0, 0});
  EXPECT_EQ(s[0], empty_inbox_summary()[0]);
  double total = 0;
  for (std::size_t i = 1; i < kInboxSlots; ++i) total += s[i];
  EXPECT_EQ(total, 1.0);
}

TEST(Messages, SelfAddressedRejectedAndLongBodiesTruncated) {
  EXPECT_THROW(make_message({0, 0}, {0, 0}, "x", 0), InvalidArgument);
  const auto m = make_message({0, 0}, {0, 1}, std::string(2000, 'a'), 0);
  EXPECT_EQ(m.body.size(), kMaxMessageLength);
}

TEST(Policy, SoftmaxOfLargeLogit) {
  ParametricPolicy p(1);
  p.weights()[0] = 10;  // row ETWT, single feature
  const std::vector<double> x{1.0};
  // 1 / (1 + 3 e^-10), a little under 0.99987.
  EXPECT_NEAR(p.probabilities(x)[0], 1.0 / (1.0 + 3.0 * std::exp(-10.0)), 1e-15);
  EXPECT_GT(p.probabilities(x)[0], 0.9998);
  EXPECT_EQ(p.greedy(x), PhaseId::ETWT);
}

TEST(Policy, UniformAtZero) {
  ParametricPolicy p;
  const auto x = featurize(sample_observation(), empty_inbox_summary());
  for (auto p_ : kPhases) EXPECT_NEAR(log_prob_and_grad(p, x, p_).log_prob, std::log(0.25), 1e-15);
}

TEST(Policy, NormalizedAndPositive) {
  Rng rng(14);
  for (int i = 0; i < 200; ++i) {
    ParametricPolicy p(6);
    for (double& w : p.weights()) w = (rng.uniform() - 0.5) * 200;
    std::vector<double> x(6);
    for (double& v : x) v = (rng.uniform() - 0.5) * 20;
    const auto lp = p.log_probabilities(x);
    double sum = 0;
    for (double l : lp) {
      EXPECT_TRUE(std::isfinite(l));
      sum += std::exp(l);
    }
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (double q : p.probabilities(x)) EXPECT_GE(q, 0.0);
  }
}

TEST(Policy, LogProbGradientMatchesFiniteDifferences) {
  Rng rng(15);
  const double h = 1e-6;
  for (int inst = 0; inst < 50; ++inst) {
    ParametricPolicy p(5);
    for (double& w : p.weights()) w = rng.uniform() * 2 - 1;
    std::vector<double> x(5);
    for (double& v : x) v = rng.uniform() * 2 - 1;
    const PhaseId a = kPhases[rng.below(4)];
    const auto g = log_prob_and_grad(p, x, a);
    for (std::size_t i = 0; i < p.parameter_count(); ++i) {
      auto plus = p, minus = p;
      plus.weights()[i] += h;
      minus.weights()[i] -= h;
      const double fd = (log_prob_and_grad(plus, x, a).log_prob - log_prob_and_grad(minus, x, a).log_prob) / (2 * h);
      EXPECT_NEAR(fd, g.gradient[i], 1e-6 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(Policy, TextRoundTripIsExact) {
  Rng rng(16);
  ParametricPolicy p;
  for (double& w : p.weights()) w = (rng.uniform() - 0.5) * 1e-3 / 3.0;
  EXPECT_EQ(policy_from_text(policy_to_text(p)), p);
  EXPECT_ANY_THROW(policy_from_text("not a policy"));
}

TEST(Agents, NoMessageBelowThreshold) {
  MessageRule rule;
  EXPECT_FALSE(congestion_report(sample_observation(), rule).has_value());
  auto obs = sample_observation();
  obs.block(PhaseId::NTST).upstream[0].early_queued = rule.heavy_threshold + 1;
  EXPECT_TRUE(congestion_report(obs, rule).has_value());
  rule.enabled = false;
  EXPECT_FALSE(congestion_report(obs, rule).has_value());
}

TEST(Agents, TextBackendSampleResponse) {
  Canned model(std::string("<think>The eastern and western through lanes hold the most vehicles.</think>\n\\boxed{ETWT}"));
  TextAgent agent(model);
  DecisionContext ctx;
  ctx.observation = sample_observation();
  EXPECT_EQ(agent.decide(ctx).phase, PhaseId::ETWT);
  EXPECT_TRUE(agent.protocol_events().empty());
  ASSERT_EQ(model.seen.size(), 1u);
  EXPECT_NE(model.seen[0].find("Early queued: 2 (East)"), std::string::npos);
}

TEST(Agents, TextFallbackRecordsProtocolEvent) {
  Canned model(std::nullopt);
  TextAgent agent(model);
  DecisionContext ctx;
  ctx.observation = empty_observation();
  ctx.observation.block(PhaseId::NLSL).upstream[0].early_queued = 9;
  EXPECT_EQ(agent.decide(ctx).phase, PhaseId::NLSL);
  ASSERT_EQ(agent.protocol_events().size(), 1u);
  EXPECT_NE(protocol_event_to_json(agent.protocol_events()[0]).find("maxpressure"), std::string::npos);
}

TEST(Agents, ParametricRecordsSteps) {
  ParametricPolicy policy;
  ParametricAgent agent(policy, 3);
  DecisionContext ctx;
  ctx.observation = sample_observation();
  for (int i = 0; i < 5; ++i) agent.decide(ctx);
  ASSERT_EQ(agent.steps().size(), 5u);
  for (const auto& s : agent.steps()) EXPECT_NEAR(s.log_prob, std::log(0.25), 1e-12);
}

TEST(ObservationJson, RoundTrip) {
  Rng rng(17);
  for (int i = 0; i < 20; ++i) {
    auto obs = random_observation(rng, {1, 2});
    obs.emergencies.push_back({Approach::South, Movement::Left});
    EXPECT_EQ(observation_from_json(observation_to_json(obs)), obs);
  }
}
