#pragma once

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tsc/controllers.hpp"
#include "tsc/microsim.hpp"
#include "tsc/netmodel.hpp"
#include "tsc/observation.hpp"
#include "tsc/rng.hpp"

namespace tsc {

// ---------------------------------------------------------------------------
// Messages

inline constexpr std::size_t kMaxMessageLength = 512;

struct AgentMessage {
  IntersectionId sender;
  IntersectionId recipient;
  std::string body;
  std::int64_t issued_half_step = 0;
  friend bool operator==(const AgentMessage&, const AgentMessage&) = default;
};

/// Builds a message, truncating the body to kMaxMessageLength characters.
/// Throws InvalidArgument when sender == recipient.
AgentMessage make_message(IntersectionId sender, IntersectionId recipient, std::string_view body,
                          std::int64_t half_step);

/// "Heavy southbound traffic is approaching." for traffic queued on the
/// North approach, and so on.
std::string heavy_traffic_message(Approach queued_on);

// ---------------------------------------------------------------------------
// Prompt template

struct Prompt {
  std::string system_line;
  std::string task_description;
  std::string observation_block;
  std::optional<std::string> incident_block;
  std::optional<std::string> messages_block;
  std::string format_instruction;

  /// Blocks joined in template order.
  std::string text() const;
};

/// Renders the rollout prompt. The incident block appears when `incident` is
/// given or the observation reports emergency vehicles; the messages block
/// when the inbox is nonempty.
Prompt render_prompt(const Observation& obs, const std::optional<std::string>& incident,
                     std::span<const AgentMessage> inbox);

/// "An ambulance is currently approaching from the east." per approach with
/// an emergency vehicle, in order of first appearance.
std::vector<std::string> emergency_advisories(const Observation& obs);

struct ParsedResponse {
  std::string reasoning;
  std::optional<PhaseId> action;
  bool format_ok = false;
  /// Optional <message>...</message> span, truncated to kMaxMessageLength.
  std::optional<std::string> message;
};

/// Total: never throws. format_ok iff exactly one <think>...</think> span
/// precedes exactly one \boxed{...} naming a phase.
ParsedResponse parse_response(std::string_view text);

/// A well-formed answer naming `phase`.
std::string format_answer(PhaseId phase, std::string_view reasoning = "");

// ---------------------------------------------------------------------------
// Features and the parametric policy

/// Inbox summary: a constant bias slot followed by one count per approach of
/// neighbor reports announcing heavy traffic headed onto that approach.
inline constexpr std::size_t kInboxSlots = 5;
using InboxSummary = std::array<double, kInboxSlots>;

/// Per phase: four lane slots (upstream A, upstream B, downstream A,
/// downstream B), each with early_queued and three segment counts, raw and
/// divided by lane capacity.
inline constexpr std::size_t kObservationFeatures = 4 * 4 * 4 * 2;
inline constexpr std::size_t kFeatureDim = kObservationFeatures + kInboxSlots;

InboxSummary summarize_inbox(std::span<const AgentMessage> inbox, IntersectionId self);
/// Default summary with only the bias slot set (empty inbox).
InboxSummary empty_inbox_summary();

/// `capacity` normalizes counts; 13 matches 100 m segments at 7.5 m spacing.
std::vector<double> featurize(const Observation& obs, const InboxSummary& inbox,
                              double capacity = 13.0);

// Linear-softmax policy over the four phases: logits = weights * features.
class ParametricPolicy {
 public:
  static constexpr std::size_t kActions = 4;

  explicit ParametricPolicy(std::size_t feature_dim = kFeatureDim);

  std::size_t feature_dim() const { return dim_; }
  std::size_t parameter_count() const { return weights_.size(); }
  std::span<double> weights() { return weights_; }
  std::span<const double> weights() const { return weights_; }
  /// Row of action `a`.
  std::span<const double> row(std::size_t a) const;

  std::array<double, kActions> logits(std::span<const double> features) const;
  std::array<double, kActions> log_probabilities(std::span<const double> features) const;
  std::array<double, kActions> probabilities(std::span<const double> features) const;
  PhaseId greedy(std::span<const double> features) const;
  PhaseId sample(std::span<const double> features, Rng& rng) const;

  friend bool operator==(const ParametricPolicy&, const ParametricPolicy&) = default;

 private:
  std::size_t dim_;
  std::vector<double> weights_;  // kActions x dim_, row-major in kPhases order
};

struct LogProbGrad {
  double log_prob = 0.0;
  std::vector<double> gradient;  // same layout as the weights
};

/// Exact log pi(action | features) and its gradient in the weights.
LogProbGrad log_prob_and_grad(const ParametricPolicy& policy, std::span<const double> features,
                              PhaseId action);

/// Text document with layout metadata; reload is exact.
std::string policy_to_text(const ParametricPolicy& policy);
ParametricPolicy policy_from_text(std::string_view text);

// ---------------------------------------------------------------------------
// Agents

struct DecisionContext {
  IntersectionId intersection;
  Observation observation;
  std::vector<AgentMessage> inbox;
  SignalState signal;
  int time = 0;
  std::optional<std::string> incident;
};

struct Decision {
  PhaseId phase = PhaseId::ETWT;
  std::optional<std::string> message;
  double log_prob = 0.0;
  int green_s = 0;  // 0 keeps the simulator default
};

class Agent {
 public:
  virtual ~Agent() = default;
  virtual Decision decide(const DecisionContext& ctx) = 0;
  /// Decides for several intersections acting in the same half-step.
  /// Backends with remote calls override this to issue them together.
  virtual std::vector<Decision> decide_batch(std::span<const DecisionContext> ctxs);
  /// Whether the agent consumes incident text at all.
  virtual bool reads_text() const { return false; }
  /// Whether incident-answer accuracy is meaningful for this agent. Agents
  /// that decide from counts alone would answer the same with or without the
  /// incident, so their score is reported as not applicable.
  virtual bool answers_incidents() const { return reads_text(); }
  virtual std::string name() const = 0;
};

class FixedTimeAgent : public Agent {
 public:
  explicit FixedTimeAgent(FixedTimePlan plan = {});
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "fixedtime"; }
  /// Green for the phase just chosen, from the plan.
  int green_for(PhaseId p) const { return plan_.green_s[index(p)]; }

 private:
  FixedTimePlan plan_;
};

class MaxPressureAgent : public Agent {
 public:
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "maxpressure"; }
};

class RandomAgent : public Agent {
 public:
  explicit RandomAgent(std::uint64_t seed) : rng_(seed, 77) {}
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "random"; }
  /// A uniform guess is a valid (if uninformed) answer to any incident.
  bool answers_incidents() const override { return true; }

 private:
  Rng rng_;
};

struct MessageRule {
  /// Emit a report when an approach holds more than this many buffered vehicles.
  int heavy_threshold = 10;
  bool enabled = true;
};

/// One parametric decision: features, sampled (or greedy) action, log-prob,
/// and a templated outgoing report when an approach is congested.
Decision policy_decide(const ParametricPolicy& policy, const Observation& obs,
                       std::span<const AgentMessage> inbox, Rng* rng,
                       const MessageRule& rule = {});

/// Optional outgoing report for an observation under a rule.
std::optional<std::string> congestion_report(const Observation& obs, const MessageRule& rule);

struct RecordedStep {
  std::vector<double> features;
  PhaseId action = PhaseId::ETWT;
  double log_prob = 0.0;
};

class ParametricAgent : public Agent {
 public:
  enum class Mode { Sample, Greedy };

  ParametricAgent(const ParametricPolicy& policy, std::uint64_t seed, Mode mode = Mode::Sample,
                  MessageRule rule = {});
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "policy"; }

  /// Every (features, action, log-prob) decided so far, in call order.
  const std::vector<RecordedStep>& steps() const { return steps_; }
  void set_recording(bool on) { recording_ = on; }

 private:
  const ParametricPolicy* policy_;
  Rng rng_;
  Mode mode_;
  MessageRule rule_;
  bool recording_ = true;
  std::vector<RecordedStep> steps_;
};

// ---------------------------------------------------------------------------
// Text policies

/// Something that completes prompts; nullopt means no answer (timeout or
/// transport failure).
class TextModel {
 public:
  virtual ~TextModel() = default;
  virtual std::vector<std::optional<std::string>> complete(std::span<const std::string> prompts) = 0;
};

struct ProtocolEvent {
  int time = 0;
  IntersectionId intersection;
  std::string reason;
};

/// Renders the prompt, queries the model, parses the answer. When the model
/// gives no usable phase the MaxPressure choice is used and a protocol event
/// is recorded.
class TextAgent : public Agent {
 public:
  explicit TextAgent(TextModel& model) : model_(&model) {}
  Decision decide(const DecisionContext& ctx) override;
  std::vector<Decision> decide_batch(std::span<const DecisionContext> ctxs) override;
  bool reads_text() const override { return true; }
  std::string name() const override { return "text"; }

  const std::vector<ProtocolEvent>& protocol_events() const { return events_; }
  const std::vector<ParsedResponse>& responses() const { return responses_; }

 private:
  TextModel* model_;
  std::vector<ProtocolEvent> events_;
  std::vector<ParsedResponse> responses_;
};

std::string protocol_event_to_json(const ProtocolEvent& e);

}  // namespace tsc
