#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsc/agentio.hpp"
#include "tsc/microsim.hpp"
#include "tsc/rlopt.hpp"

namespace tsc {

enum class IncidentScope { Local, NetworkWide };
std::string_view to_string(IncidentScope s);

struct Incident {
  std::string id;
  std::string text;
  std::optional<IntersectionId> location;  // nullopt: sampled at evaluation
  std::vector<PhaseId> allowed_actions;
  IncidentScope scope = IncidentScope::Local;
  friend bool operator==(const Incident&, const Incident&) = default;
};

/// Ten reference incidents with their accepted responses.
std::vector<Incident> builtin_incidents();

/// Line-delimited JSON records {id, text, location, allowed_actions, scope}.
/// Errors name the offending line.
std::vector<Incident> parse_incidents(std::string_view text);
std::vector<Incident> load_fixtures(const std::string& path);
std::string incidents_to_jsonl(std::span<const Incident> incidents);
/// Path of the bundled fixture file: $TSC_DATA_DIR when set, else the source
/// tree copy, else the installed one.
std::string bundled_fixture_path();

/// Keyword rule: direction words pick an axis; "serve" keywords (accident,
/// congestion, heavy traffic, ...) choose that axis' through phase, "block"
/// keywords (stopped, blocking, struck, ...) the perpendicular one.
std::optional<PhaseId> rule_table_action(std::string_view incident_text);

/// `count` single-answer incidents from templates, answers given by the rule.
std::vector<Incident> synthesize_incidents(std::size_t count, std::uint64_t seed);

/// Answers each prompt from the incident block via rule_table_action. With no
/// applicable rule it serves the phase with the longest queue in the
/// observation block.
class RuleTableTextModel : public TextModel {
 public:
  std::vector<std::optional<std::string>> complete(std::span<const std::string> prompts) override;
};

/// Random counts typical of a congested approach.
Observation random_observation(Rng& rng, IntersectionId id);

/// Mean score over incidents, one query each over a sampled observation.
/// nullopt when the agent does not answer incidents (reported "n/a").
std::optional<double> eval_eaa(Agent& agent, std::span<const Incident> incidents,
                               std::uint64_t seed, const GridNetwork& network = build_grid(4, 4, 300.0));

/// Same flow with every vehicle marked emergency with probability `fraction`.
FlowSpec emergency_flow(const FlowSpec& spec, double fraction = 0.05);

/// Serves the protected movement of the nearest approaching emergency
/// vehicle; otherwise defers to the wrapped agent.
class EmergencyAwareAgent : public Agent {
 public:
  explicit EmergencyAwareAgent(std::unique_ptr<Agent> fallback) : fallback_(std::move(fallback)) {}
  Decision decide(const DecisionContext& ctx) override;
  std::string name() const override { return "emergency-aware " + fallback_->name(); }

 private:
  std::unique_ptr<Agent> fallback_;
};

struct NetworkWideReport {
  double aett = 0.0;
  double aewt = 0.0;
  std::int64_t emergency_entered = 0;
  std::int64_t emergency_exited = 0;
  std::vector<std::string> warnings;
};

using AgentFactory = std::function<std::unique_ptr<Agent>(std::uint64_t seed)>;

/// Episodes under the scheduler, one per seed; emergency means are pooled
/// over every emergency vehicle across episodes (censored at the horizon).
NetworkWideReport eval_network_wide(const AgentFactory& make_agent, const SimScenario& scenario,
                                    std::span<const std::uint64_t> seeds);

}  // namespace tsc
