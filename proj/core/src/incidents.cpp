#include "tsc/incidents.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json_io.hpp"
#include "tsc/error.hpp"
#include "tsc/asynccomm.hpp"
#include "tsc/parallel.hpp"

#ifndef TSC_DATA_DIR
#define TSC_DATA_DIR "data"
#endif
#ifndef TSC_INSTALL_DATA_DIR
#define TSC_INSTALL_DATA_DIR TSC_DATA_DIR
#endif

namespace tsc {

using detail::json;

std::string_view to_string(IncidentScope s) {
  return s == IncidentScope::Local ? "local" : "network_wide";
}

std::vector<Incident> parse_incidents(std::string_view text) {
  std::vector<Incident> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = detail::parse_json(line, "incident", n);
    try {
      if (!j.is_object()) throw ParseError("incident: expected an object", n);
      for (const auto& [key, _] : j.items())
        if (key != "id" && key != "text" && key != "location" && key != "allowed_actions" &&
            key != "scope")
          throw ParseError("incident: unknown field '" + key + "'", n);
      Incident inc;
      const auto& id = j.at("id");
      inc.id = id.is_string() ? id.get<std::string>() : id.dump();
      inc.text = j.at("text").get<std::string>();
      if (inc.text.empty()) throw ParseError("incident: empty text", n);
      if (j.contains("location") && !j["location"].is_null())
        inc.location = detail::id_from_json(j["location"]);
      for (const auto& a : j.at("allowed_actions")) {
        const PhaseId p = detail::phase_from_json(a);
        if (std::find(inc.allowed_actions.begin(), inc.allowed_actions.end(), p) ==
            inc.allowed_actions.end())
          inc.allowed_actions.push_back(p);
      }
      if (inc.allowed_actions.empty()) throw ParseError("incident: allowed_actions is empty", n);
      const std::string scope = j.value("scope", std::string("local"));
      if (scope == "local")
        inc.scope = IncidentScope::Local;
      else if (scope == "network_wide")
        inc.scope = IncidentScope::NetworkWide;
      else
        throw ParseError("incident: unknown scope '" + scope + "'", n);
      out.push_back(std::move(inc));
    } catch (const ParseError& e) {
      if (e.line()) throw;
      throw ParseError(e.what(), n);
    } catch (const json::exception& e) {
      throw ParseError(std::string("incident: ") + e.what(), n);
    }
  }
  return out;
}

std::vector<Incident> load_fixtures(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open incident fixtures '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_incidents(ss.str());
}

std::string incidents_to_jsonl(std::span<const Incident> incidents) {
  std::string out;
  for (const auto& inc : incidents) {
    json actions = json::array();
    for (PhaseId p : inc.allowed_actions) actions.push_back(std::string(to_string(p)));
    json j{{"id", inc.id}, {"text", inc.text}};
    j["location"] = inc.location ? detail::id_to_json(*inc.location) : json(nullptr);
    j["allowed_actions"] = actions;
    j["scope"] = std::string(to_string(inc.scope));
    out += j.dump() + "\n";
  }
  return out;
}

std::string bundled_fixture_path() {
  // Relocated installs can point at their share/tsc directory.
  if (const char* dir = std::getenv("TSC_DATA_DIR"); dir && *dir)
    return (std::filesystem::path(dir) / "incidents.jsonl").string();
  const std::filesystem::path source = std::filesystem::path(TSC_DATA_DIR) / "incidents.jsonl";
  if (std::filesystem::exists(source)) return source.string();
  return (std::filesystem::path(TSC_INSTALL_DATA_DIR) / "incidents.jsonl").string();
}

std::vector<Incident> builtin_incidents() { return load_fixtures(bundled_fixture_path()); }

// ---------------------------------------------------------------------------

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool contains_any(const std::string& text, std::initializer_list<std::string_view> words) {
  return std::any_of(words.begin(), words.end(),
                     [&](std::string_view w) { return text.find(w) != std::string::npos; });
}

// Axis of the earliest direction word, preferring explicit headings.
std::optional<bool> east_west_axis(const std::string& text) {
  auto earliest = [&](std::initializer_list<std::pair<std::string_view, bool>> words)
      -> std::optional<bool> {
    std::size_t best = std::string::npos;
    std::optional<bool> axis;
    for (const auto& [w, ew] : words) {
      const auto pos = text.find(w);
      if (pos < best) {
        best = pos;
        axis = ew;
      }
    }
    return axis;
  };
  if (auto a = earliest({{"eastbound", true}, {"westbound", true}, {"northbound", false},
                         {"southbound", false}}))
    return a;
  return earliest({{"east", true}, {"west", true}, {"north", false}, {"south", false}});
}

}  // namespace

std::optional<PhaseId> rule_table_action(std::string_view incident_text) {
  const std::string t = lower(incident_text);
  const auto ew = east_west_axis(t);
  if (!ew) return std::nullopt;
  const bool block = contains_any(t, {"stopped", "blocking", "blocked", "struck", "slowing",
                                      "spun out", "closed"});
  const bool serve = contains_any(t, {"accident", "congestion", "heavy", "jam", "marathon",
                                      "dismiss", "ambulance", "fire truck", "emergency", "queue"});
  if (!block && !serve) return std::nullopt;
  const bool serve_ew = block ? !*ew : *ew;
  return serve_ew ? PhaseId::ETWT : PhaseId::NTST;
}

std::vector<Incident> synthesize_incidents(std::size_t count, std::uint64_t seed) {
  static constexpr std::array<std::string_view, 8> kTemplates{
      "A collision in the {}bound lane has caused a traffic accident with long queues.",
      "Heavy {}bound traffic is building up after a concert.",
      "Congestion is reported on the {}bound approach.",
      "A charity marathon is using the {}bound lanes.",
      "A delivery truck is stopped in the {}bound lane.",
      "A crowd is blocking the {}bound crosswalk.",
      "Road works are slowing {}bound traffic.",
      "A car spun out in the {}bound lane.",
  };
  static constexpr std::array<std::string_view, 4> kHeadings{"north", "south", "east", "west"};
  Rng rng(seed, 404);
  std::vector<Incident> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::string text(kTemplates[rng.below(kTemplates.size())]);
    text.replace(text.find("{}"), 2, kHeadings[rng.below(kHeadings.size())]);
    text = "At this intersection, " + std::string(1, static_cast<char>(std::tolower(text[0]))) +
           text.substr(1);
    const auto action = rule_table_action(text);
    if (!action) throw ContractViolation("incident template without a rule answer");
    out.push_back({"syn-" + std::to_string(i + 1), text, std::nullopt, {*action},
                   IncidentScope::Local});
  }
  return out;
}

namespace {

// Stop-line plus segment 1 totals per phase, read back from the rendered
// observation.
std::optional<std::array<int, 4>> loads_in_prompt(std::string_view prompt) {
  auto total_on_line = [&](std::string_view label, std::size_t from) -> std::optional<int> {
    const auto at = prompt.find(label, from);
    if (at == std::string_view::npos) return std::nullopt;
    const auto close = prompt.find(" (Total)", at);
    const auto comma = prompt.rfind(", ", close);
    if (close == std::string_view::npos || comma == std::string_view::npos || comma < at) return std::nullopt;
    int v = 0;
    for (char c : prompt.substr(comma + 2, close - comma - 2)) {
      if (c < '0' || c > '9') return std::nullopt;
      v = v * 10 + (c - '0');
    }
    return v;
  };
  std::array<int, 4> loads{};
  int seen = 0;
  std::size_t pos = 0;
  while ((pos = prompt.find("Signal: ", pos)) != std::string_view::npos) {
    pos += 8;
    const auto eol = prompt.find('\n', pos);
    const auto phase = parse_phase(prompt.substr(pos, eol - pos));
    const auto queued = total_on_line("Early queued: ", pos);
    const auto seg1 = total_on_line("Segment 1: ", pos);
    if (!phase || !queued || !seg1) return std::nullopt;
    loads[index(*phase)] = *queued + *seg1;
    ++seen;
  }
  if (seen == 0) return std::nullopt;
  return loads;
}

bool only_advisories(std::string_view block) {
  constexpr std::string_view kPrefix = "An ambulance is currently approaching from";
  std::size_t pos = 0;
  bool any = false;
  while (pos < block.size()) {
    auto eol = block.find('\n', pos);
    if (eol == std::string_view::npos) eol = block.size();
    const auto line = block.substr(pos, eol - pos);
    if (!line.empty()) {
      if (!line.starts_with(kPrefix)) return false;
      any = true;
    }
    pos = eol + 1;
  }
  return any;
}

}  // namespace

std::vector<std::optional<std::string>> RuleTableTextModel::complete(
    std::span<const std::string> prompts) {
  std::vector<std::optional<std::string>> out;
  out.reserve(prompts.size());
  constexpr std::string_view kHeader = "Incident Information:\n";
  for (const auto& prompt : prompts) {
    const auto loads = loads_in_prompt(prompt);
    std::optional<PhaseId> action;
    const auto start = prompt.find(kHeader);
    if (start != std::string::npos) {
      const auto body_start = start + kHeader.size();
      auto end = prompt.find("\nMessages:\n", body_start);
      if (end == std::string::npos) end = prompt.find("\nFormat Instruction:", body_start);
      if (end == std::string::npos) end = prompt.size();
      const auto block = std::string_view(prompt).substr(body_start, end - body_start);
      action = rule_table_action(block);
      // An advisory names the side but not the lane, so pick the busier of
      // that axis' through and left phases.
      if (action && loads && only_advisories(block)) {
        const PhaseId left = *action == PhaseId::ETWT ? PhaseId::ELWL : PhaseId::NLSL;
        if ((*loads)[index(left)] > (*loads)[index(*action)]) action = left;
      }
    }
    if (action) {
      out.push_back(format_answer(*action, "The incident report decides the phase."));
    } else if (loads) {
      const auto busiest = std::max_element(loads->begin(), loads->end()) - loads->begin();
      out.push_back(format_answer(kPhases[static_cast<std::size_t>(busiest)],
                                  "No incident rule applies; serving the longest queue."));
    } else {
      out.push_back(std::nullopt);
    }
  }
  return out;
}

Observation random_observation(Rng& rng, IntersectionId id) {
  Observation obs = empty_observation(id);
  auto fill = [&](LaneCounts& lane, int max_queue) {
    lane.early_queued = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_queue) + 1));
    for (auto& s : lane.segments) s = static_cast<int>(rng.below(9));
  };
  for (auto& b : obs.phases) {
    for (auto& lane : b.upstream) fill(lane, 12);
    for (auto& lane : b.downstream) fill(lane, 12);
  }
  for (auto& lane : obs.right_turn) fill(lane, 6);
  return obs;
}

std::optional<double> eval_eaa(Agent& agent, std::span<const Incident> incidents,
                               std::uint64_t seed, const GridNetwork& network) {
  if (incidents.empty()) throw InvalidArgument("eval_eaa needs at least one incident");
  if (!agent.answers_incidents()) return std::nullopt;
  Rng rng(seed, 321);
  std::vector<DecisionContext> ctxs;
  ctxs.reserve(incidents.size());
  for (const auto& inc : incidents) {
    DecisionContext c;
    c.intersection = inc.location.value_or(network.intersections()[rng.below(network.size())]);
    c.observation = random_observation(rng, c.intersection);
    c.incident = inc.text;
    ctxs.push_back(std::move(c));
  }
  const auto decisions = agent.decide_batch(ctxs);
  double hits = 0.0;
  for (std::size_t i = 0; i < incidents.size(); ++i) {
    const auto& allowed = incidents[i].allowed_actions;
    if (std::find(allowed.begin(), allowed.end(), decisions.at(i).phase) != allowed.end()) hits += 1.0;
  }
  return hits / static_cast<double>(incidents.size());
}

FlowSpec emergency_flow(const FlowSpec& spec, double fraction) {
  if (!(fraction >= 0.0 && fraction <= 1.0))
    throw InvalidArgument("emergency fraction must lie in [0, 1]");
  FlowSpec out = spec;
  out.emergency_fraction = fraction;
  return out;
}

Decision EmergencyAwareAgent::decide(const DecisionContext& ctx) {
  for (const auto& e : ctx.observation.emergencies) {
    if (auto p = phase_serving(e)) return Decision{*p, std::nullopt, 0.0, 0};
  }
  return fallback_->decide(ctx);
}

NetworkWideReport eval_network_wide(const AgentFactory& make_agent, const SimScenario& scenario,
                                    std::span<const std::uint64_t> seeds) {
  if (seeds.empty()) throw InvalidArgument("eval_network_wide needs at least one seed");
  std::vector<MetricsReport> reports(seeds.size());
  parallel_for(seeds.size(), [&](std::size_t i) {
    FlowSpec flow = scenario.flow;
    flow.seed = seeds[i];
    Simulator sim(scenario.network, scenario.sim,
                  spawn_flow(flow, scenario.network, scenario.horizon_s));
    auto agent = make_agent(seeds[i]);
    AsyncScheduler sched(sim, *agent, scenario.comm);
    sched.run(scenario.horizon_s);
    reports[i] = sim.metrics();
  });
  NetworkWideReport r;
  double travel = 0.0;
  double wait = 0.0;
  for (const auto& m : reports) {
    travel += m.aett * static_cast<double>(m.emergency_entered);
    wait += m.aewt * static_cast<double>(m.emergency_entered);
    r.emergency_entered += m.emergency_entered;
    r.emergency_exited += m.emergency_exited;
  }
  if (r.emergency_entered > 0) {
    r.aett = travel / static_cast<double>(r.emergency_entered);
    r.aewt = wait / static_cast<double>(r.emergency_entered);
  }
  if (r.emergency_entered > 0 && r.emergency_exited == 0)
    r.warnings.push_back("no emergency vehicle completed its trip; means are censored at the horizon");
  else if (r.emergency_exited < r.emergency_entered)
    r.warnings.push_back(std::to_string(r.emergency_entered - r.emergency_exited) +
                         " emergency vehicles still en route; their times are censored");
  return r;
}

}  // namespace tsc
