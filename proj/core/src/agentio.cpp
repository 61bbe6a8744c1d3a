#include "tsc/agentio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "json_io.hpp"
#include "tsc/error.hpp"

namespace tsc {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string_view heading_word(Approach heading) {
  switch (heading) {
    case Approach::North: return "northbound";
    case Approach::South: return "southbound";
    case Approach::East: return "eastbound";
    case Approach::West: return "westbound";
  }
  return "";
}

/// Side of `self` on which `other` lies (dominant axis).
Approach side_of(IntersectionId self, IntersectionId other) {
  const int dr = other.row - self.row;
  const int dc = other.col - self.col;
  if (std::abs(dr) >= std::abs(dc)) return dr < 0 ? Approach::North : Approach::South;
  return dc > 0 ? Approach::East : Approach::West;
}

}  // namespace

AgentMessage make_message(IntersectionId sender, IntersectionId recipient, std::string_view body,
                          std::int64_t half_step) {
  if (sender == recipient) throw InvalidArgument("message sender equals recipient");
  return {sender, recipient, std::string(body.substr(0, kMaxMessageLength)), half_step};
}

std::string heavy_traffic_message(Approach queued_on) {
  return "Heavy " + std::string(heading_word(opposite(queued_on))) + " traffic is approaching.";
}

// ---------------------------------------------------------------------------

namespace {

constexpr std::string_view kSystemLine = "You are a helpful traffic control agent.";

constexpr std::string_view kTaskDescription =
    "The intersection joins a north-south road and an east-west road under one traffic light. "
    "Every approach has a through lane and a left-turn lane; right turns are always allowed. "
    "Lanes are split into segments by distance from the stop line, Segment 1 being the nearest, "
    "and early queued vehicles are already waiting at the stop line. Pick the signal that will "
    "most improve traffic during the next phase.";

constexpr std::string_view kFormatInstruction =
    "You can only choose one of the signals listed above. You FIRST think about the reasoning "
    "process for your choice as an internal monologue and then provide the final answer. Your "
    "think process MUST BE put in <think>...</think> tags. The final choice MUST BE put in "
    "\\boxed{ }.";

std::string_view allowed_lanes(PhaseId p) {
  switch (p) {
    case PhaseId::ETWT: return "Eastern and western through lanes";
    case PhaseId::ELWL: return "Eastern and western left lanes";
    case PhaseId::NTST: return "North and south through lanes";
    case PhaseId::NLSL: return "North and south left lanes";
  }
  return "";
}

void count_line(std::ostringstream& os, std::string_view label, int a, int b, Approach first,
                Approach second) {
  os << "- " << label << ": " << a << " (" << to_string(first) << "), " << b << " ("
     << to_string(second) << "), " << a + b << " (Total)\n";
}

}  // namespace

std::string Prompt::text() const {
  std::string out;
  out += "System: " + system_line + "\n";
  out += "Task Description: " + task_description + "\n";
  out += "Structured Traffic Observation:\n" + observation_block;
  if (incident_block) out += "Incident Information:\n" + *incident_block;
  if (messages_block) out += "Messages:\n" + *messages_block;
  out += "Format Instruction: " + format_instruction + "\n";
  return out;
}

std::vector<std::string> emergency_advisories(const Observation& obs) {
  std::vector<std::string> lines;
  std::array<bool, 4> seen{};
  for (const auto& e : obs.emergencies) {
    if (seen[index(e.approach)]) continue;
    seen[index(e.approach)] = true;
    lines.push_back("An ambulance is currently approaching from the " +
                    lower(to_string(e.approach)) + ".");
  }
  return lines;
}

Prompt render_prompt(const Observation& obs, const std::optional<std::string>& incident,
                     std::span<const AgentMessage> inbox) {
  Prompt p;
  p.system_line = kSystemLine;
  p.task_description = kTaskDescription;
  p.format_instruction = kFormatInstruction;

  std::ostringstream os;
  for (PhaseId phase : kPhases) {
    const PhaseBlock& b = obs.block(phase);
    const auto moves = phase_movements(phase);
    const Approach a0 = moves[0].approach;
    const Approach a1 = moves[1].approach;
    os << "Signal: " << to_string(phase) << "\n";
    os << "Allowed lanes: " << allowed_lanes(phase) << "\n";
    count_line(os, "Early queued", b.upstream[0].early_queued, b.upstream[1].early_queued, a0, a1);
    for (std::size_t s = 0; s < LaneCounts::kSegments; ++s)
      count_line(os, "Segment " + std::to_string(s + 1), b.upstream[0].segments[s],
                 b.upstream[1].segments[s], a0, a1);
    os << "\n";
  }
  p.observation_block = os.str();

  std::vector<std::string> incident_lines;
  if (incident && !incident->empty()) incident_lines.push_back(*incident);
  for (auto& line : emergency_advisories(obs)) incident_lines.push_back(std::move(line));
  if (!incident_lines.empty()) {
    std::string block;
    for (const auto& l : incident_lines) block += l + "\n";
    p.incident_block = std::move(block);
  }

  if (!inbox.empty()) {
    std::string block;
    for (const auto& m : inbox)
      block += "Report from the nearby intersection to the " +
               lower(to_string(side_of(obs.intersection, m.sender))) + ": " + m.body + "\n";
    p.messages_block = std::move(block);
  }
  return p;
}

// ---------------------------------------------------------------------------

namespace {

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace

ParsedResponse parse_response(std::string_view text) {
  ParsedResponse out;
  constexpr std::string_view kOpen = "<think>";
  constexpr std::string_view kClose = "</think>";
  constexpr std::string_view kBoxed = "\\boxed{";

  const auto open = text.find(kOpen);
  std::size_t think_end = std::string_view::npos;
  if (open != std::string_view::npos) {
    const auto close = text.find(kClose, open + kOpen.size());
    if (close != std::string_view::npos) {
      out.reasoning = std::string(text.substr(open + kOpen.size(), close - open - kOpen.size()));
      think_end = close + kClose.size();
    }
  }

  const auto boxed = text.find(kBoxed);
  if (boxed != std::string_view::npos) {
    const auto start = boxed + kBoxed.size();
    const auto end = text.find('}', start);
    if (end != std::string_view::npos) out.action = parse_phase(trim(text.substr(start, end - start)));
  }

  const auto msg_open = text.find("<message>");
  if (msg_open != std::string_view::npos) {
    const auto start = msg_open + 9;
    const auto end = text.find("</message>", start);
    if (end != std::string_view::npos) {
      auto body = trim(text.substr(start, end - start));
      if (!body.empty()) out.message = std::string(body.substr(0, kMaxMessageLength));
    }
  }

  out.format_ok = out.action.has_value() && think_end != std::string_view::npos &&
                  count_occurrences(text, kOpen) == 1 && count_occurrences(text, kClose) == 1 &&
                  count_occurrences(text, kBoxed) == 1 && boxed >= think_end;
  return out;
}

std::string format_answer(PhaseId phase, std::string_view reasoning) {
  return "<think>" + std::string(reasoning) + "</think> \\boxed{" + std::string(to_string(phase)) +
         "}";
}

// ---------------------------------------------------------------------------

InboxSummary empty_inbox_summary() {
  InboxSummary s{};
  s[0] = 1.0;
  return s;
}

InboxSummary summarize_inbox(std::span<const AgentMessage> inbox, IntersectionId self) {
  InboxSummary s = empty_inbox_summary();
  for (const auto& m : inbox) {
    const Approach from_side = side_of(self, m.sender);
    // Traffic reported by a neighbor on side X reaches us when it heads away from X.
    const std::string body = lower(m.body);
    if (body.find("heavy") == std::string::npos) continue;
    if (body.find(heading_word(opposite(from_side))) != std::string::npos)
      s[1 + index(from_side)] += 1.0;
  }
  return s;
}

std::vector<double> featurize(const Observation& obs, const InboxSummary& inbox, double capacity) {
  std::vector<double> x;
  x.reserve(kFeatureDim);
  const double inv = capacity > 0 ? 1.0 / capacity : 1.0;
  auto push_lane = [&](const LaneCounts& lane) {
    const std::array<int, 4> counts{lane.early_queued, lane.segments[0], lane.segments[1],
                                    lane.segments[2]};
    for (int c : counts) x.push_back(static_cast<double>(c));
    for (int c : counts) x.push_back(static_cast<double>(c) * inv);
  };
  for (const auto& b : obs.phases) {
    push_lane(b.upstream[0]);
    push_lane(b.upstream[1]);
    push_lane(b.downstream[0]);
    push_lane(b.downstream[1]);
  }
  x.insert(x.end(), inbox.begin(), inbox.end());
  return x;
}

// ---------------------------------------------------------------------------

ParametricPolicy::ParametricPolicy(std::size_t feature_dim)
    : dim_(feature_dim), weights_(kActions * feature_dim, 0.0) {
  if (feature_dim == 0) throw InvalidArgument("policy feature dimension must be positive");
}

std::span<const double> ParametricPolicy::row(std::size_t a) const {
  return std::span<const double>(weights_).subspan(a * dim_, dim_);
}

std::array<double, ParametricPolicy::kActions> ParametricPolicy::logits(
    std::span<const double> features) const {
  if (features.size() != dim_)
    throw InvalidArgument("feature vector has dimension " + std::to_string(features.size()) +
                          ", policy expects " + std::to_string(dim_));
  std::array<double, kActions> z{};
  for (std::size_t a = 0; a < kActions; ++a) {
    const double* w = weights_.data() + a * dim_;
    double acc = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) acc += w[i] * features[i];
    z[a] = acc;
  }
  return z;
}

std::array<double, ParametricPolicy::kActions> ParametricPolicy::log_probabilities(
    std::span<const double> features) const {
  auto z = logits(features);
  const double m = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double v : z) sum += std::exp(v - m);
  const double lse = m + std::log(sum);
  for (double& v : z) v -= lse;
  return z;
}

std::array<double, ParametricPolicy::kActions> ParametricPolicy::probabilities(
    std::span<const double> features) const {
  auto lp = log_probabilities(features);
  for (double& v : lp) v = std::exp(v);
  return lp;
}

PhaseId ParametricPolicy::greedy(std::span<const double> features) const {
  const auto z = logits(features);
  return kPhases[static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin())];
}

PhaseId ParametricPolicy::sample(std::span<const double> features, Rng& rng) const {
  const auto p = probabilities(features);
  return kPhases[rng.categorical(p)];
}

LogProbGrad log_prob_and_grad(const ParametricPolicy& policy, std::span<const double> features,
                              PhaseId action) {
  const auto lp = policy.log_probabilities(features);
  const std::size_t dim = policy.feature_dim();
  LogProbGrad out;
  out.log_prob = lp[index(action)];
  out.gradient.assign(policy.parameter_count(), 0.0);
  for (std::size_t a = 0; a < ParametricPolicy::kActions; ++a) {
    const double coeff = (a == index(action) ? 1.0 : 0.0) - std::exp(lp[a]);
    double* g = out.gradient.data() + a * dim;
    for (std::size_t i = 0; i < dim; ++i) g[i] = coeff * features[i];
  }
  return out;
}

std::string policy_to_text(const ParametricPolicy& policy) {
  std::string out = "tsc-parametric-policy 1\n";
  out += "dimension " + std::to_string(policy.feature_dim()) + "\n";
  out += "phases";
  for (PhaseId p : kPhases) out += " " + std::string(to_string(p));
  out += "\n";
  for (std::size_t a = 0; a < ParametricPolicy::kActions; ++a) {
    out += to_string(kPhases[a]);
    for (double w : policy.row(a)) out += " " + detail::format_double(w);
    out += "\n";
  }
  return out;
}

ParametricPolicy policy_from_text(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  auto next_line = [&]() -> std::istringstream {
    if (!std::getline(in, line)) throw ParseError("policy: unexpected end of document", lineno + 1);
    ++lineno;
    return std::istringstream(line);
  };

  {
    auto ls = next_line();
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != "tsc-parametric-policy" || version != 1)
      throw ParseError("policy: bad header", lineno);
  }
  std::size_t dim = 0;
  {
    auto ls = next_line();
    std::string key;
    ls >> key >> dim;
    if (key != "dimension" || dim == 0) throw ParseError("policy: bad dimension line", lineno);
  }
  {
    auto ls = next_line();
    std::string key;
    ls >> key;
    if (key != "phases") throw ParseError("policy: missing phase order", lineno);
    for (PhaseId p : kPhases) {
      std::string tok;
      ls >> tok;
      if (tok != to_string(p)) throw ParseError("policy: unsupported phase order", lineno);
    }
  }
  ParametricPolicy policy(dim);
  auto w = policy.weights();
  for (std::size_t a = 0; a < ParametricPolicy::kActions; ++a) {
    auto ls = next_line();
    std::string tag;
    ls >> tag;
    if (tag != to_string(kPhases[a])) throw ParseError("policy: rows out of order", lineno);
    for (std::size_t i = 0; i < dim; ++i) {
      std::string tok;
      if (!(ls >> tok)) throw ParseError("policy: row too short", lineno);
      double v = 0;
      const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v))
        throw ParseError("policy: bad number '" + tok + "'", lineno);
      w[a * dim + i] = v;
    }
    std::string extra;
    if (ls >> extra) throw ParseError("policy: row too long", lineno);
  }
  return policy;
}

// ---------------------------------------------------------------------------

std::vector<Decision> Agent::decide_batch(std::span<const DecisionContext> ctxs) {
  std::vector<Decision> out;
  out.reserve(ctxs.size());
  for (const auto& c : ctxs) out.push_back(decide(c));
  return out;
}

FixedTimeAgent::FixedTimeAgent(FixedTimePlan plan) : plan_(plan) { plan_.validate(); }

Decision FixedTimeAgent::decide(const DecisionContext& ctx) {
  Decision d;
  d.phase = fixed_time_next(plan_, ctx.signal);
  d.green_s = plan_.green_s[index(d.phase)];
  return d;
}

Decision MaxPressureAgent::decide(const DecisionContext& ctx) {
  return Decision{max_pressure_next(ctx.observation), std::nullopt, 0.0, 0};
}

Decision RandomAgent::decide(const DecisionContext&) {
  return Decision{random_next(rng_), std::nullopt, std::log(0.25), 0};
}

std::optional<std::string> congestion_report(const Observation& obs, const MessageRule& rule) {
  if (!rule.enabled) return std::nullopt;
  std::array<int, 4> per_approach{};
  for (const auto& b : obs.phases) {
    const auto moves = phase_movements(b.phase);
    for (std::size_t k = 0; k < 2; ++k) per_approach[index(moves[k].approach)] += b.upstream[k].early_queued;
  }
  for (Approach a : kApproaches) per_approach[index(a)] += obs.right_turn[index(a)].early_queued;
  const auto it = std::max_element(per_approach.begin(), per_approach.end());
  if (*it <= rule.heavy_threshold) return std::nullopt;
  return heavy_traffic_message(kApproaches[static_cast<std::size_t>(it - per_approach.begin())]);
}

Decision policy_decide(const ParametricPolicy& policy, const Observation& obs,
                       std::span<const AgentMessage> inbox, Rng* rng, const MessageRule& rule) {
  const auto x = featurize(obs, summarize_inbox(inbox, obs.intersection));
  Decision d;
  d.phase = rng ? policy.sample(x, *rng) : policy.greedy(x);
  d.log_prob = policy.log_probabilities(x)[index(d.phase)];
  d.message = congestion_report(obs, rule);
  return d;
}

ParametricAgent::ParametricAgent(const ParametricPolicy& policy, std::uint64_t seed, Mode mode,
                                 MessageRule rule)
    : policy_(&policy), rng_(seed, 91), mode_(mode), rule_(rule) {}

Decision ParametricAgent::decide(const DecisionContext& ctx) {
  auto x = featurize(ctx.observation, summarize_inbox(ctx.inbox, ctx.intersection));
  Decision d;
  d.phase = mode_ == Mode::Sample ? policy_->sample(x, rng_) : policy_->greedy(x);
  d.log_prob = policy_->log_probabilities(x)[index(d.phase)];
  d.message = congestion_report(ctx.observation, rule_);
  if (recording_) steps_.push_back({std::move(x), d.phase, d.log_prob});
  return d;
}

// ---------------------------------------------------------------------------

Decision TextAgent::decide(const DecisionContext& ctx) {
  return decide_batch(std::span<const DecisionContext>(&ctx, 1)).front();
}

std::vector<Decision> TextAgent::decide_batch(std::span<const DecisionContext> ctxs) {
  std::vector<std::string> prompts;
  prompts.reserve(ctxs.size());
  for (const auto& c : ctxs) prompts.push_back(render_prompt(c.observation, c.incident, c.inbox).text());
  const auto answers = model_->complete(prompts);

  std::vector<Decision> out;
  out.reserve(ctxs.size());
  for (std::size_t i = 0; i < ctxs.size(); ++i) {
    const auto& c = ctxs[i];
    Decision d;
    std::optional<std::string> failure;
    if (i >= answers.size() || !answers[i]) {
      failure = "no response";
    } else {
      ParsedResponse parsed = parse_response(*answers[i]);
      if (parsed.action) {
        d.phase = *parsed.action;
        d.message = parsed.message;
      } else {
        failure = "unparseable response";
      }
      responses_.push_back(std::move(parsed));
    }
    if (failure) {
      d.phase = max_pressure_next(c.observation);
      events_.push_back({c.time, c.intersection, *failure});
    }
    out.push_back(std::move(d));
  }
  return out;
}

std::string protocol_event_to_json(const ProtocolEvent& e) {
  return detail::json{{"time", e.time},
                      {"intersection", detail::id_to_json(e.intersection)},
                      {"event", "protocol_error"},
                      {"reason", e.reason},
                      {"fallback", "maxpressure"}}
      .dump();
}

}  // namespace tsc
