#include "tsc/rlopt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "json_io.hpp"
#include "tsc/error.hpp"
#include "tsc/parallel.hpp"

namespace tsc {

using detail::json;

void TrainConfig::validate() const {
  if (k < 2) throw InvalidArgument("k must be >= 2 (group advantage needs two members)");
  if (!(epsilon > 0.0)) throw InvalidArgument("epsilon must be > 0");
  if (!(beta >= 0.0)) throw InvalidArgument("beta must be >= 0");
  if (!(w_acc >= 0.0) || !(w_fmt >= 0.0) || std::abs(w_acc + w_fmt - 1.0) > 1e-12)
    throw InvalidArgument("w_acc and w_fmt must be nonnegative and sum to 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be > 0");
  if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (ref_refresh_period < 0) throw InvalidArgument("ref_refresh_period must be >= 0");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
  if (inner_steps < 1) throw InvalidArgument("inner_steps must be >= 1");
  if (batch_size < 0) throw InvalidArgument("batch_size must be >= 0");
}

double offline_reward(const ParsedResponse& parsed, PhaseId expert, const TrainConfig& cfg) {
  const double acc = parsed.action && *parsed.action == expert ? 1.0 : 0.0;
  const double fmt = parsed.format_ok ? 1.0 : 0.0;
  return cfg.w_acc * acc + cfg.w_fmt * fmt;
}

std::vector<double> group_advantages(std::span<const double> rewards, bool normalize_std) {
  if (rewards.size() < 2) throw InvalidArgument("group_advantages needs at least 2 rewards");
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / rewards.size();
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < rewards.size(); ++i) a[i] = rewards[i] - mean;
  if (normalize_std) {
    double var = 0.0;
    for (double v : a) var += v * v;
    const double sd = std::sqrt(var / a.size());
    if (sd > 1e-12)
      for (double& v : a) v /= sd;
  }
  return a;
}

std::vector<double> stepwise_rewards(double r_traj, std::size_t steps) {
  if (steps == 0) throw InvalidArgument("stepwise_rewards needs T >= 1");
  return std::vector<double>(steps, r_traj / static_cast<double>(steps));
}

double trajectory_reward(const MetricsReport& report, const TrainConfig& cfg) {
  return -(report.avg_queue + cfg.lambda * report.awt);
}

double kl_divergence(std::span<const double, 4> log_p, std::span<const double, 4> log_q) {
  double kl = 0.0;
  for (std::size_t a = 0; a < 4; ++a) kl += std::exp(log_p[a]) * (log_p[a] - log_q[a]);
  return std::max(0.0, kl);
}

double clipped_term(double rho, double advantage, double epsilon) {
  const double clipped = std::clamp(rho, 1.0 - epsilon, 1.0 + epsilon);
  return std::min(rho * advantage, clipped * advantage);
}

namespace {

constexpr std::size_t kA = ParametricPolicy::kActions;

void check_finite(const std::array<double, kA>& v) {
  for (double x : v)
    if (!std::isfinite(x)) throw NumericalFailure("non-finite policy probability");
}

// Adds the derivative of `weight * [clipped term - beta KL]` at one context to
// `grad` (objective direction) and returns the pair (term, kl).
struct StepTerms {
  double term = 0.0;
  double kl = 0.0;
};

// Accumulates d/dθ of weight * (sum_j c_j * rho_j-term) for the given actions
// and advantages, plus -weight * beta * KL, at one context.
StepTerms accumulate_context(const ParametricPolicy& policy, const std::array<double, kA>& lr,
                             std::span<const double> x, std::span<const PhaseId> actions,
                             std::span<const double> advantages, double term_weight,
                             double kl_weight, const TrainConfig& cfg, std::vector<double>& grad) {
  const auto lp = policy.log_probabilities(x);
  check_finite(lp);
  std::array<double, kA> p{};
  for (std::size_t a = 0; a < kA; ++a) p[a] = std::exp(lp[a]);

  // Coefficients on each logit; grad row b = coeff[b] * x.
  std::array<double, kA> coeff{};
  StepTerms out;
  for (std::size_t j = 0; j < actions.size(); ++j) {
    const std::size_t a = index(actions[j]);
    const double A = advantages[j];
    const double rho = std::exp(lp[a] - lr[a]);
    const double unclipped = rho * A;
    const double term = clipped_term(rho, A, cfg.epsilon);
    out.term += term_weight * term;
    if (unclipped <= term) {
      // d(rho A)/dz_b = A rho (delta_ab - p_b)
      for (std::size_t b = 0; b < kA; ++b)
        coeff[b] += term_weight * A * rho * ((b == a ? 1.0 : 0.0) - p[b]);
    }
  }
  if (kl_weight != 0.0 && cfg.beta != 0.0) {
    double kl = 0.0;
    for (std::size_t b = 0; b < kA; ++b) kl += p[b] * (lp[b] - lr[b]);
    out.kl = kl;
    for (std::size_t b = 0; b < kA; ++b) coeff[b] -= kl_weight * cfg.beta * p[b] * (lp[b] - lr[b] - kl);
  } else {
    out.kl = kl_divergence(lp, lr);
  }
  const std::size_t dim = policy.feature_dim();
  for (std::size_t b = 0; b < kA; ++b) {
    if (coeff[b] == 0.0) continue;
    double* g = grad.data() + b * dim;
    for (std::size_t i = 0; i < dim; ++i) g[i] += coeff[b] * x[i];
  }
  return out;
}

void negate(std::vector<double>& g) {
  for (double& v : g) v = -v;
}

}  // namespace

ObjectiveValue grpo_objective(const ParametricPolicy& policy, const ParametricPolicy& reference,
                              const RolloutGroup& group, const TrainConfig& cfg) {
  if (group.actions.empty() || group.actions.size() != group.advantages.size())
    throw InvalidArgument("rollout group needs matching, nonempty actions and advantages");
  if (policy.feature_dim() != reference.feature_dim())
    throw InvalidArgument("policy and reference dimensions differ");
  ObjectiveValue v;
  v.gradient.assign(policy.parameter_count(), 0.0);
  const auto lr = reference.log_probabilities(group.features);
  check_finite(lr);
  const double w = 1.0 / static_cast<double>(group.actions.size());
  const auto t = accumulate_context(policy, lr, group.features, group.actions, group.advantages, w,
                                    1.0, cfg, v.gradient);
  v.surrogate = t.term;
  v.kl = t.kl;
  v.loss = -(t.term - cfg.beta * t.kl);
  negate(v.gradient);
  if (!std::isfinite(v.loss)) throw NumericalFailure("grpo objective is not finite");
  return v;
}

std::vector<double> stpo_advantages(std::span<const Trajectory> group) {
  if (group.empty()) throw InvalidArgument("empty trajectory group");
  std::vector<double> per_step(group.size());
  for (std::size_t j = 0; j < group.size(); ++j) {
    if (group[j].steps.empty()) throw InvalidArgument("trajectory with no steps");
    per_step[j] = group[j].r_traj / static_cast<double>(group[j].steps.size());
  }
  const double mean = std::accumulate(per_step.begin(), per_step.end(), 0.0) / group.size();
  for (double& v : per_step) v -= mean;
  return per_step;
}

ObjectiveValue stpo_objective(const ParametricPolicy& policy, const ParametricPolicy& reference,
                              std::span<const Trajectory> group, const TrainConfig& cfg) {
  const auto adv = stpo_advantages(group);
  ObjectiveValue v;
  v.gradient.assign(policy.parameter_count(), 0.0);
  const double k = static_cast<double>(group.size());
  double steps_total = 0.0;
  const std::size_t dim = policy.feature_dim();
  for (std::size_t j = 0; j < group.size(); ++j) {
    const double w = 1.0 / (k * static_cast<double>(group[j].steps.size()));
    for (const auto& s : group[j].steps) {
      if (cfg.stpo_mode == StpoMode::Literal) {
        const auto lg = log_prob_and_grad(policy, s.features, s.action);
        if (!std::isfinite(lg.log_prob)) throw NumericalFailure("non-finite log-probability");
        v.surrogate += w * lg.log_prob * adv[j];
        for (std::size_t i = 0; i < lg.gradient.size(); ++i) v.gradient[i] += w * adv[j] * lg.gradient[i];
        (void)dim;
        continue;
      }
      const auto lr = reference.log_probabilities(s.features);
      check_finite(lr);
      const PhaseId a[1] = {s.action};
      const double A[1] = {adv[j]};
      const auto t = accumulate_context(policy, lr, s.features, a, A, w, w, cfg, v.gradient);
      v.surrogate += t.term;
      v.kl += w * t.kl;
      steps_total += w;
    }
  }
  if (cfg.stpo_mode == StpoMode::Literal) {
    v.loss = -v.surrogate;
  } else {
    v.loss = -(v.surrogate - cfg.beta * v.kl);
    // Report KL as a per-step mean rather than the weighted sum.
    if (steps_total > 0) v.kl /= steps_total;
  }
  negate(v.gradient);
  if (!std::isfinite(v.loss)) throw NumericalFailure("stpo objective is not finite");
  return v;
}

// ---------------------------------------------------------------------------

Adam::Adam(std::size_t n, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> gradient) {
  if (params.size() != m_.size() || gradient.size() != m_.size())
    throw InvalidArgument("adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * gradient[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * gradient[i] * gradient[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

std::string history_to_jsonl(std::span<const HistoryRow> rows) {
  std::string out;
  for (const auto& r : rows) {
    json j{{"iter", r.iter}, {"mean_reward", r.mean_reward}, {"kl", r.kl}};
    j["accuracy"] = r.accuracy ? json(*r.accuracy) : json(nullptr);
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<HistoryRow> history_from_jsonl(std::string_view text) {
  std::vector<HistoryRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto j = detail::parse_json(line, "history", n);
    try {
      HistoryRow r;
      r.iter = j.at("iter").get<int>();
      r.mean_reward = j.at("mean_reward").get<double>();
      r.kl = j.at("kl").get<double>();
      if (j.contains("accuracy") && !j["accuracy"].is_null()) r.accuracy = j["accuracy"].get<double>();
      rows.push_back(r);
    } catch (const json::exception& e) {
      throw ParseError(std::string("history: ") + e.what(), n);
    }
  }
  return rows;
}

std::string dataset_to_jsonl(std::span<const ExpertSample> samples) {
  std::string out;
  for (const auto& s : samples) {
    json j;
    j["observation"] = detail::observation_to_json_value(s.observation);
    j["incident"] = s.incident ? json(*s.incident) : json(nullptr);
    j["expert_action"] = std::string(to_string(s.expert_action));
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<ExpertSample> dataset_from_jsonl(std::string_view text) {
  std::vector<ExpertSample> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = detail::parse_json(line, "dataset", n);
    try {
      if (!j.is_object()) throw ParseError("dataset: expected an object", n);
      for (const auto& [key, _] : j.items())
        if (key != "observation" && key != "incident" && key != "expert_action")
          throw ParseError("dataset: unknown field '" + key + "'", n);
      ExpertSample s;
      s.observation = detail::observation_from_json_value(j.at("observation"));
      if (j.contains("incident") && !j["incident"].is_null())
        s.incident = j["incident"].get<std::string>();
      s.expert_action = detail::phase_from_json(j.at("expert_action"));
      out.push_back(std::move(s));
    } catch (const ParseError& e) {
      if (e.line()) throw;
      throw ParseError(e.what(), n);
    } catch (const json::exception& e) {
      throw ParseError(std::string("dataset: ") + e.what(), n);
    }
  }
  return out;
}

namespace {

std::vector<std::vector<double>> featurize_all(std::span<const ExpertSample> samples) {
  std::vector<std::vector<double>> xs;
  xs.reserve(samples.size());
  for (const auto& s : samples) xs.push_back(featurize(s.observation, empty_inbox_summary()));
  return xs;
}

double agreement(const ParametricPolicy& policy, const std::vector<std::vector<double>>& xs,
                 std::span<const ExpertSample> samples) {
  if (samples.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (policy.greedy(xs[i]) == samples[i].expert_action) ++hits;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

void check_gradient(const std::vector<double>& g) {
  for (double v : g)
    if (!std::isfinite(v)) throw NumericalFailure("training diverged: non-finite gradient");
}

}  // namespace

double action_agreement(const ParametricPolicy& policy, std::span<const ExpertSample> samples) {
  return agreement(policy, featurize_all(samples), samples);
}

TrainResult grpo_train(std::span<const ExpertSample> dataset, ParametricPolicy policy,
                       const TrainConfig& cfg) {
  cfg.validate();
  if (dataset.empty()) throw InvalidArgument("grpo_train needs a nonempty dataset");
  const auto xs = featurize_all(dataset);
  for (const auto& x : xs)
    if (x.size() != policy.feature_dim())
      throw InvalidArgument("dataset features do not match the policy dimension");

  TrainResult result{policy, {}};
  ParametricPolicy& theta = result.policy;
  ParametricPolicy reference = theta;
  Adam adam(theta.parameter_count(), cfg.learning_rate);
  Rng rng(cfg.seed, 11);
  const std::size_t n = dataset.size();
  const std::size_t batch =
      cfg.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));

  for (int it = 0; it < cfg.iterations; ++it) {
    if (it > 0 && cfg.ref_refresh_period > 0 && it % cfg.ref_refresh_period == 0) reference = theta;

    std::vector<std::size_t> idx(batch);
    if (batch == n)
      std::iota(idx.begin(), idx.end(), std::size_t{0});
    else
      for (auto& i : idx) i = rng.below(n);

    std::vector<RolloutGroup> groups;
    groups.reserve(batch);
    double reward_sum = 0.0;
    for (std::size_t i : idx) {
      RolloutGroup g;
      g.features = xs[i];
      const auto probs = reference.probabilities(g.features);
      for (int j = 0; j < cfg.k; ++j) {
        const PhaseId a = kPhases[rng.categorical(probs)];
        // The parametric backend always emits a well-formed answer.
        ParsedResponse parsed{"", a, true, std::nullopt};
        g.actions.push_back(a);
        g.rewards.push_back(offline_reward(parsed, dataset[i].expert_action, cfg));
      }
      reward_sum += std::accumulate(g.rewards.begin(), g.rewards.end(), 0.0);
      g.advantages = group_advantages(g.rewards, cfg.normalize_std);
      groups.push_back(std::move(g));
    }

    double kl = 0.0;
    for (int s = 0; s < cfg.inner_steps; ++s) {
      std::vector<double> grad(theta.parameter_count(), 0.0);
      double loss = 0.0;
      kl = 0.0;
      for (const auto& g : groups) {
        const auto v = grpo_objective(theta, reference, g, cfg);
        loss += v.loss;
        kl += v.kl;
        for (std::size_t p = 0; p < grad.size(); ++p) grad[p] += v.gradient[p];
      }
      const double inv = 1.0 / static_cast<double>(groups.size());
      for (double& v : grad) v *= inv;
      if (!std::isfinite(loss)) throw NumericalFailure("training diverged at iteration " + std::to_string(it));
      check_gradient(grad);
      adam.step(theta.weights(), grad);
      kl *= inv;
    }
    // KL after the final update of this wave.
    kl = 0.0;
    for (const auto& g : groups)
      kl += kl_divergence(theta.log_probabilities(g.features), reference.log_probabilities(g.features));
    kl /= static_cast<double>(groups.size());

    HistoryRow row;
    row.iter = it;
    row.mean_reward = reward_sum / static_cast<double>(batch * static_cast<std::size_t>(cfg.k));
    row.kl = kl;
    row.accuracy = agreement(theta, xs, dataset);
    result.history.push_back(row);
  }
  return result;
}

// ---------------------------------------------------------------------------

EpisodeResult run_policy_episode(const SimScenario& scenario, const ParametricPolicy& policy,
                                 std::uint64_t flow_seed, std::uint64_t policy_seed, bool greedy,
                                 const TrainConfig& cfg) {
  FlowSpec flow = scenario.flow;
  flow.seed = flow_seed;
  Simulator sim(scenario.network, scenario.sim, spawn_flow(flow, scenario.network, scenario.horizon_s));
  ParametricAgent agent(policy, policy_seed,
                        greedy ? ParametricAgent::Mode::Greedy : ParametricAgent::Mode::Sample);
  AsyncScheduler sched(sim, agent, scenario.comm);
  sched.run(scenario.horizon_s);
  EpisodeResult r;
  r.metrics = sim.metrics();
  r.trajectory.steps = agent.steps();
  r.trajectory.r_traj = trajectory_reward(r.metrics, cfg);
  r.messages = sched.message_log();
  r.events = sim.events();
  return r;
}

TrainResult online_train(const SimScenario& scenario, ParametricPolicy policy,
                         const TrainConfig& cfg, const OnlineConfig& online,
                         const std::function<void(const HistoryRow&)>& progress) {
  cfg.validate();
  if (policy.feature_dim() != kFeatureDim)
    throw InvalidArgument("online training needs a policy over the default feature layout");
  TrainResult result{policy, {}};
  ParametricPolicy& theta = result.policy;
  ParametricPolicy reference = theta;
  Adam adam(theta.parameter_count(), cfg.learning_rate);
  const auto k = static_cast<std::size_t>(cfg.k);

  for (int it = 0; it < cfg.iterations; ++it) {
    if (it > 0 && cfg.ref_refresh_period > 0 && it % cfg.ref_refresh_period == 0) reference = theta;

    std::vector<Trajectory> group(k);
    parallel_for(k, [&](std::size_t j) {
      const std::uint64_t flow_seed =
          online.common_random_numbers ? online.flow_seed_base + static_cast<std::uint64_t>(it)
                                       : online.flow_seed_base + static_cast<std::uint64_t>(it) * k + j;
      const std::uint64_t policy_seed = cfg.seed * 1000003ULL + static_cast<std::uint64_t>(it) * k + j;
      auto ep = run_policy_episode(scenario, reference, flow_seed, policy_seed, false, cfg);
      group[j] = std::move(ep.trajectory);
    });
    for (const auto& t : group)
      if (t.steps.empty()) throw InvalidArgument("episode produced no decisions; horizon too short");

    double kl = 0.0;
    for (int s = 0; s < cfg.inner_steps; ++s) {
      const auto v = stpo_objective(theta, reference, group, cfg);
      check_gradient(v.gradient);
      adam.step(theta.weights(), v.gradient);
    }
    {
      double total = 0.0;
      std::size_t count = 0;
      for (const auto& t : group)
        for (const auto& s : t.steps) {
          total += kl_divergence(theta.log_probabilities(s.features),
                                 reference.log_probabilities(s.features));
          ++count;
        }
      kl = count ? total / static_cast<double>(count) : 0.0;
    }

    HistoryRow row;
    row.iter = it;
    double sum = 0.0;
    for (const auto& t : group) sum += t.r_traj;
    row.mean_reward = sum / static_cast<double>(k);
    row.kl = kl;
    result.history.push_back(row);
    if (progress) progress(row);
  }
  return result;
}

// ---------------------------------------------------------------------------

namespace {

// Follows the oracle with probability 1 - explore and a uniform-random phase
// otherwise, labeling a subsample of the decision instants it sees.
class LabelingAgent : public Agent {
 public:
  LabelingAgent(Agent& oracle, std::uint64_t seed, double keep, double explore,
                std::vector<ExpertSample>& out, std::size_t cap)
      : oracle_(&oracle), rng_(seed, 5), keep_(keep), explore_(explore), out_(&out), cap_(cap) {}

  Decision decide(const DecisionContext& ctx) override {
    const PhaseId label = oracle_->decide(ctx).phase;
    if (out_->size() < cap_ && rng_.bernoulli(keep_)) out_->push_back({ctx.observation, ctx.incident, label});
    const PhaseId act = rng_.bernoulli(explore_) ? random_next(rng_) : label;
    return Decision{act, std::nullopt, 0.0, 0};
  }
  std::string name() const override { return "labeler"; }

 private:
  Agent* oracle_;
  Rng rng_;
  double keep_;
  double explore_;
  std::vector<ExpertSample>* out_;
  std::size_t cap_;
};

}  // namespace

std::vector<ExpertSample> generate_expert_dataset(const SimScenario& scenario,
                                                  std::span<const std::uint64_t> flow_seeds,
                                                  Agent& oracle, std::size_t size,
                                                  std::uint64_t sampling_seed, double explore) {
  if (!(explore >= 0.0 && explore <= 1.0)) throw InvalidArgument("explore must lie in [0, 1]");
  if (size == 0) throw InvalidArgument("dataset size must be >= 1");
  if (flow_seeds.empty()) throw InvalidArgument("at least one flow seed is required");
  std::vector<ExpertSample> out;
  out.reserve(size);
  constexpr double kKeep = 0.1;
  for (std::size_t round = 0; out.size() < size; ++round) {
    const std::uint64_t flow_seed = flow_seeds[round % flow_seeds.size()];
    FlowSpec flow = scenario.flow;
    flow.seed = flow_seed;
    Simulator sim(scenario.network, scenario.sim,
                  spawn_flow(flow, scenario.network, scenario.horizon_s));
    LabelingAgent labeler(oracle, sampling_seed * 7919 + round, kKeep, explore, out, size);
    run_independent(sim, labeler, scenario.horizon_s);
    if (round > 10000) throw InvalidArgument("dataset generation produced too few decisions");
  }
  return out;
}

std::string text_group_record(const std::string& prompt, std::span<const std::string> completions,
                              PhaseId expert, const TrainConfig& cfg) {
  std::vector<double> rewards;
  json items = json::array();
  for (const auto& c : completions) {
    const auto parsed = parse_response(c);
    rewards.push_back(offline_reward(parsed, expert, cfg));
    items.push_back({{"text", c},
                     {"action", parsed.action ? json(std::string(to_string(*parsed.action))) : json(nullptr)},
                     {"format_ok", parsed.format_ok}});
  }
  const auto adv = group_advantages(rewards, cfg.normalize_std);
  for (std::size_t i = 0; i < items.size(); ++i) {
    items[i]["reward"] = rewards[i];
    items[i]["advantage"] = adv[i];
  }
  return json{{"prompt", prompt}, {"expert_action", std::string(to_string(expert))}, {"completions", items}}
      .dump();
}

}  // namespace tsc
