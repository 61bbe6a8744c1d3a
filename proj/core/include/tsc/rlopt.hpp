#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsc/agentio.hpp"
#include "tsc/asynccomm.hpp"
#include "tsc/microsim.hpp"
#include "tsc/netmodel.hpp"

namespace tsc {

enum class StpoMode { Clipped, Literal };

struct TrainConfig {
  int k = 8;
  double epsilon = 0.2;
  double beta = 0.04;
  double w_acc = 0.9;
  double w_fmt = 0.1;
  double learning_rate = 0.05;
  int iterations = 200;
  /// Reference snapshot refreshed every this many iterations; 0 keeps the
  /// initial policy as reference for the whole run.
  int ref_refresh_period = 1;
  /// Weight of waiting time in the trajectory reward.
  double lambda = 0.1;
  /// Divide centered rewards by the group standard deviation.
  bool normalize_std = false;
  /// Optimizer steps per iteration on the same rollout wave.
  int inner_steps = 4;
  /// Scenarios per offline iteration; 0 uses the whole dataset.
  int batch_size = 0;
  StpoMode stpo_mode = StpoMode::Clipped;
  std::uint64_t seed = 1;

  /// Throws InvalidArgument naming the offending field.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Rewards and advantages

/// w_acc * [action == expert] + w_fmt * [format_ok].
double offline_reward(const ParsedResponse& parsed, PhaseId expert, const TrainConfig& cfg);

/// r - mean(r), optionally divided by the group standard deviation.
/// Throws InvalidArgument when fewer than two rewards are given.
std::vector<double> group_advantages(std::span<const double> rewards, bool normalize_std = false);

/// R_traj / T repeated T times. Throws InvalidArgument when T == 0.
std::vector<double> stepwise_rewards(double r_traj, std::size_t steps);

/// -(avg_queue + lambda * AWT).
double trajectory_reward(const MetricsReport& report, const TrainConfig& cfg);

/// KL(p || q) between two log-probability vectors over the four phases.
double kl_divergence(std::span<const double, 4> log_p, std::span<const double, 4> log_q);

// ---------------------------------------------------------------------------
// Objectives

struct RolloutGroup {
  std::vector<double> features;
  std::vector<PhaseId> actions;
  std::vector<double> rewards;
  std::vector<double> advantages;
};

struct ObjectiveValue {
  double loss = 0.0;        // negated objective
  double surrogate = 0.0;   // mean clipped term
  double kl = 0.0;          // mean KL to the reference
  std::vector<double> gradient;  // d loss / d weights
};

/// Clipped surrogate minus beta * KL for one group, negated, with its exact
/// gradient. Throws NumericalFailure on non-finite probabilities.
ObjectiveValue grpo_objective(const ParametricPolicy& policy, const ParametricPolicy& reference,
                              const RolloutGroup& group, const TrainConfig& cfg);

/// One clipped term min(rho A, clip(rho, 1-eps, 1+eps) A).
double clipped_term(double rho, double advantage, double epsilon);

struct Trajectory {
  std::vector<RecordedStep> steps;
  double r_traj = 0.0;
};

/// Advantages per trajectory: R_j / T_j minus the group mean of R_l / T_l.
std::vector<double> stpo_advantages(std::span<const Trajectory> group);

/// Stepwise objective over a group of trajectories sampled from `reference`.
/// Clipped mode applies the per-step clipped ratio and KL penalty; literal
/// mode is mean(log pi * A). Throws InvalidArgument on an empty group.
ObjectiveValue stpo_objective(const ParametricPolicy& policy, const ParametricPolicy& reference,
                              std::span<const Trajectory> group, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Training

class Adam {
 public:
  explicit Adam(std::size_t n, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);
  /// Descends on `gradient`.
  void step(std::span<double> params, std::span<const double> gradient);

 private:
  double lr_, beta1_, beta2_, eps_;
  std::vector<double> m_, v_;
  std::int64_t t_ = 0;
};

struct HistoryRow {
  int iter = 0;
  double mean_reward = 0.0;
  double kl = 0.0;
  std::optional<double> accuracy;
};

std::string history_to_jsonl(std::span<const HistoryRow> rows);
std::vector<HistoryRow> history_from_jsonl(std::string_view text);

struct ExpertSample {
  Observation observation;
  std::optional<std::string> incident;
  PhaseId expert_action = PhaseId::ETWT;
  friend bool operator==(const ExpertSample&, const ExpertSample&) = default;
};

std::string dataset_to_jsonl(std::span<const ExpertSample> samples);
/// Parse errors name the offending line.
std::vector<ExpertSample> dataset_from_jsonl(std::string_view text);

/// Fraction of samples whose greedy action equals the label.
double action_agreement(const ParametricPolicy& policy, std::span<const ExpertSample> samples);

struct TrainResult {
  ParametricPolicy policy;
  std::vector<HistoryRow> history;
};

/// Offline group-relative optimization against expert labels. Every
/// iteration samples k actions per scenario from the reference, scores and
/// centers them, then takes `inner_steps` Adam steps. Throws NumericalFailure
/// if the loss diverges.
TrainResult grpo_train(std::span<const ExpertSample> dataset, ParametricPolicy policy,
                       const TrainConfig& cfg);

struct SimScenario {
  GridNetwork network = build_grid(4, 4, 300.0);
  FlowSpec flow;
  SimConfig sim;
  CommConfig comm;
  int horizon_s = 3600;
};

struct EpisodeResult {
  MetricsReport metrics;
  Trajectory trajectory;
  std::vector<MessageLogEntry> messages;
  std::vector<DecisionEvent> events;
};

/// One episode under `policy` (sampled with `policy_seed`, or greedy) with
/// the asynchronous scheduler, using `flow_seed` for arrivals.
EpisodeResult run_policy_episode(const SimScenario& scenario, const ParametricPolicy& policy,
                                 std::uint64_t flow_seed, std::uint64_t policy_seed, bool greedy,
                                 const TrainConfig& cfg);

struct OnlineConfig {
  /// Group members share one arrival seed per iteration.
  bool common_random_numbers = true;
  std::uint64_t flow_seed_base = 1000;
};

/// Online stepwise optimization over simulated episodes. k < 2 is rejected.
TrainResult online_train(const SimScenario& scenario, ParametricPolicy policy,
                         const TrainConfig& cfg, const OnlineConfig& online = {},
                         const std::function<void(const HistoryRow&)>& progress = {});

/// Observations at decision instants of exploratory rollouts, labeled by
/// `oracle`. The rollout follows the oracle except that each decision is
/// uniformly random with probability `explore`. Seeds are used in turn until
/// `size` samples are collected.
std::vector<ExpertSample> generate_expert_dataset(const SimScenario& scenario,
                                                  std::span<const std::uint64_t> flow_seeds,
                                                  Agent& oracle, std::size_t size,
                                                  std::uint64_t sampling_seed = 7,
                                                  double explore = 0.3);

/// For text policies: score k completions against the expert label and emit
/// one JSON record with rewards and advantages, for external tuning.
std::string text_group_record(const std::string& prompt, std::span<const std::string> completions,
                              PhaseId expert, const TrainConfig& cfg);

}  // namespace tsc
