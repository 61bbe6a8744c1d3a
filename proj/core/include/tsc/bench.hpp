#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tsc/agentio.hpp"
#include "tsc/asynccomm.hpp"
#include "tsc/incidents.hpp"
#include "tsc/microsim.hpp"
#include "tsc/netmodel.hpp"
#include "tsc/rlopt.hpp"

namespace tsc {

struct ControllerSpec {
  /// fixedtime | maxpressure | random | policy | text | rule
  std::string type = "maxpressure";
  std::optional<std::string> policy_path;
  bool greedy = true;
  std::array<int, 4> green_s{15, 15, 15, 15};
  /// Serve approaching emergency vehicles first, deferring otherwise.
  bool emergency_aware = false;
  std::vector<std::string> wire_command;
  std::optional<std::string> wire_host;
  int wire_port = 0;
  int wire_timeout_ms = 10000;
};

struct AblationFlags {
  bool no_expert_stage = false;
  bool no_openworld_stage = false;
  bool no_communication = false;
};

struct TrainSection {
  TrainConfig offline;
  TrainConfig online;
  int dataset_size = 500;
  std::vector<std::uint64_t> dataset_seeds{101, 102, 103};
  int online_horizon_s = 3600;
  OnlineConfig online_options;
};

struct IncidentSection {
  std::optional<std::string> fixtures;  // nullopt: bundled fixtures
  int synthetic = 0;
  std::uint64_t seed = 1;
  double emergency_fraction = 0.05;
};

struct ExperimentConfig {
  std::string name;
  GridNetwork network = build_grid(4, 4, 300.0);
  FlowSpec flow;
  SimConfig sim;
  CommConfig comm;
  ControllerSpec controller;
  /// Methods for incident evaluation; empty means just `controller`.
  std::vector<ControllerSpec> methods;
  int horizon_s = 3600;
  std::vector<std::uint64_t> seeds{1};
  AblationFlags ablation;
  TrainSection train;
  IncidentSection incidents;
  std::string output_dir = "out";

  /// Throws UsageError naming the offending field.
  void validate() const;
  /// Communication settings after applying the ablation flags.
  CommConfig effective_comm() const;
};

/// Unknown fields and invalid values raise UsageError naming the field.
ExperimentConfig config_from_json(std::string_view text);
ExperimentConfig load_config(const std::string& path);
std::string config_to_json(const ExperimentConfig& cfg);

std::string read_text_file(const std::string& path);
/// Creates parent directories as needed.
void write_text_file(const std::string& path, const std::string& content);

/// Display label of a controller ("maxpressure", "policy:path", ...).
std::string method_label(const ControllerSpec& spec);

/// Builds a fresh agent for one episode. Throws IoError when a policy file
/// or wire endpoint is unavailable.
std::unique_ptr<Agent> make_agent(const ControllerSpec& spec, std::uint64_t seed);

struct SeedRun {
  std::uint64_t seed = 0;
  MetricsReport metrics;
  std::vector<DecisionEvent> events;
  std::vector<MessageLogEntry> messages;
  std::vector<ProtocolEvent> protocol;
};

struct SimRunResult {
  std::vector<SeedRun> runs;
  MetricsReport mean;
  MetricsReport stddev;
};

/// One episode per seed with the configured controller. Learned and text
/// controllers run under the half-step scheduler, baselines decide
/// independently.
SeedRun run_episode(const ExperimentConfig& cfg, const ControllerSpec& controller,
                    std::uint64_t seed);

/// Runs every seed and, when `write` is set, writes metrics.jsonl,
/// aggregate.json, events.jsonl, messages.jsonl and protocol.jsonl under
/// output_dir.
SimRunResult cmd_sim_run(const ExperimentConfig& cfg, bool write = true);

std::string seed_runs_metrics_jsonl(const std::vector<SeedRun>& runs);
std::string seed_runs_events_jsonl(const std::vector<SeedRun>& runs);
std::string seed_runs_messages_jsonl(const std::vector<SeedRun>& runs);
std::string aggregate_to_json(const SimRunResult& result);

/// Offline stage from a dataset file; writes the policy and history files.
TrainResult cmd_train_offline(const ExperimentConfig& cfg, const std::string& dataset_path,
                              const std::optional<std::string>& init_policy,
                              const std::string& policy_out, const std::string& history_out);

/// Online stage; starts from `init_policy` or a zero policy.
TrainResult cmd_train_online(const ExperimentConfig& cfg,
                             const std::optional<std::string>& init_policy,
                             const std::string& policy_out, const std::string& history_out);

struct PipelineResult {
  std::optional<TrainResult> offline;
  std::optional<TrainResult> online;
  ParametricPolicy policy;
  SimRunResult evaluation;
};

/// Dataset, offline stage, online stage and evaluation, honoring the
/// ablation flags. Files land in output_dir: dataset.jsonl,
/// offline_history.jsonl, online_history.jsonl, policy.txt plus the sim run
/// outputs of the evaluation.
PipelineResult run_pipeline(const ExperimentConfig& cfg);

/// Expert dataset labeled by MaxPressure, written as JSONL.
std::vector<ExpertSample> cmd_dataset_gen(const ExperimentConfig& cfg, std::size_t size,
                                          const std::string& out_path);

struct IncidentRow {
  std::string method;
  std::optional<double> eaa;
  double aett = 0.0;
  double aewt = 0.0;
};

struct IncidentReport {
  std::vector<IncidentRow> rows;
  std::vector<std::string> warnings;
  std::string csv() const;
};

IncidentReport cmd_eval_incidents(const ExperimentConfig& cfg);

/// One row per config, seeds paired; mismatched seed lists raise UsageError.
/// The trailing best_in column lists the metrics where the row is best.
std::string cmd_bench_compare(const std::vector<ExperimentConfig>& configs);

}  // namespace tsc
