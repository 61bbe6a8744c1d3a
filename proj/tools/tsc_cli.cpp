// Command-line front end. Exit codes: 0 success, 2 usage error, 1 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "tsc/bench.hpp"
#include "tsc/error.hpp"

namespace {

using namespace tsc;

// Flags shared by commands that take an experiment config.
struct Overrides {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::optional<int> horizon_s;
  std::optional<std::string> output_dir;
  std::optional<double> rate_vph;
  std::optional<double> emergency_fraction;
  std::optional<std::string> controller;
  std::optional<std::string> policy;
  bool sample = false;
  bool no_expert_stage = false;
  bool no_openworld_stage = false;
  bool no_communication = false;
  std::optional<int> offline_iterations;
  std::optional<int> online_iterations;
  std::optional<int> k;
  std::optional<double> beta;
  std::optional<int> refresh;
  std::optional<std::uint64_t> train_seed;

  void attach(CLI::App* cmd, bool training) {
    cmd->add_option("--config", config_path, "Experiment config (JSON)");
    cmd->add_option("--seeds", seeds, "Seed list")->delimiter(',');
    cmd->add_option("--horizon", horizon_s, "Episode horizon in seconds");
    cmd->add_option("--output-dir", output_dir, "Directory for outputs");
    cmd->add_option("--rate", rate_vph, "Total arrival rate (vehicles/hour)");
    cmd->add_option("--emergency-fraction", emergency_fraction, "Fraction of emergency vehicles");
    cmd->add_option("--controller", controller, "fixedtime|maxpressure|random|policy|rule");
    cmd->add_option("--policy", policy, "Policy weights file (implies --controller policy)");
    cmd->add_flag("--sample", sample, "Sample from the policy instead of acting greedily");
    cmd->add_flag("--no-communication", no_communication, "Disable half-step messaging");
    if (training) {
      cmd->add_flag("--no-expert-stage", no_expert_stage, "Skip the offline stage");
      cmd->add_flag("--no-openworld-stage", no_openworld_stage, "Skip the online stage");
      cmd->add_option("--offline-iterations", offline_iterations);
      cmd->add_option("--online-iterations", online_iterations);
      cmd->add_option("--k", k, "Group size");
      cmd->add_option("--beta", beta, "KL coefficient");
      cmd->add_option("--refresh", refresh, "Reference refresh period (0 = never)");
      cmd->add_option("--train-seed", train_seed);
    }
  }

  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
    if (!seeds.empty()) cfg.seeds = seeds;
    if (horizon_s) cfg.horizon_s = *horizon_s;
    if (output_dir) cfg.output_dir = *output_dir;
    if (rate_vph) cfg.flow.total_rate_vph = *rate_vph;
    if (emergency_fraction) cfg.flow.emergency_fraction = *emergency_fraction;
    if (controller) cfg.controller.type = *controller;
    if (policy) {
      cfg.controller.type = "policy";
      cfg.controller.policy_path = *policy;
    }
    if (sample) cfg.controller.greedy = false;
    cfg.ablation.no_expert_stage |= no_expert_stage;
    cfg.ablation.no_openworld_stage |= no_openworld_stage;
    cfg.ablation.no_communication |= no_communication;
    if (offline_iterations) cfg.train.offline.iterations = *offline_iterations;
    if (online_iterations) cfg.train.online.iterations = *online_iterations;
    if (k) cfg.train.offline.k = cfg.train.online.k = *k;
    if (beta) cfg.train.offline.beta = cfg.train.online.beta = *beta;
    if (refresh) cfg.train.offline.ref_refresh_period = cfg.train.online.ref_refresh_period = *refresh;
    if (train_seed) cfg.train.offline.seed = cfg.train.online.seed = *train_seed;
    cfg.validate();
    return cfg;
  }
};

void print_metrics(const SimRunResult& r) {
  for (const auto& run : r.runs)
    std::cout << "seed " << run.seed << ": ATT " << run.metrics.att << " AWT " << run.metrics.awt
              << " avg_queue " << run.metrics.avg_queue << "\n";
  std::cout << "mean: ATT " << r.mean.att << " AWT " << r.mean.awt << " AETT " << r.mean.aett
            << " AEWT " << r.mean.aewt << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Traffic signal control toolkit"};
  app.require_subcommand(1);

  // net gen
  auto* net = app.add_subcommand("net", "Road networks");
  net->require_subcommand(1);
  auto* net_gen = net->add_subcommand("gen", "Write a grid network description");
  int rows = 4, cols = 4, segments = GridNetwork::kDefaultSegments;
  double link_length = 300.0;
  std::string net_out;
  net_gen->add_option("--rows", rows);
  net_gen->add_option("--cols", cols);
  net_gen->add_option("--link-length", link_length, "Meters");
  net_gen->add_option("--segments", segments);
  net_gen->add_option("--out", net_out, "Output file (stdout when omitted)");

  // flow gen
  auto* flow = app.add_subcommand("flow", "Traffic flows");
  flow->require_subcommand(1);
  auto* flow_gen = flow->add_subcommand("gen", "Write a flow spec and optionally its arrival schedule");
  FlowSpec flow_spec;
  std::vector<double> turns;
  std::string flow_out, schedule_out, flow_network;
  int flow_horizon = 3600;
  flow_gen->add_option("--rate", flow_spec.total_rate_vph, "Vehicles per hour");
  flow_gen->add_option("--seed", flow_spec.seed);
  flow_gen->add_option("--turns", turns, "through,left,right probabilities")->delimiter(',')->expected(3);
  flow_gen->add_option("--emergency-fraction", flow_spec.emergency_fraction);
  flow_gen->add_option("--out", flow_out, "Flow spec file (stdout when omitted)");
  flow_gen->add_option("--schedule", schedule_out, "Also write the arrival schedule (JSONL)");
  flow_gen->add_option("--network", flow_network, "Network file for the schedule (default 4x4/300 m)");
  flow_gen->add_option("--horizon", flow_horizon, "Schedule horizon in seconds");

  // sim run
  auto* sim = app.add_subcommand("sim", "Simulation");
  sim->require_subcommand(1);
  auto* sim_run = sim->add_subcommand("run", "Run a controller over every seed");
  Overrides sim_o;
  sim_o.attach(sim_run, false);

  // train offline | online | pipeline
  auto* train = app.add_subcommand("train", "Policy training");
  train->require_subcommand(1);
  auto* train_off = train->add_subcommand("offline", "Offline stage on an expert dataset");
  Overrides off_o;
  off_o.attach(train_off, true);
  std::string dataset_path, policy_out = "policy.txt", history_out = "history.jsonl";
  std::optional<std::string> init_policy;
  train_off->add_option("--dataset", dataset_path, "Expert dataset (JSONL)")->required();
  train_off->add_option("--init-policy", init_policy);
  train_off->add_option("--policy-out", policy_out);
  train_off->add_option("--history-out", history_out);

  auto* train_on = train->add_subcommand("online", "Online stage on simulated episodes");
  Overrides on_o;
  on_o.attach(train_on, true);
  std::optional<std::string> on_init;
  std::string on_policy_out = "policy.txt", on_history_out = "online_history.jsonl";
  train_on->add_option("--init-policy", on_init, "Start from this policy (default: zero weights)");
  train_on->add_option("--policy-out", on_policy_out);
  train_on->add_option("--history-out", on_history_out);

  auto* train_pipe = train->add_subcommand("pipeline", "Dataset, offline, online and evaluation");
  Overrides pipe_o;
  pipe_o.attach(train_pipe, true);

  // eval incidents
  auto* eval = app.add_subcommand("eval", "Evaluation");
  eval->require_subcommand(1);
  auto* eval_inc = eval->add_subcommand("incidents", "Incident accuracy and emergency metrics");
  Overrides inc_o;
  inc_o.attach(eval_inc, false);
  std::optional<std::string> fixtures;
  std::optional<int> synthetic;
  std::string inc_out;
  eval_inc->add_option("--fixtures", fixtures, "Incident fixtures (JSONL)");
  eval_inc->add_option("--synthetic", synthetic, "Add this many generated incidents");
  eval_inc->add_option("--out", inc_out, "CSV output (stdout when omitted)");

  // bench compare
  auto* bench = app.add_subcommand("bench", "Benchmarks");
  bench->require_subcommand(1);
  auto* compare = bench->add_subcommand("compare", "Compare methods on paired seeds");
  std::vector<std::string> configs;
  std::string compare_out;
  compare->add_option("--config", configs, "Experiment configs, one per method")->required();
  compare->add_option("--out", compare_out, "CSV output (stdout when omitted)");

  // dataset gen
  auto* dataset = app.add_subcommand("dataset", "Expert datasets");
  dataset->require_subcommand(1);
  auto* dataset_gen = dataset->add_subcommand("gen", "Label exploratory rollout observations with MaxPressure");
  Overrides ds_o;
  ds_o.attach(dataset_gen, false);
  std::size_t ds_size = 500;
  std::string ds_out = "dataset.jsonl";
  dataset_gen->add_option("--size", ds_size);
  dataset_gen->add_option("--out", ds_out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  auto emit = [](const std::string& path, const std::string& text) {
    if (path.empty())
      std::cout << text;
    else
      write_text_file(path, text);
  };

  if (net_gen->parsed()) {
    emit(net_out, network_to_json(build_grid(rows, cols, link_length, segments)) + "\n");
  } else if (flow_gen->parsed()) {
    if (!turns.empty()) flow_spec.turn_probabilities = {turns[0], turns[1], turns[2]};
    flow_spec.validate();
    emit(flow_out, flow_to_json(flow_spec) + "\n");
    if (!schedule_out.empty()) {
      const GridNetwork network =
          flow_network.empty() ? build_grid(4, 4, 300.0) : network_from_json(read_text_file(flow_network));
      write_text_file(schedule_out, schedule_to_jsonl(spawn_flow(flow_spec, network, flow_horizon)));
    }
  } else if (sim_run->parsed()) {
    print_metrics(cmd_sim_run(sim_o.resolve()));
  } else if (train_off->parsed()) {
    const auto r = cmd_train_offline(off_o.resolve(), dataset_path, init_policy, policy_out, history_out);
    if (!r.history.empty())
      std::cout << "final accuracy " << r.history.back().accuracy.value_or(0.0) << "\n";
  } else if (train_on->parsed()) {
    const auto r = cmd_train_online(on_o.resolve(), on_init, on_policy_out, on_history_out);
    if (!r.history.empty()) std::cout << "final mean reward " << r.history.back().mean_reward << "\n";
  } else if (train_pipe->parsed()) {
    const auto r = run_pipeline(pipe_o.resolve());
    print_metrics(r.evaluation);
  } else if (eval_inc->parsed()) {
    ExperimentConfig cfg = inc_o.resolve();
    if (fixtures) cfg.incidents.fixtures = *fixtures;
    if (synthetic) cfg.incidents.synthetic = *synthetic;
    const auto report = cmd_eval_incidents(cfg);
    for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
    emit(inc_out, report.csv());
  } else if (compare->parsed()) {
    std::vector<ExperimentConfig> loaded;
    for (const auto& path : configs) loaded.push_back(load_config(path));
    emit(compare_out, cmd_bench_compare(loaded));
  } else if (dataset_gen->parsed()) {
    const auto samples = cmd_dataset_gen(ds_o.resolve(), ds_size, ds_out);
    std::cout << samples.size() << " samples written to " << ds_out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const tsc::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
