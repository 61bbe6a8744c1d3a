#include "tsc/bench.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json_io.hpp"
#include "tsc/error.hpp"
#include "tsc/parallel.hpp"
#include "tsc/wire.hpp"

namespace tsc {

using detail::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw UsageError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw UsageError(where + ": unknown field '" + key + "'");
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw UsageError(where + "." + key + ": wrong type");
  }
}

void read_train(const json& j, TrainConfig& cfg, const std::string& where) {
  read_field(j, "k", cfg.k, where);
  read_field(j, "epsilon", cfg.epsilon, where);
  read_field(j, "beta", cfg.beta, where);
  read_field(j, "w_acc", cfg.w_acc, where);
  read_field(j, "w_fmt", cfg.w_fmt, where);
  read_field(j, "ref_refresh_period", cfg.ref_refresh_period, where);
  read_field(j, "lambda", cfg.lambda, where);
  read_field(j, "normalize_std", cfg.normalize_std, where);
  read_field(j, "inner_steps", cfg.inner_steps, where);
  read_field(j, "seed", cfg.seed, where);
}

ControllerSpec controller_from_json(const json& j, const std::string& where) {
  check_keys(j, where, {"type", "policy_path", "greedy", "green_s", "emergency_aware",
                        "wire_command", "wire_host", "wire_port", "wire_timeout_ms"});
  ControllerSpec c;
  read_field(j, "type", c.type, where);
  if (j.contains("policy_path") && !j["policy_path"].is_null()) {
    std::string p;
    read_field(j, "policy_path", p, where);
    c.policy_path = p;
  }
  read_field(j, "greedy", c.greedy, where);
  read_field(j, "green_s", c.green_s, where);
  read_field(j, "emergency_aware", c.emergency_aware, where);
  read_field(j, "wire_command", c.wire_command, where);
  if (j.contains("wire_host") && !j["wire_host"].is_null()) {
    std::string h;
    read_field(j, "wire_host", h, where);
    c.wire_host = h;
  }
  read_field(j, "wire_port", c.wire_port, where);
  read_field(j, "wire_timeout_ms", c.wire_timeout_ms, where);
  return c;
}

json controller_to_json(const ControllerSpec& c) {
  json j{{"type", c.type}, {"greedy", c.greedy}, {"green_s", c.green_s},
         {"emergency_aware", c.emergency_aware}};
  j["policy_path"] = c.policy_path ? json(*c.policy_path) : json(nullptr);
  if (!c.wire_command.empty()) j["wire_command"] = c.wire_command;
  if (c.wire_host) {
    j["wire_host"] = *c.wire_host;
    j["wire_port"] = c.wire_port;
  }
  j["wire_timeout_ms"] = c.wire_timeout_ms;
  return j;
}

void validate_controller(const ControllerSpec& c, const std::string& where) {
  static const std::set<std::string> kTypes{"fixedtime", "maxpressure", "random", "policy", "text", "rule"};
  if (!kTypes.count(c.type)) throw UsageError(where + ".type: unknown controller '" + c.type + "'");
  if (c.type == "policy" && !c.policy_path) throw UsageError(where + ".policy_path: required for policy controllers");
  if (c.type == "text" && c.wire_command.empty() && !c.wire_host)
    throw UsageError(where + ".wire_command: text controllers need wire_command or wire_host");
  if (c.wire_timeout_ms <= 0) throw UsageError(where + ".wire_timeout_ms: must be positive");
  for (int g : c.green_s)
    if (g < 1) throw UsageError(where + ".green_s: must be positive");
}

}  // namespace

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw UsageError("seeds: at least one seed is required");
  if (horizon_s <= 0) throw UsageError("horizon_s: must be positive");
  try {
    flow.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  validate_controller(controller, "controller");
  for (std::size_t i = 0; i < methods.size(); ++i)
    validate_controller(methods[i], "methods[" + std::to_string(i) + "]");
  if (comm.offset_s < 0) throw UsageError("comm.offset_s: must be >= 0");
  if (!(comm.radius_m >= 0)) throw UsageError("comm.radius_m: must be >= 0");
  if (train.dataset_size < 1) throw UsageError("train.dataset_size: must be >= 1");
  if (train.dataset_seeds.empty()) throw UsageError("train.dataset_seeds: must be nonempty");
  if (train.online_horizon_s <= 0) throw UsageError("train.online_horizon_s: must be positive");
  try {
    train.offline.validate();
    train.online.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(std::string("train.") + e.what());
  }
  if (incidents.synthetic < 0) throw UsageError("incidents.synthetic: must be >= 0");
  if (!(incidents.emergency_fraction >= 0 && incidents.emergency_fraction <= 1))
    throw UsageError("incidents.emergency_fraction: must lie in [0, 1]");
}

CommConfig ExperimentConfig::effective_comm() const {
  CommConfig c = comm;
  if (ablation.no_communication) {
    c.offset_s = 0;
    c.messages_enabled = false;
  }
  return c;
}

ExperimentConfig config_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  check_keys(j, "config", {"name", "network", "flow", "sim", "comm", "controller", "methods",
                           "horizon_s", "seeds", "ablation", "train", "incidents", "output_dir"});
  ExperimentConfig cfg;
  read_field(j, "name", cfg.name, "config");
  if (j.contains("network")) {
    try {
      cfg.network = network_from_json(j["network"].dump());
    } catch (const std::exception& e) {
      throw UsageError(std::string("network: ") + e.what());
    }
  }
  if (j.contains("flow")) {
    try {
      cfg.flow = flow_from_json(j["flow"].dump());
    } catch (const std::exception& e) {
      throw UsageError(std::string("flow: ") + e.what());
    }
  }
  if (j.contains("sim")) {
    const auto& s = j["sim"];
    check_keys(s, "sim", {"always_transition", "green_s", "yellow_s", "all_red_s",
                          "emergency_advisory_segments"});
    read_field(s, "always_transition", cfg.sim.always_transition, "sim");
    read_field(s, "green_s", cfg.sim.green_s, "sim");
    read_field(s, "yellow_s", cfg.sim.yellow_s, "sim");
    read_field(s, "all_red_s", cfg.sim.all_red_s, "sim");
    read_field(s, "emergency_advisory_segments", cfg.sim.emergency_advisory_segments, "sim");
    if (cfg.sim.green_s < 1 || cfg.sim.yellow_s < 0 || cfg.sim.all_red_s < 0)
      throw UsageError("sim: stage durations must be nonnegative and green positive");
  }
  if (j.contains("comm")) {
    const auto& c = j["comm"];
    check_keys(c, "comm", {"offset_s", "messages_enabled", "radius_m"});
    read_field(c, "offset_s", cfg.comm.offset_s, "comm");
    read_field(c, "messages_enabled", cfg.comm.messages_enabled, "comm");
    read_field(c, "radius_m", cfg.comm.radius_m, "comm");
  }
  if (j.contains("controller")) cfg.controller = controller_from_json(j["controller"], "controller");
  if (j.contains("methods")) {
    if (!j["methods"].is_array()) throw UsageError("methods: expected a list");
    for (std::size_t i = 0; i < j["methods"].size(); ++i)
      cfg.methods.push_back(controller_from_json(j["methods"][i], "methods[" + std::to_string(i) + "]"));
  }
  read_field(j, "horizon_s", cfg.horizon_s, "config");
  read_field(j, "seeds", cfg.seeds, "config");
  if (j.contains("ablation")) {
    const auto& a = j["ablation"];
    check_keys(a, "ablation", {"no_expert_stage", "no_openworld_stage", "no_communication"});
    read_field(a, "no_expert_stage", cfg.ablation.no_expert_stage, "ablation");
    read_field(a, "no_openworld_stage", cfg.ablation.no_openworld_stage, "ablation");
    read_field(a, "no_communication", cfg.ablation.no_communication, "ablation");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, "train", {"k", "epsilon", "beta", "w_acc", "w_fmt", "ref_refresh_period", "lambda",
                            "normalize_std", "inner_steps", "seed", "offline_iterations",
                            "online_iterations", "offline_learning_rate", "online_learning_rate",
                            "offline_inner_steps", "online_inner_steps", "batch_size",
                            "stpo_mode", "dataset_size", "dataset_seeds", "online_horizon_s",
                            "common_random_numbers", "online_flow_seed_base"});
    read_train(t, cfg.train.offline, "train");
    read_train(t, cfg.train.online, "train");
    read_field(t, "offline_iterations", cfg.train.offline.iterations, "train");
    read_field(t, "online_iterations", cfg.train.online.iterations, "train");
    read_field(t, "offline_learning_rate", cfg.train.offline.learning_rate, "train");
    read_field(t, "online_learning_rate", cfg.train.online.learning_rate, "train");
    read_field(t, "offline_inner_steps", cfg.train.offline.inner_steps, "train");
    read_field(t, "online_inner_steps", cfg.train.online.inner_steps, "train");
    read_field(t, "batch_size", cfg.train.offline.batch_size, "train");
    if (t.contains("stpo_mode")) {
      std::string mode;
      read_field(t, "stpo_mode", mode, "train");
      if (mode == "clipped")
        cfg.train.online.stpo_mode = StpoMode::Clipped;
      else if (mode == "literal")
        cfg.train.online.stpo_mode = StpoMode::Literal;
      else
        throw UsageError("train.stpo_mode: expected 'clipped' or 'literal'");
    }
    read_field(t, "dataset_size", cfg.train.dataset_size, "train");
    read_field(t, "dataset_seeds", cfg.train.dataset_seeds, "train");
    read_field(t, "online_horizon_s", cfg.train.online_horizon_s, "train");
    read_field(t, "common_random_numbers", cfg.train.online_options.common_random_numbers, "train");
    read_field(t, "online_flow_seed_base", cfg.train.online_options.flow_seed_base, "train");
  }
  if (j.contains("incidents")) {
    const auto& i = j["incidents"];
    check_keys(i, "incidents", {"fixtures", "synthetic", "seed", "emergency_fraction"});
    if (i.contains("fixtures") && !i["fixtures"].is_null()) {
      std::string f;
      read_field(i, "fixtures", f, "incidents");
      cfg.incidents.fixtures = f;
    }
    read_field(i, "synthetic", cfg.incidents.synthetic, "incidents");
    read_field(i, "seed", cfg.incidents.seed, "incidents");
    read_field(i, "emergency_fraction", cfg.incidents.emergency_fraction, "incidents");
  }
  read_field(j, "output_dir", cfg.output_dir, "config");
  cfg.validate();
  return cfg;
}

std::string config_to_json(const ExperimentConfig& cfg) {
  json j;
  j["name"] = cfg.name;
  j["network"] = json::parse(network_to_json(cfg.network));
  j["flow"] = json::parse(flow_to_json(cfg.flow));
  j["sim"] = {{"always_transition", cfg.sim.always_transition},
              {"green_s", cfg.sim.green_s},
              {"yellow_s", cfg.sim.yellow_s},
              {"all_red_s", cfg.sim.all_red_s},
              {"emergency_advisory_segments", cfg.sim.emergency_advisory_segments}};
  j["comm"] = {{"offset_s", cfg.comm.offset_s},
               {"messages_enabled", cfg.comm.messages_enabled},
               {"radius_m", cfg.comm.radius_m}};
  j["controller"] = controller_to_json(cfg.controller);
  if (!cfg.methods.empty()) {
    j["methods"] = json::array();
    for (const auto& m : cfg.methods) j["methods"].push_back(controller_to_json(m));
  }
  j["horizon_s"] = cfg.horizon_s;
  j["seeds"] = cfg.seeds;
  j["ablation"] = {{"no_expert_stage", cfg.ablation.no_expert_stage},
                   {"no_openworld_stage", cfg.ablation.no_openworld_stage},
                   {"no_communication", cfg.ablation.no_communication}};
  const auto& off = cfg.train.offline;
  const auto& on = cfg.train.online;
  j["train"] = {{"k", off.k},
                {"epsilon", off.epsilon},
                {"beta", off.beta},
                {"w_acc", off.w_acc},
                {"w_fmt", off.w_fmt},
                {"ref_refresh_period", off.ref_refresh_period},
                {"lambda", on.lambda},
                {"normalize_std", off.normalize_std},
                {"seed", off.seed},
                {"offline_iterations", off.iterations},
                {"online_iterations", on.iterations},
                {"offline_learning_rate", off.learning_rate},
                {"online_learning_rate", on.learning_rate},
                {"offline_inner_steps", off.inner_steps},
                {"online_inner_steps", on.inner_steps},
                {"batch_size", off.batch_size},
                {"stpo_mode", on.stpo_mode == StpoMode::Clipped ? "clipped" : "literal"},
                {"dataset_size", cfg.train.dataset_size},
                {"dataset_seeds", cfg.train.dataset_seeds},
                {"online_horizon_s", cfg.train.online_horizon_s},
                {"common_random_numbers", cfg.train.online_options.common_random_numbers},
                {"online_flow_seed_base", cfg.train.online_options.flow_seed_base}};
  j["incidents"] = {{"synthetic", cfg.incidents.synthetic},
                    {"seed", cfg.incidents.seed},
                    {"emergency_fraction", cfg.incidents.emergency_fraction}};
  j["incidents"]["fixtures"] = cfg.incidents.fixtures ? json(*cfg.incidents.fixtures) : json(nullptr);
  j["output_dir"] = cfg.output_dir;
  return j.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << content;
  if (!out) throw IoError("write failed for '" + path + "'");
}

ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
  return config_from_json(text);
}

// ---------------------------------------------------------------------------

namespace {

// Owns the model behind a text agent.
class OwningTextAgent : public Agent {
 public:
  explicit OwningTextAgent(std::unique_ptr<TextModel> model)
      : model_(std::move(model)), agent_(*model_) {}
  Decision decide(const DecisionContext& ctx) override { return agent_.decide(ctx); }
  std::vector<Decision> decide_batch(std::span<const DecisionContext> ctxs) override {
    return agent_.decide_batch(ctxs);
  }
  bool reads_text() const override { return true; }
  std::string name() const override { return "text"; }
  const std::vector<ProtocolEvent>& protocol_events() const { return agent_.protocol_events(); }

 private:
  std::unique_ptr<TextModel> model_;
  TextAgent agent_;
};

// Owns the weights behind a parametric agent.
class OwningPolicyAgent : public Agent {
 public:
  OwningPolicyAgent(ParametricPolicy policy, std::uint64_t seed, bool greedy)
      : policy_(std::make_unique<ParametricPolicy>(std::move(policy))),
        agent_(*policy_, seed, greedy ? ParametricAgent::Mode::Greedy : ParametricAgent::Mode::Sample) {
    agent_.set_recording(false);
  }
  Decision decide(const DecisionContext& ctx) override { return agent_.decide(ctx); }
  std::string name() const override { return "policy"; }

 private:
  std::unique_ptr<ParametricPolicy> policy_;
  ParametricAgent agent_;
};

bool uses_scheduler(const ControllerSpec& c) {
  return c.type == "policy" || c.type == "text" || c.type == "rule";
}

ParametricPolicy load_policy(const std::string& path) { return policy_from_text(read_text_file(path)); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

std::string method_label(const ControllerSpec& spec) {
  std::string label = spec.type;
  if (spec.type == "policy" && spec.policy_path)
    label += ":" + std::filesystem::path(*spec.policy_path).stem().string();
  if (spec.emergency_aware) label += "+emergency";
  return label;
}

std::unique_ptr<Agent> make_agent(const ControllerSpec& spec, std::uint64_t seed) {
  std::unique_ptr<Agent> agent;
  if (spec.type == "fixedtime") {
    FixedTimePlan plan;
    plan.green_s = spec.green_s;
    agent = std::make_unique<FixedTimeAgent>(plan);
  } else if (spec.type == "maxpressure") {
    agent = std::make_unique<MaxPressureAgent>();
  } else if (spec.type == "random") {
    agent = std::make_unique<RandomAgent>(seed);
  } else if (spec.type == "policy") {
    agent = std::make_unique<OwningPolicyAgent>(load_policy(*spec.policy_path), seed, spec.greedy);
  } else if (spec.type == "rule") {
    agent = std::make_unique<OwningTextAgent>(std::make_unique<RuleTableTextModel>());
  } else if (spec.type == "text") {
    const std::chrono::milliseconds timeout(spec.wire_timeout_ms);
    std::unique_ptr<TextModel> model;
    if (spec.wire_host)
      model = WireTextModel::connect_tcp(*spec.wire_host, static_cast<std::uint16_t>(spec.wire_port), timeout);
    else
      model = WireTextModel::spawn(spec.wire_command, timeout);
    agent = std::make_unique<OwningTextAgent>(std::move(model));
  } else {
    throw UsageError("unknown controller '" + spec.type + "'");
  }
  if (spec.emergency_aware) agent = std::make_unique<EmergencyAwareAgent>(std::move(agent));
  return agent;
}

SeedRun run_episode(const ExperimentConfig& cfg, const ControllerSpec& controller,
                    std::uint64_t seed) {
  FlowSpec flow = cfg.flow;
  flow.seed = seed;
  Simulator sim(cfg.network, cfg.sim, spawn_flow(flow, cfg.network, cfg.horizon_s));
  auto agent = make_agent(controller, seed);
  SeedRun run;
  run.seed = seed;
  if (uses_scheduler(controller)) {
    AsyncScheduler sched(sim, *agent, cfg.effective_comm());
    sched.run(cfg.horizon_s);
    run.messages = sched.message_log();
  } else {
    run_independent(sim, *agent, cfg.horizon_s);
  }
  if (auto* text = dynamic_cast<OwningTextAgent*>(agent.get())) run.protocol = text->protocol_events();
  run.metrics = sim.metrics();
  run.events = sim.events();
  return run;
}

std::string seed_runs_metrics_jsonl(const std::vector<SeedRun>& runs) {
  std::string out;
  for (const auto& r : runs) {
    json j{{"seed", r.seed}, {"metrics", json::parse(metrics_to_json(r.metrics))}};
    out += j.dump() + "\n";
  }
  return out;
}

std::string seed_runs_events_jsonl(const std::vector<SeedRun>& runs) {
  std::string out;
  for (const auto& r : runs)
    for (const auto& e : r.events) {
      json j{{"seed", r.seed}};
      j.update(json::parse(decision_event_to_json(e)));
      out += j.dump() + "\n";
    }
  return out;
}

std::string seed_runs_messages_jsonl(const std::vector<SeedRun>& runs) {
  std::string out;
  for (const auto& r : runs)
    for (const auto& m : r.messages) {
      json j{{"seed", r.seed}};
      j.update(json::parse(message_log_to_json(m)));
      out += j.dump() + "\n";
    }
  return out;
}

namespace {

json stats_json(const std::vector<SeedRun>& runs, const MetricsReport& mean, const MetricsReport& sd) {
  (void)runs;
  return {{"mean", json::parse(metrics_to_json(mean))}, {"stddev", json::parse(metrics_to_json(sd))}};
}

void aggregate(SimRunResult& r) {
  const double n = static_cast<double>(r.runs.size());
  auto fields = [](const MetricsReport& m) {
    return std::array<double, 10>{m.att, m.awt, m.aett, m.aewt, m.avg_queue,
                                  static_cast<double>(m.max_queue),
                                  static_cast<double>(m.vehicles_entered),
                                  static_cast<double>(m.vehicles_exited),
                                  static_cast<double>(m.emergency_entered),
                                  static_cast<double>(m.emergency_exited)};
  };
  std::array<double, 10> mean{}, var{};
  for (const auto& run : r.runs) {
    const auto f = fields(run.metrics);
    for (std::size_t i = 0; i < f.size(); ++i) mean[i] += f[i] / n;
  }
  for (const auto& run : r.runs) {
    const auto f = fields(run.metrics);
    for (std::size_t i = 0; i < f.size(); ++i) var[i] += (f[i] - mean[i]) * (f[i] - mean[i]);
  }
  for (double& v : var) v = n > 1 ? std::sqrt(v / (n - 1)) : 0.0;
  auto to_report = [](const std::array<double, 10>& f) {
    MetricsReport m;
    m.att = f[0];
    m.awt = f[1];
    m.aett = f[2];
    m.aewt = f[3];
    m.avg_queue = f[4];
    m.max_queue = static_cast<int>(std::lround(f[5]));
    m.vehicles_entered = std::llround(f[6]);
    m.vehicles_exited = std::llround(f[7]);
    m.emergency_entered = std::llround(f[8]);
    m.emergency_exited = std::llround(f[9]);
    return m;
  };
  r.mean = to_report(mean);
  r.stddev = to_report(var);
}

void write_sim_outputs(const std::string& dir, const SimRunResult& result) {
  const std::filesystem::path d(dir);
  write_text_file((d / "metrics.jsonl").string(), seed_runs_metrics_jsonl(result.runs));
  write_text_file((d / "aggregate.json").string(), aggregate_to_json(result));
  write_text_file((d / "events.jsonl").string(), seed_runs_events_jsonl(result.runs));
  write_text_file((d / "messages.jsonl").string(), seed_runs_messages_jsonl(result.runs));
  std::string protocol;
  for (const auto& r : result.runs)
    for (const auto& e : r.protocol) {
      json j{{"seed", r.seed}};
      j.update(json::parse(protocol_event_to_json(e)));
      protocol += j.dump() + "\n";
    }
  write_text_file((d / "protocol.jsonl").string(), protocol);
}

SimRunResult run_seeds(const ExperimentConfig& cfg, const ControllerSpec& controller) {
  SimRunResult result;
  result.runs.resize(cfg.seeds.size());
  // Remote text models keep one connection per episode; run those serially.
  const unsigned workers = controller.type == "text" ? 1u : default_workers();
  parallel_for(
      cfg.seeds.size(), [&](std::size_t i) { result.runs[i] = run_episode(cfg, controller, cfg.seeds[i]); },
      workers);
  aggregate(result);
  return result;
}

}  // namespace

std::string aggregate_to_json(const SimRunResult& result) {
  json j = stats_json(result.runs, result.mean, result.stddev);
  j["seeds"] = json::array();
  for (const auto& r : result.runs) j["seeds"].push_back(r.seed);
  return j.dump(2) + "\n";
}

SimRunResult cmd_sim_run(const ExperimentConfig& cfg, bool write) {
  cfg.validate();
  auto result = run_seeds(cfg, cfg.controller);
  if (write) write_sim_outputs(cfg.output_dir, result);
  return result;
}

// ---------------------------------------------------------------------------

namespace {

SimScenario online_scenario(const ExperimentConfig& cfg) {
  SimScenario s;
  s.network = cfg.network;
  s.flow = cfg.flow;
  s.sim = cfg.sim;
  s.comm = cfg.effective_comm();
  s.horizon_s = cfg.train.online_horizon_s;
  return s;
}

}  // namespace

TrainResult cmd_train_offline(const ExperimentConfig& cfg, const std::string& dataset_path,
                              const std::optional<std::string>& init_policy,
                              const std::string& policy_out, const std::string& history_out) {
  const auto dataset = dataset_from_jsonl(read_text_file(dataset_path));
  if (dataset.empty()) throw IoError("dataset '" + dataset_path + "' has no samples");
  ParametricPolicy policy = init_policy ? load_policy(*init_policy) : ParametricPolicy(kFeatureDim);
  auto result = grpo_train(dataset, std::move(policy), cfg.train.offline);
  write_text_file(policy_out, policy_to_text(result.policy));
  write_text_file(history_out, history_to_jsonl(result.history));
  return result;
}

TrainResult cmd_train_online(const ExperimentConfig& cfg,
                             const std::optional<std::string>& init_policy,
                             const std::string& policy_out, const std::string& history_out) {
  ParametricPolicy policy = init_policy ? load_policy(*init_policy) : ParametricPolicy(kFeatureDim);
  auto result = online_train(online_scenario(cfg), std::move(policy), cfg.train.online,
                             cfg.train.online_options);
  write_text_file(policy_out, policy_to_text(result.policy));
  write_text_file(history_out, history_to_jsonl(result.history));
  return result;
}

std::vector<ExpertSample> cmd_dataset_gen(const ExperimentConfig& cfg, std::size_t size,
                                          const std::string& out_path) {
  SimScenario s = online_scenario(cfg);
  s.horizon_s = cfg.horizon_s;
  MaxPressureAgent oracle;
  auto samples = generate_expert_dataset(s, cfg.train.dataset_seeds, oracle, size, cfg.train.offline.seed);
  if (!out_path.empty()) write_text_file(out_path, dataset_to_jsonl(samples));
  return samples;
}

PipelineResult run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  const std::filesystem::path dir(cfg.output_dir);
  PipelineResult out{std::nullopt, std::nullopt, ParametricPolicy(kFeatureDim), {}};

  if (!cfg.ablation.no_expert_stage) {
    const auto dataset = cmd_dataset_gen(cfg, static_cast<std::size_t>(cfg.train.dataset_size),
                                         (dir / "dataset.jsonl").string());
    out.offline = grpo_train(dataset, out.policy, cfg.train.offline);
    out.policy = out.offline->policy;
    write_text_file((dir / "offline_history.jsonl").string(), history_to_jsonl(out.offline->history));
    write_text_file((dir / "policy_offline.txt").string(), policy_to_text(out.policy));
  }
  if (!cfg.ablation.no_openworld_stage) {
    out.online = online_train(online_scenario(cfg), out.policy, cfg.train.online, cfg.train.online_options);
    out.policy = out.online->policy;
    write_text_file((dir / "online_history.jsonl").string(), history_to_jsonl(out.online->history));
  }
  const std::string policy_path = (dir / "policy.txt").string();
  write_text_file(policy_path, policy_to_text(out.policy));

  ExperimentConfig eval = cfg;
  eval.controller = ControllerSpec{};
  eval.controller.type = "policy";
  eval.controller.policy_path = policy_path;
  eval.controller.greedy = cfg.controller.type == "policy" ? cfg.controller.greedy : true;
  out.evaluation = run_seeds(eval, eval.controller);
  write_sim_outputs(cfg.output_dir, out.evaluation);
  return out;
}

// ---------------------------------------------------------------------------

std::string IncidentReport::csv() const {
  std::string out = "method,EAA,AETT,AEWT\n";
  for (const auto& r : rows)
    out += r.method + "," + (r.eaa ? fmt(*r.eaa) : std::string("n/a")) + "," + fmt(r.aett) + "," +
           fmt(r.aewt) + "\n";
  return out;
}

IncidentReport cmd_eval_incidents(const ExperimentConfig& cfg) {
  cfg.validate();
  IncidentReport report;
  std::vector<Incident> incidents;
  if (cfg.incidents.fixtures)
    incidents = load_fixtures(*cfg.incidents.fixtures);
  else if (cfg.incidents.synthetic == 0)
    incidents = builtin_incidents();
  if (cfg.incidents.synthetic > 0) {
    auto syn = synthesize_incidents(static_cast<std::size_t>(cfg.incidents.synthetic), cfg.incidents.seed);
    incidents.insert(incidents.end(), syn.begin(), syn.end());
  }
  if (incidents.empty()) report.warnings.push_back("no incidents loaded; EAA column is n/a");

  SimScenario scenario;
  scenario.network = cfg.network;
  scenario.flow = emergency_flow(cfg.flow, cfg.flow.emergency_fraction > 0 ? cfg.flow.emergency_fraction
                                                                             : cfg.incidents.emergency_fraction);
  scenario.sim = cfg.sim;
  scenario.comm = cfg.effective_comm();
  scenario.horizon_s = cfg.horizon_s;

  const auto methods = cfg.methods.empty() ? std::vector<ControllerSpec>{cfg.controller} : cfg.methods;
  for (const auto& m : methods) {
    IncidentRow row;
    row.method = method_label(m);
    if (!incidents.empty()) {
      auto agent = make_agent(m, cfg.incidents.seed);
      row.eaa = eval_eaa(*agent, incidents, cfg.incidents.seed, cfg.network);
    }
    if (scenario.flow.emergency_fraction > 0) {
      const auto nw = eval_network_wide([&](std::uint64_t s) { return make_agent(m, s); }, scenario, cfg.seeds);
      row.aett = nw.aett;
      row.aewt = nw.aewt;
      for (const auto& w : nw.warnings) report.warnings.push_back(row.method + ": " + w);
    }
    report.rows.push_back(row);
  }
  return report;
}

std::string cmd_bench_compare(const std::vector<ExperimentConfig>& configs) {
  if (configs.size() < 2) throw UsageError("bench compare needs at least two configs");
  for (const auto& c : configs) {
    c.validate();
    if (c.seeds != configs.front().seeds)
      throw UsageError("seeds: config '" + c.name + "' does not use the same seed list as '" +
                       configs.front().name + "'");
  }
  bool emergency = false;
  for (const auto& c : configs) emergency = emergency || c.flow.emergency_fraction > 0;

  struct Row {
    std::string method;
    std::vector<double> values;
  };
  std::vector<std::string> columns{"ATT", "AWT", "avg_queue"};
  if (emergency) {
    columns.push_back("AETT");
    columns.push_back("AEWT");
  }
  std::vector<Row> rows;
  for (const auto& c : configs) {
    const auto r = run_seeds(c, c.controller);
    Row row{c.name.empty() ? method_label(c.controller) : c.name,
            {r.mean.att, r.mean.awt, r.mean.avg_queue}};
    if (emergency) {
      row.values.push_back(r.mean.aett);
      row.values.push_back(r.mean.aewt);
    }
    rows.push_back(std::move(row));
  }
  std::string out = "method";
  for (const auto& c : columns) out += "," + c;
  out += ",best_in\n";
  for (const auto& row : rows) {
    out += row.method;
    std::string best;
    for (std::size_t k = 0; k < columns.size(); ++k) {
      out += "," + fmt(row.values[k]);
      double lowest = row.values[k];
      for (const auto& other : rows) lowest = std::min(lowest, other.values[k]);
      if (fmt(row.values[k]) == fmt(lowest)) best += (best.empty() ? "" : ";") + columns[k];
    }
    out += "," + best + "\n";
  }
  return out;
}

}  // namespace tsc
