// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "tsc/asynccomm.hpp"
#include "tsc/bench.hpp"
#include "tsc/incidents.hpp"
#include "tsc/rlopt.hpp"

namespace {

using namespace tsc;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ParametricPolicy random_policy(std::size_t dim, Rng& rng, double scale) {
  ParametricPolicy p(dim);
  for (double& w : p.weights()) w = (rng.uniform() * 2 - 1) * scale;
  return p;
}

std::vector<double> random_features(std::size_t dim, Rng& rng) {
  std::vector<double> x(dim);
  for (double& v : x) v = rng.uniform() * 2 - 1;
  return x;
}


// 1. group advantages
Outcome c1() {
  const auto t0 = Clock::now();
  const std::vector<double> r{1, 0, 0, 1};
  const auto a = group_advantages(r);
  const bool exact = a == std::vector<double>{0.5, -0.5, -0.5, 0.5};
  Rng rng(1);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> g(2 + rng.below(15));
    for (double& v : g) v = rng.uniform() * 200 - 100;
    const auto adv = group_advantages(g);
    worst = std::max(worst, std::abs(std::accumulate(adv.begin(), adv.end(), 0.0)));
  }
  const double dt = seconds_since(t0);
  return {exact && worst <= 1e-9 && dt < 1.0,
          std::string("(1,0,0,1)->") + (exact ? "exact" : "WRONG") + ", max |sum| " + num(worst, 12) + ", " +
              num(dt, 3) + " s"};
}

// 2. stepwise conservation
Outcome c2() {
  const auto t0 = Clock::now();
  Rng rng(2);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    const double R = rng.uniform() * 2000 - 1000;
    const auto T = static_cast<std::size_t>(1 + rng.below(500));
    const auto r = stepwise_rewards(R, T);
    // Compensated sum so the check measures the split, not accumulation error.
    double sum = 0, comp = 0;
    for (double v : r) {
      const double t = sum + v;
      comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
      sum = t;
    }
    worst = std::max(worst, std::abs(sum + comp - R));
  }
  const double dt = seconds_since(t0);
  return {worst <= 1e-12 && dt < 1.0,
          "max |sum - R| " + num(worst, 15) + ", " + num(dt, 3) + " s"};
}

// 3. gradient checks
Outcome c3() {
  const auto t0 = Clock::now();
  constexpr std::size_t kDim = 10;
  constexpr double h = 1e-6;
  Rng rng(3);
  TrainConfig cfg;
  cfg.k = 4;
  int grpo_ok = 0, stpo_ok = 0, grpo_n = 0, stpo_n = 0;
  double worst_grpo = 0, worst_stpo = 0;

  auto check = [&](const std::function<ObjectiveValue(const ParametricPolicy&)>& f, ParametricPolicy theta,
                   double& worst) {
    const auto v = f(theta);
    double err = 0;
    for (std::size_t i = 0; i < theta.parameter_count(); ++i) {
      auto plus = theta, minus = theta;
      plus.weights()[i] += h;
      minus.weights()[i] -= h;
      const double fd = (f(plus).loss - f(minus).loss) / (2 * h);
      // Relative to the gradient scale so near-zero components don't dominate.
      double scale = 1e-8;
      for (double g : v.gradient) scale = std::max(scale, std::abs(g));
      err = std::max(err, std::abs(fd - v.gradient[i]) / scale);
    }
    worst = std::max(worst, err);
    return err <= 1e-4;
  };

  for (int inst = 0; inst < 100; ++inst) {
    const auto ref = random_policy(kDim, rng, 0.5);
    auto theta = ref;
    for (double& w : theta.weights()) w += (rng.uniform() * 2 - 1) * 0.1;
    RolloutGroup g;
    g.features = random_features(kDim, rng);
    for (int j = 0; j < 4; ++j) {
      g.actions.push_back(kPhases[rng.below(4)]);
      g.rewards.push_back(rng.uniform());
    }
    g.advantages = group_advantages(g.rewards);
    ++grpo_n;
    grpo_ok += check([&](const ParametricPolicy& p) { return grpo_objective(p, ref, g, cfg); }, theta, worst_grpo);

    std::vector<Trajectory> group(4);
    for (auto& t : group) {
      const auto T = 1 + rng.below(5);
      for (std::size_t s = 0; s < T; ++s) t.steps.push_back({random_features(kDim, rng), kPhases[rng.below(4)], 0.0});
      t.r_traj = rng.uniform() * 10 - 5;
    }
    ++stpo_n;
    stpo_ok += check([&](const ParametricPolicy& p) { return stpo_objective(p, ref, group, cfg); }, theta, worst_stpo);
  }
  const double dt = seconds_since(t0);
  return {grpo_ok == grpo_n && stpo_ok == stpo_n && dt < 30,
          "grpo " + std::to_string(grpo_ok) + "/" + std::to_string(grpo_n) + " (worst " + num(worst_grpo, 8) +
              "), stpo " + std::to_string(stpo_ok) + "/" + std::to_string(stpo_n) + " (worst " +
              num(worst_stpo, 8) + "), " + num(dt, 2) + " s"};
}

// 4. reference identity
Outcome c4() {
  Rng rng(4);
  TrainConfig cfg;
  double worst = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const auto theta = random_policy(kFeatureDim, rng, 0.3);
    RolloutGroup g;
    g.features = random_features(kFeatureDim, rng);
    for (int j = 0; j < 8; ++j) {
      g.actions.push_back(kPhases[rng.below(4)]);
      g.rewards.push_back(rng.uniform());
    }
    g.advantages = group_advantages(g.rewards);
    const auto v = grpo_objective(theta, theta, g, cfg);
    const auto lp = theta.log_probabilities(g.features);
    for (auto a : g.actions) worst = std::max(worst, std::abs(std::exp(lp[index(a)] - lp[index(a)]) - 1.0));
    worst = std::max({worst, std::abs(v.kl), std::abs(v.surrogate), std::abs(v.loss)});
  }
  return {worst <= 1e-9, "max deviation " + num(worst, 12)};
}

SimScenario default_scenario(int horizon) {
  SimScenario s;
  s.horizon_s = horizon;
  return s;
}

// 5. offline learning
ParametricPolicy g_offline_policy{kFeatureDim};
Outcome c5() {
  const auto t0 = Clock::now();
  SimScenario scen = default_scenario(3600);
  MaxPressureAgent oracle;
  const std::vector<std::uint64_t> seeds{101, 102, 103};
  const auto data = generate_expert_dataset(scen, seeds, oracle, 500);
  TrainConfig cfg;  // defaults: k=8
  cfg.iterations = 200;
  const auto trained = grpo_train(data, ParametricPolicy(kFeatureDim), cfg);
  int reached = -1;
  for (const auto& row : trained.history)
    if (row.accuracy && *row.accuracy >= 0.9) {
      reached = row.iter;
      break;
    }
  const double final_acc = trained.history.empty() ? 0.0 : *trained.history.back().accuracy;
  g_offline_policy = trained.policy;

  TrainConfig strong = cfg;
  strong.beta = 100.0;
  strong.ref_refresh_period = 0;  // reference stays at the initialization
  const ParametricPolicy init(kFeatureDim);
  const auto anchored = grpo_train(data, init, strong);
  double kl = 0;
  for (const auto& s : data) {
    const auto x = featurize(s.observation, empty_inbox_summary());
    kl += kl_divergence(anchored.policy.log_probabilities(x), init.log_probabilities(x));
  }
  kl /= data.size();
  const double dt = seconds_since(t0);
  return {reached >= 0 && kl <= 0.01 && dt < 120,
          "90% agreement at iteration " + std::to_string(reached) + " (final " + num(final_acc, 3) +
              "), beta=100 KL " + num(kl, 5) + ", " + num(dt, 1) + " s"};
}

// 6. baseline ordering
Outcome c6() {
  const auto t0 = Clock::now();
  ExperimentConfig cfg;
  cfg.flow.total_rate_vph = 4000;
  cfg.seeds = {1, 2, 3, 4, 5};
  cfg.horizon_s = 3600;
  cfg.controller.type = "fixedtime";
  const auto ft = cmd_sim_run(cfg, false);
  cfg.controller.type = "maxpressure";
  const auto mp = cmd_sim_run(cfg, false);
  const double reduction = 1.0 - mp.mean.att / ft.mean.att;
  const double dt = seconds_since(t0);
  return {reduction >= 0.20 && dt < 60,
          "FixedTime ATT " + num(ft.mean.att, 2) + ", MaxPressure ATT " + num(mp.mean.att, 2) + ", reduction " +
              num(100 * reduction, 1) + "%, " + num(dt, 1) + " s"};
}

// 7. online improvement
Outcome c7() {
  const auto t0 = Clock::now();
  TrainConfig cfg;
  cfg.iterations = 100;
  cfg.k = 8;
  SimScenario scen = default_scenario(ExperimentConfig{}.train.online_horizon_s);
  const std::vector<std::uint64_t> held_out{9001, 9002, 9003, 9004, 9005};

  auto evaluate = [&](const ParametricPolicy& p) {
    double r = 0, att = 0;
    for (std::size_t i = 0; i < held_out.size(); ++i) {
      const auto ep = run_policy_episode(scen, p, held_out[i], 777 + i, false, cfg);
      r += ep.trajectory.r_traj;
      att += ep.metrics.att;
    }
    return std::pair{r / held_out.size(), att / held_out.size()};
  };
  const auto [r_before, att_before] = evaluate(g_offline_policy);
  const auto trained = online_train(scen, g_offline_policy, cfg);
  const auto [r_after, att_after] = evaluate(trained.policy);

  double att_random = 0;
  for (auto seed : held_out) {
    FlowSpec flow = scen.flow;
    flow.seed = seed;
    Simulator sim(scen.network, scen.sim, spawn_flow(flow, scen.network, scen.horizon_s));
    RandomAgent random(seed);
    AsyncScheduler sched(sim, random, scen.comm);
    sched.run(scen.horizon_s);
    att_random += sim.metrics().att / held_out.size();
  }
  const double margin = 1.0 - att_after / att_random;
  const double dt = seconds_since(t0);
  return {r_after > r_before && margin >= 0.15 && dt < 900,
          "R_traj " + num(r_before, 3) + " -> " + num(r_after, 3) + ", ATT " + num(att_before, 1) + " -> " +
              num(att_after, 1) + " vs Random " + num(att_random, 1) + " (" + num(100 * margin, 1) + "% lower), " +
              num(dt, 1) + " s"};
}

// 8. async protocol properties
Outcome c8() {
  const auto t0 = Clock::now();
  std::size_t violations = 0, delivered = 0, steps = 0;
  Rng rng(8);

  // A message-happy agent: every decision emits a report.
  class Chatty : public Agent {
   public:
    explicit Chatty(std::uint64_t seed) : rng_(seed) {}
    Decision decide(const DecisionContext&) override {
      Decision d;
      d.phase = random_next(rng_);
      if (rng_.bernoulli(0.7)) d.message = "report " + std::to_string(rng_.below(1000));
      return d;
    }
    std::string name() const override { return "chatty"; }

   private:
    Rng rng_;
  };

  // Grids with 300 m links and with 3 km links (beyond the radius).
  for (double link : {300.0, 3000.0}) {
    for (int trial = 0; trial < 5; ++trial) {
      const int rows = 2 + static_cast<int>(rng.below(3));
      const int cols = 2 + static_cast<int>(rng.below(3));
      const auto net = build_grid(rows, cols, link);
      FlowSpec flow;
      flow.seed = rng.next();
      flow.total_rate_vph = 1500;
      Simulator sim(net, SimConfig{}, spawn_flow(flow, net, 20000));
      Chatty agent(rng.next());
      CommConfig comm;
      comm.offset_s = static_cast<int>(rng.below(10));
      AsyncScheduler sched(sim, agent, comm);
      sched.set_read_hook([&](IntersectionId reader, std::span<const AgentMessage> inbox, std::int64_t h) {
        for (const auto& m : inbox) {
          ++delivered;
          if (m.issued_half_step + 1 != h) ++violations;
          if (ParityPartition::in_group1(m.sender) == ParityPartition::in_group1(reader)) ++violations;
          if (neighbor_distance(m.sender, reader, net) > kDeliveryRadiusM) ++violations;
          if (m.recipient != reader) ++violations;
        }
        // The inbox was removed from the buffer when read.
        if (sched.buffer().peek(reader)) ++violations;
      });
      for (int s = 0; s < 1000; ++s) {
        if (!sched.step(20000)) break;
        ++steps;
        // After half-step 2 only group-1 recipients may hold messages.
        for (const auto& id : sched.buffer().recipients())
          if (!ParityPartition::in_group1(id)) ++violations;
      }
      violations += sched.violations().size();
      if (link > kDeliveryRadiusM && !sched.message_log().empty()) ++violations;
    }
  }
  const double dt = seconds_since(t0);
  return {violations == 0 && steps >= 10000 && delivered > 0 && dt < 30,
          std::to_string(steps) + " steps, " + std::to_string(delivered) + " messages read, " +
              std::to_string(violations) + " violations, " + num(dt, 2) + " s"};
}

// 9. EAA calibration
Outcome c9() {
  const auto incidents = synthesize_incidents(200, 9);
  RandomAgent random(9);
  const auto eaa_random = eval_eaa(random, incidents, 9);
  RuleTableTextModel rules;
  TextAgent oracle(rules);
  const auto fixtures = builtin_incidents();
  const auto eaa_rule = eval_eaa(oracle, fixtures, 9);
  const bool ok = eaa_random && std::abs(*eaa_random - 0.25) <= 0.05 && eaa_rule && *eaa_rule == 1.0 &&
                  fixtures.size() == 10;
  return {ok, "random " + (eaa_random ? num(*eaa_random, 3) : "n/a") + " over " + std::to_string(incidents.size()) +
                  " incidents, rule table " + (eaa_rule ? num(*eaa_rule, 3) : "n/a") + " over " +
                  std::to_string(fixtures.size()) + " fixtures"};
}

// 10. emergency restriction identity
Outcome c10() {
  bool ok = true;
  std::string detail;
  for (const char* type : {"fixedtime", "maxpressure", "random"}) {
    ExperimentConfig cfg;
    cfg.flow.emergency_fraction = 1.0;
    cfg.seeds = {3};
    cfg.horizon_s = 1800;
    cfg.controller.type = type;
    const auto r = cmd_sim_run(cfg, false).runs.front().metrics;
    const bool same = r.aett == r.att && r.aewt == r.awt && r.emergency_entered == r.vehicles_entered;
    ok = ok && same && r.vehicles_entered > 0;
    detail += std::string(type) + (same ? " equal" : " DIFFER") + "; ";
  }
  return {ok, detail};
}

// 11. determinism
Outcome c11() {
  const auto base = std::filesystem::temp_directory_path() / "tsc_acceptance_determinism";
  std::filesystem::remove_all(base);
  auto run_once = [&](const std::string& tag) {
    std::vector<ExperimentConfig> cfgs;
    for (const char* type : {"fixedtime", "maxpressure", "random"}) {
      ExperimentConfig cfg;
      cfg.name = type;
      cfg.seeds = {1, 2};
      cfg.horizon_s = 900;
      cfg.flow.emergency_fraction = 0.05;
      cfg.controller.type = type;
      cfg.output_dir = (base / tag / type).string();
      cmd_sim_run(cfg);
      cfgs.push_back(cfg);
    }
    ExperimentConfig pipe;
    pipe.seeds = {1};
    pipe.horizon_s = 600;
    pipe.train.dataset_size = 100;
    pipe.train.offline.iterations = 5;
    pipe.train.online.iterations = 2;
    pipe.train.online.k = 2;
    pipe.train.online_horizon_s = 300;
    pipe.output_dir = (base / tag / "pipeline").string();
    run_pipeline(pipe);
    write_text_file((base / tag / "compare.csv").string(), cmd_bench_compare(cfgs));
  };
  run_once("a");
  run_once("b");
  std::size_t files = 0, differ = 0;
  for (const auto& e : std::filesystem::recursive_directory_iterator(base / "a")) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto other = base / "b" / std::filesystem::relative(e.path(), base / "a");
    if (!std::filesystem::exists(other) || read_text_file(e.path().string()) != read_text_file(other.string()))
      ++differ;
  }
  std::filesystem::remove_all(base);
  return {differ == 0 && files > 0, std::to_string(files) + " files compared, " + std::to_string(differ) + " differ"};
}

// 12. ablation reachability
Outcome c12() {
  const auto base = std::filesystem::temp_directory_path() / "tsc_acceptance_ablation";
  std::filesystem::remove_all(base);
  auto make = [&](const std::string& tag) {
    ExperimentConfig cfg;
    cfg.seeds = {5};
    cfg.horizon_s = 600;
    // Heavy demand so congestion reports are actually emitted.
    cfg.flow.total_rate_vph = 8000;
    cfg.train.dataset_size = 100;
    cfg.train.offline.iterations = 5;
    cfg.train.online.iterations = 2;
    cfg.train.online.k = 2;
    cfg.train.online_horizon_s = 300;
    cfg.output_dir = (base / tag).string();
    return cfg;
  };
  auto exists = [&](const std::string& tag, const char* file) { return std::filesystem::exists(base / tag / file); };
  auto size = [&](const std::string& tag, const char* file) {
    return exists(tag, file) ? std::filesystem::file_size(base / tag / file) : 0;
  };

  const auto full = run_pipeline(make("full"));
  auto a = make("no_expert");
  a.ablation.no_expert_stage = true;
  run_pipeline(a);
  auto b = make("no_openworld");
  b.ablation.no_openworld_stage = true;
  run_pipeline(b);
  auto c = make("no_comm");
  c.ablation.no_communication = true;
  run_pipeline(c);

  const bool full_ok = exists("full", "offline_history.jsonl") && exists("full", "online_history.jsonl") &&
                       size("full", "messages.jsonl") > 0;
  const bool a_ok = !exists("no_expert", "offline_history.jsonl") && exists("no_expert", "online_history.jsonl");
  const bool b_ok = exists("no_openworld", "offline_history.jsonl") && !exists("no_openworld", "online_history.jsonl");
  const bool c_ok = exists("no_comm", "messages.jsonl") && size("no_comm", "messages.jsonl") == 0 &&
                    exists("no_comm", "online_history.jsonl") && exists("no_comm", "offline_history.jsonl");
  std::filesystem::remove_all(base);
  return {full_ok && a_ok && b_ok && c_ok,
          std::string("full ") + (full_ok ? "ok" : "BAD") + ", -expert " + (a_ok ? "ok" : "BAD") + ", -openworld " +
              (b_ok ? "ok" : "BAD") + ", -communicate " + (c_ok ? "ok" : "BAD")};
}

}  // namespace

int main(int argc, char** argv) {
  // Optional arguments select criteria by number, e.g. "5 7".
  std::vector<bool> selected(13, argc <= 1);
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n >= 1 && n <= 12) selected[static_cast<std::size_t>(n)] = true;
  }
  // The online criterion starts from the offline result.
  if (selected[7] && !selected[5]) {
    try {
      c5();
    } catch (const std::exception&) {
    }
  }
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"group advantages oracle", c1},
      {"stepwise reward conservation", c2},
      {"objective gradients vs finite differences", c3},
      {"reference identity", c4},
      {"offline learning and KL anchoring", c5},
      {"MaxPressure vs FixedTime ATT", c6},
      {"online improvement over offline policy", c7},
      {"half-step protocol properties", c8},
      {"incident accuracy calibration", c9},
      {"emergency restriction identity", c10},
      {"determinism of outputs", c11},
      {"ablation reachability", c12},
  };
  int failures = 0;
  int ran = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i + 1]) continue;
    ++ran;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("[%s] %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", ran - failures, ran);
  return failures == 0 ? 0 : 1;
}
