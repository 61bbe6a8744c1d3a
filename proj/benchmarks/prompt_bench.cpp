#include <benchmark/benchmark.h>

#include "tsc/agentio.hpp"
#include "tsc/incidents.hpp"

namespace {

using namespace tsc;

void BM_RenderPrompt(benchmark::State& state) {
  Rng rng(1);
  const auto obs = random_observation(rng, {1, 1});
  const std::vector<AgentMessage> inbox{make_message({0, 1}, {1, 1}, heavy_traffic_message(Approach::North), 0)};
  const std::optional<std::string> incident = "A delivery truck is stopped in the westbound lane.";
  for (auto _ : state) benchmark::DoNotOptimize(render_prompt(obs, incident, inbox).text());
}
BENCHMARK(BM_RenderPrompt);

void BM_ParseResponse(benchmark::State& state) {
  const std::string text = "<think>" + std::string(400, 'x') + "</think>\n\\boxed{NLSL}";
  for (auto _ : state) benchmark::DoNotOptimize(parse_response(text));
}
BENCHMARK(BM_ParseResponse);

void BM_RuleTable(benchmark::State& state) {
  const auto incidents = builtin_incidents();
  for (auto _ : state)
    for (const auto& i : incidents) benchmark::DoNotOptimize(rule_table_action(i.text));
}
BENCHMARK(BM_RuleTable);

}  // namespace
