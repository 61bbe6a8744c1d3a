// Line-oriented stand-in for a text model server, used by the wire tests.
// Modes: answer (always NTST), silent, garbage, unknown (stray id first),
// reverse (answers a batch of two in reverse order).
#include <iostream>
#include <string>
#include <vector>

#include "json.hpp"

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "answer";
  std::string line;
  std::vector<std::string> held;
  while (std::getline(std::cin, line)) {
    const auto req = nlohmann::json::parse(line);
    const std::string id = req.at("id");
    const nlohmann::json resp{{"id", id}, {"text", "<think>ok</think>\\boxed{NTST}"}};
    if (mode == "silent") continue;
    if (mode == "garbage") {
      std::cout << "this is not json\n" << std::flush;
      continue;
    }
    if (mode == "unknown") std::cout << nlohmann::json{{"id", "zzz"}, {"text", "x"}}.dump() << "\n";
    if (mode == "reverse") {
      held.push_back(resp.dump());
      if (held.size() == 2) {
        std::cout << held[1] << "\n" << held[0] << "\n" << std::flush;
        held.clear();
      }
      continue;
    }
    std::cout << resp.dump() << "\n" << std::flush;
  }
}
