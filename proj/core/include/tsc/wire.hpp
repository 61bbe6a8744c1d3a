#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsc/agentio.hpp"

namespace tsc {

// Text model reached over a byte stream speaking line-delimited JSON:
//   request  {"id": "...", "prompt": "..."}
//   response {"id": "...", "text": "..."}
// All prompts of a batch are written first, then responses are collected in
// any order until each is answered or its deadline passes.
class WireTextModel : public TextModel {
 public:
  /// Takes ownership of both descriptors (they may be the same socket).
  WireTextModel(int read_fd, int write_fd,
                std::chrono::milliseconds timeout = std::chrono::seconds(10));
  ~WireTextModel() override;
  WireTextModel(const WireTextModel&) = delete;
  WireTextModel& operator=(const WireTextModel&) = delete;

  /// Runs `argv` as a child process talking over its stdin/stdout.
  static std::unique_ptr<WireTextModel> spawn(const std::vector<std::string>& argv,
                                              std::chrono::milliseconds timeout);
  /// Connects to host:port over TCP.
  static std::unique_ptr<WireTextModel> connect_tcp(const std::string& host, std::uint16_t port,
                                                    std::chrono::milliseconds timeout);

  std::vector<std::optional<std::string>> complete(std::span<const std::string> prompts) override;

  /// Unknown ids, malformed lines and timeouts, in order of occurrence.
  const std::vector<std::string>& warnings() const { return warnings_; }

 private:
  bool read_line(std::string& line, std::chrono::steady_clock::time_point deadline);
  void write_all(const std::string& data);

  int read_fd_;
  int write_fd_;
  int child_pid_ = -1;
  std::chrono::milliseconds timeout_;
  std::uint64_t next_id_ = 0;
  std::string pending_;
  bool eof_ = false;
  std::vector<std::string> warnings_;
};

/// Encoders for the wire records; exposed for tests and servers.
std::string wire_request(const std::string& id, const std::string& prompt);
std::string wire_response(const std::string& id, const std::string& text);

}  // namespace tsc
