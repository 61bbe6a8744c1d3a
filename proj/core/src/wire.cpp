#include "tsc/wire.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <unordered_map>

#include "json_io.hpp"
#include "tsc/error.hpp"

namespace tsc {

using detail::json;

std::string wire_request(const std::string& id, const std::string& prompt) {
  return json{{"id", id}, {"prompt", prompt}}.dump() + "\n";
}

std::string wire_response(const std::string& id, const std::string& text) {
  return json{{"id", id}, {"text", text}}.dump() + "\n";
}

WireTextModel::WireTextModel(int read_fd, int write_fd, std::chrono::milliseconds timeout)
    : read_fd_(read_fd), write_fd_(write_fd), timeout_(timeout) {
  if (read_fd < 0 || write_fd < 0) throw InvalidArgument("wire: invalid descriptor");
  // A peer that hangs up should surface as a write error, not kill us.
  ::signal(SIGPIPE, SIG_IGN);
}

WireTextModel::~WireTextModel() {
  if (write_fd_ != read_fd_) ::close(write_fd_);
  ::close(read_fd_);
  if (child_pid_ > 0) {
    int status = 0;
    ::waitpid(child_pid_, &status, 0);
  }
}

std::unique_ptr<WireTextModel> WireTextModel::spawn(const std::vector<std::string>& argv,
                                                    std::chrono::milliseconds timeout) {
  if (argv.empty()) throw InvalidArgument("wire: empty command");
  int to_child[2];
  int from_child[2];
  if (::pipe(to_child) != 0) throw IoError(std::string("wire: pipe: ") + std::strerror(errno));
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw IoError(std::string("wire: pipe: ") + std::strerror(errno));
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw IoError(std::string("wire: fork: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);
    ::execvp(args[0], args.data());
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  auto model = std::make_unique<WireTextModel>(from_child[0], to_child[1], timeout);
  model->child_pid_ = pid;
  return model;
}

std::unique_ptr<WireTextModel> WireTextModel::connect_tcp(const std::string& host,
                                                          std::uint16_t port,
                                                          std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw IoError("wire: resolve " + host + ": " + ::gai_strerror(rc));
  int fd = -1;
  for (addrinfo* p = res; p; p = p->ai_next) {
    fd = ::socket(p->ai_family, p->ai_socktype, p->ai_protocol);
    if (fd < 0) continue;
    if (::connect(fd, p->ai_addr, p->ai_addrlen) == 0) break;
    ::close(fd);
    fd = -1;
  }
  ::freeaddrinfo(res);
  if (fd < 0) throw IoError("wire: cannot connect to " + host + ":" + service);
  const int dup_fd = ::dup(fd);
  return std::make_unique<WireTextModel>(fd, dup_fd, timeout);
}

void WireTextModel::write_all(const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("wire: write: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(n);
  }
}

bool WireTextModel::read_line(std::string& line, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    if (auto nl = pending_.find('\n'); nl != std::string::npos) {
      line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return true;
    }
    if (eof_) return false;
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd pfd{read_fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
    if (rc < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("wire: poll: ") + std::strerror(errno));
    }
    if (rc == 0) return false;
    char buf[4096];
    const ssize_t n = ::read(read_fd_, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw IoError(std::string("wire: read: ") + std::strerror(errno));
    }
    if (n == 0) {
      eof_ = true;
      continue;
    }
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

std::vector<std::optional<std::string>> WireTextModel::complete(
    std::span<const std::string> prompts) {
  std::vector<std::optional<std::string>> out(prompts.size());
  std::unordered_map<std::string, std::size_t> waiting;
  std::string batch;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    const std::string id = "q" + std::to_string(next_id_++);
    waiting.emplace(id, i);
    batch += wire_request(id, prompts[i]);
  }
  try {
    write_all(batch);
  } catch (const IoError& e) {
    warnings_.emplace_back(e.what());
    return out;
  }

  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  std::string line;
  while (!waiting.empty() && read_line(line, deadline)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("id") || !j["id"].is_string() ||
        !j.contains("text") || !j["text"].is_string()) {
      warnings_.push_back("wire: malformed response line");
      continue;
    }
    const auto it = waiting.find(j["id"].get<std::string>());
    if (it == waiting.end()) {
      warnings_.push_back("wire: ignoring response with unknown id '" +
                          j["id"].get<std::string>() + "'");
      continue;
    }
    out[it->second] = j["text"].get<std::string>();
    waiting.erase(it);
  }
  std::vector<std::pair<std::size_t, std::string>> missing;
  for (const auto& [id, i] : waiting) missing.emplace_back(i, id);
  std::sort(missing.begin(), missing.end());
  for (const auto& [_, id] : missing) warnings_.push_back("wire: no response for '" + id + "'");
  return out;
}

}  // namespace tsc
