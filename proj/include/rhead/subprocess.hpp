#pragma once

// Runner living in a child process, driven over its stdin/stdout. POSIX only.

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <string>
#include <string_view>
#include <thread>

#include "rhead/protocol.hpp"

namespace rhead {

class SubprocessRunner : public Runner {
 public:
  // Launches `command` through /bin/sh and completes the info handshake.
  SubprocessRunner(std::string command, std::chrono::milliseconds timeout)
      : command_(std::move(command)), timeout_(timeout) {
    int sv[2];
    if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) {
      throw RunnerCrash(std::string("socketpair failed: ") + std::strerror(errno));
    }
    pid_ = ::fork();
    if (pid_ < 0) {
      ::close(sv[0]);
      ::close(sv[1]);
      throw RunnerCrash(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid_ == 0) {
      ::setpgid(0, 0);  // own group, so a kill reaches the whole shell pipeline
      ::dup2(sv[1], STDIN_FILENO);
      ::dup2(sv[1], STDOUT_FILENO);
      ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::setpgid(pid_, pid_);  // also here: whichever side runs first wins the race
    ::close(sv[1]);
    fd_ = sv[0];
    try {
      info_ = decode_info(roundtrip(encode_info_request()), lines_);
      validate_info(info_);
    } catch (...) {
      shutdown();
      throw;
    }
  }

  SubprocessRunner(const SubprocessRunner&) = delete;
  SubprocessRunner& operator=(const SubprocessRunner&) = delete;

  ~SubprocessRunner() override { shutdown(); }

  RunnerInfo info() override { return info_; }

  GenerateResponse generate(const GenerateRequest& req) override {
    const std::string reply = roundtrip(encode(req));
    auto resp = decode_generate_response(reply, lines_);
    validate_response(resp, req, info_.shape(), lines_);
    return resp;
  }

  Tokens tokenize(std::string_view text) override {
    const auto j = wire::parse(roundtrip(encode_tokenize_request(text)), lines_);
    wire::raise_if_error(j);
    return wire::field<Tokens>(j, "tokens", lines_);
  }

  std::string detokenize(std::span<const TokenId> tokens) override {
    const auto j = wire::parse(roundtrip(encode_detokenize_request(tokens)), lines_);
    wire::raise_if_error(j);
    return wire::field<std::string>(j, "text", lines_);
  }

  const std::string& command() const { return command_; }
  pid_t pid() const { return pid_; }

 private:
  std::string roundtrip(const std::string& frame) {
    if (dead_) throw RunnerCrash("runner '" + command_ + "' is no longer running");
    write_line(frame);
    return read_line();
  }

  void write_line(const std::string& frame) {
    std::string data = frame;
    data += '\n';
    std::size_t off = 0;
    while (off < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        crashed("write failed: " + std::string(std::strerror(errno)));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string read_line() {
    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    for (;;) {
      if (auto nl = buf_.find('\n'); nl != std::string::npos) {
        std::string line = buf_.substr(0, nl);
        buf_.erase(0, nl + 1);
        ++lines_;
        return line;
      }
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) timed_out();
      pollfd p{fd_, POLLIN, 0};
      const int r = ::poll(&p, 1, static_cast<int>(left.count()));
      if (r < 0) {
        if (errno == EINTR) continue;
        crashed("poll failed: " + std::string(std::strerror(errno)));
      }
      if (r == 0) timed_out();
      char chunk[65536];
      const ssize_t n = ::read(fd_, chunk, sizeof chunk);
      if (n < 0) {
        if (errno == EINTR) continue;
        crashed("read failed: " + std::string(std::strerror(errno)));
      }
      if (n == 0) crashed("runner closed its output");
      buf_.append(chunk, static_cast<std::size_t>(n));
    }
  }

  [[noreturn]] void timed_out() {
    kill_child();
    throw RunnerTimeout("runner '" + command_ + "' did not answer within " + std::to_string(timeout_.count()) + " ms");
  }

  [[noreturn]] void crashed(const std::string& why) {
    std::string status;
    int st = 0;
    pid_t r = 0;
    for (int i = 0; i < 50 && (r = ::waitpid(pid_, &st, WNOHANG)) == 0; ++i) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (r == pid_) {
      reaped_ = true;
      if (WIFEXITED(st)) status = " (exit status " + std::to_string(WEXITSTATUS(st)) + ")";
      else if (WIFSIGNALED(st)) status = " (killed by signal " + std::to_string(WTERMSIG(st)) + ")";
    }
    kill_child();
    throw RunnerCrash("runner '" + command_ + "' crashed: " + why + status);
  }

  void kill_child() {
    dead_ = true;
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
    if (pid_ > 0 && !group_killed_) {
      ::kill(-pid_, SIGKILL);
      group_killed_ = true;
    }
    if (pid_ > 0 && !reaped_) {
      ::waitpid(pid_, nullptr, 0);
      reaped_ = true;
    }
  }

  void shutdown() {
    if (fd_ >= 0) ::shutdown(fd_, SHUT_WR);
    if (pid_ > 0 && !reaped_) {
      for (int i = 0; i < 100; ++i) {
        if (::waitpid(pid_, nullptr, WNOHANG) == pid_) {
          reaped_ = true;
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(5));
      }
    }
    kill_child();
  }

  std::string command_;
  std::chrono::milliseconds timeout_;
  pid_t pid_ = -1;
  int fd_ = -1;
  bool dead_ = false;
  bool reaped_ = false;
  bool group_killed_ = false;
  std::string buf_;
  std::size_t lines_ = 0;
  RunnerInfo info_;
};

}  // namespace rhead
