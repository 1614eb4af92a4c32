#pragma once

// Minimal POSIX subprocess runner: /bin/sh -c with merged stdout/stderr
// capture, a wall-clock deadline, and process-group kill on timeout so
// runaway candidates cannot outlive their gate.

#include <cerrno>
#include <chrono>
#include <csignal>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <fcntl.h>
#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

namespace reflex {

struct ExecResult {
  int exit_code = -1;       // -1 when killed or not started
  bool timed_out = false;
  std::string output;       // stdout + stderr, truncated at output_cap
  double wall_time_s = 0.0;
};

struct ExecError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline ExecResult run_command(const std::string& command, const std::filesystem::path& workdir,
                              double timeout_s, std::size_t output_cap = 1 << 20) {
  int pipe_fds[2];
  if (::pipe(pipe_fds) != 0) throw ExecError("pipe failed: " + std::string(strerror(errno)));

  auto start = std::chrono::steady_clock::now();
  pid_t pid = ::fork();
  if (pid < 0) {
    ::close(pipe_fds[0]);
    ::close(pipe_fds[1]);
    throw ExecError("fork failed: " + std::string(strerror(errno)));
  }

  if (pid == 0) {
    // Child: own process group so a timeout kill reaps grandchildren too.
    ::setpgid(0, 0);
    ::close(pipe_fds[0]);
    ::dup2(pipe_fds[1], STDOUT_FILENO);
    ::dup2(pipe_fds[1], STDERR_FILENO);
    ::close(pipe_fds[1]);
    if (!workdir.empty() && ::chdir(workdir.c_str()) != 0) _exit(127);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }

  ::close(pipe_fds[1]);
  ::fcntl(pipe_fds[0], F_SETFL, O_NONBLOCK);

  ExecResult result;
  auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                              std::chrono::duration<double>(timeout_s));
  bool child_done = false;
  int status = 0;

  char buf[4096];
  while (true) {
    auto now = std::chrono::steady_clock::now();
    if (!child_done && now >= deadline) {
      result.timed_out = true;
      ::kill(-pid, SIGKILL);
      ::kill(pid, SIGKILL);
    }
    if (now >= deadline + std::chrono::seconds(1)) {
      // Hard stop: a grandchild may be holding the pipe open.
      ::kill(-pid, SIGKILL);
      if (!child_done) {
        ::waitpid(pid, &status, 0);
        child_done = true;
      }
      break;
    }

    pid_t waited = ::waitpid(pid, &status, child_done ? 0 : WNOHANG);
    if (waited == pid) child_done = true;

    struct pollfd pfd{pipe_fds[0], POLLIN, 0};
    int timeout_ms = child_done ? 0 : 20;
    int ready = ::poll(&pfd, 1, timeout_ms);
    if (ready > 0 && (pfd.revents & (POLLIN | POLLHUP))) {
      ssize_t n;
      while ((n = ::read(pipe_fds[0], buf, sizeof(buf))) > 0) {
        if (result.output.size() < output_cap) {
          result.output.append(buf, buf + std::min<std::size_t>(
                                              static_cast<std::size_t>(n),
                                              output_cap - result.output.size()));
        }
      }
      if (n == 0 && child_done) break;  // EOF and child reaped
    } else if (child_done) {
      // Drain whatever remains, then stop.
      ssize_t n;
      while ((n = ::read(pipe_fds[0], buf, sizeof(buf))) > 0) {
        if (result.output.size() < output_cap) {
          result.output.append(buf, buf + std::min<std::size_t>(
                                              static_cast<std::size_t>(n),
                                              output_cap - result.output.size()));
        }
      }
      break;
    }
  }
  ::close(pipe_fds[0]);

  result.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.exit_code = 128 + WTERMSIG(status);
  }
  return result;
}

}  // namespace reflex
