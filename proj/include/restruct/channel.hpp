#pragma once

// Newline-delimited byte channels to external agents: a spawned process's
// standard streams, or a TCP stream. POSIX only.

#include <chrono>
#include <csignal>
#include <cstring>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <thread>

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include "restruct/error.hpp"
#include "restruct/protocol.hpp"

extern char** environ;

namespace restruct::channel {

using std::chrono::milliseconds;

inline void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { std::signal(SIGPIPE, SIG_IGN); });
}

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  // Appends the newline if missing.
  virtual void send(std::string_view line) = 0;
  // Next line without its newline. Throws ProtocolError on EOF, timeout or an
  // oversized record.
  virtual std::string receive(milliseconds timeout) = 0;
};

class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, milliseconds write_timeout = milliseconds(30000))
      : read_fd_(read_fd), write_fd_(write_fd), write_timeout_(write_timeout) {
    ignore_sigpipe();
  }
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;
  ~FdChannel() override { close_fds(); }

  void send(std::string_view line) override {
    std::string data(line);
    if (data.empty() || data.back() != '\n') data += '\n';
    std::size_t off = 0;
    const auto deadline = std::chrono::steady_clock::now() + write_timeout_;
    while (off < data.size()) {
      if (!wait_ready(write_fd_, POLLOUT, deadline)) throw ProtocolError("agent did not accept input before timeout");
      const auto n = ::write(write_fd_, data.data() + off, data.size() - off);
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw ProtocolError(std::string("write to agent failed: ") + std::strerror(errno));
      }
      off += static_cast<std::size_t>(n);
    }
  }

  std::string receive(milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      const auto nl = buffer_.find('\n');
      if (nl != std::string::npos) {
        if (nl > protocol::kMaxLineBytes) throw ProtocolError("agent record exceeds the 1 MiB limit");
        std::string line = buffer_.substr(0, nl);
        buffer_.erase(0, nl + 1);
        return line;
      }
      if (buffer_.size() > protocol::kMaxLineBytes) throw ProtocolError("agent record exceeds the 1 MiB limit");
      if (!wait_ready(read_fd_, POLLIN, deadline)) throw ProtocolError("agent timed out");
      char chunk[65536];
      const auto n = ::read(read_fd_, chunk, sizeof(chunk));
      if (n < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw ProtocolError(std::string("read from agent failed: ") + std::strerror(errno));
      }
      if (n == 0) throw ProtocolError("agent closed the connection");
      buffer_.append(chunk, static_cast<std::size_t>(n));
    }
  }

 protected:
  void close_write() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) {
      ::close(write_fd_);
      write_fd_ = -1;
    }
  }

  void close_fds() {
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    if (read_fd_ >= 0) ::close(read_fd_);
    read_fd_ = write_fd_ = -1;
  }

 private:
  static bool wait_ready(int fd, short events, std::chrono::steady_clock::time_point deadline) {
    if (fd < 0) throw ProtocolError("channel is closed");
    while (true) {
      const auto left = std::chrono::duration_cast<milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return false;
      pollfd p{fd, events, 0};
      const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (r < 0 && errno == EINTR) continue;
      if (r < 0) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
      if (r == 0) return false;
      return true;  // readable, writable, or hung up; read/write reports which
    }
  }

  int read_fd_;
  int write_fd_;
  milliseconds write_timeout_;
  std::string buffer_;
};

// Runs `/bin/sh -c command` with its stdin/stdout connected to the channel.
// stderr is inherited.
class ProcessChannel : public FdChannel {
 public:
  static std::unique_ptr<ProcessChannel> spawn(const std::string& command) {
    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) throw ProtocolError("pipe failed");
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
      ::close(to_child[0]);
      ::close(to_child[1]);
      throw ProtocolError("pipe failed");
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, to_child[0], STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, from_child[1], STDOUT_FILENO);
    // Own process group, so terminate() also reaches what the shell forks.
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);
    std::string sh = "/bin/sh", flag = "-c", cmd = command;
    char* argv[] = {sh.data(), flag.data(), cmd.data(), nullptr};
    pid_t pid = -1;
    const int rc = ::posix_spawn(&pid, "/bin/sh", &actions, &attr, argv, environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    ::close(to_child[0]);
    ::close(from_child[1]);
    if (rc != 0) {
      ::close(to_child[1]);
      ::close(from_child[0]);
      throw ProtocolError("cannot spawn agent '" + command + "': " + std::strerror(rc));
    }
    return std::unique_ptr<ProcessChannel>(new ProcessChannel(pid, from_child[0], to_child[1]));
  }

  ~ProcessChannel() override { terminate(milliseconds(0)); }

  // Closes the agent's stdin and waits up to grace for it to exit, then kills it.
  void terminate(milliseconds grace) {
    if (pid_ <= 0) return;
    close_write();
    const auto deadline = std::chrono::steady_clock::now() + grace;
    int status = 0;
    while (::waitpid(pid_, &status, WNOHANG) == 0) {
      if (std::chrono::steady_clock::now() >= deadline) {
        ::kill(-pid_, SIGKILL);
        ::waitpid(pid_, &status, 0);
        break;
      }
      std::this_thread::sleep_for(milliseconds(5));
    }
    ::kill(-pid_, SIGKILL);
    pid_ = -1;
    close_fds();
  }

 private:
  ProcessChannel(pid_t pid, int read_fd, int write_fd) : FdChannel(read_fd, write_fd), pid_(pid) {}

  pid_t pid_;
};

inline std::pair<std::string, std::string> split_address(std::string_view address) {
  const auto colon = address.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 1 == address.size()) {
    throw UsageError("socket address must be host:port, got '" + std::string(address) + "'");
  }
  return {std::string(address.substr(0, colon)), std::string(address.substr(colon + 1))};
}

class SocketChannel : public FdChannel {
 public:
  static std::unique_ptr<SocketChannel> connect(const std::string& address) {
    const auto [host, port] = split_address(address);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (const int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res); rc != 0) {
      throw ProtocolError("cannot resolve '" + address + "': " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (auto* ai = res; ai; ai = ai->ai_next) {
      fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw ProtocolError("cannot connect to agent at '" + address + "'");
    return std::unique_ptr<SocketChannel>(new SocketChannel(fd));
  }

  // Wraps an accepted connection (agent side).
  static std::unique_ptr<SocketChannel> adopt(int fd) { return std::unique_ptr<SocketChannel>(new SocketChannel(fd)); }

 private:
  explicit SocketChannel(int fd) : FdChannel(fd, fd) {}
};

// Listening socket for agent implementations and tests. Port 0 picks a free port.
class TcpListener {
 public:
  explicit TcpListener(std::uint16_t port = 0, const std::string& host = "127.0.0.1") {
    fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd_ < 0) throw Error("socket failed");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) throw Error("bad listen host '" + host + "'");
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 || ::listen(fd_, 16) != 0) {
      ::close(fd_);
      throw Error("cannot listen on " + host + ":" + std::to_string(port));
    }
    socklen_t len = sizeof(addr);
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() { close(); }

  std::uint16_t port() const { return port_; }

  // Blocks until a client connects; nullptr once closed.
  std::unique_ptr<SocketChannel> accept() {
    while (true) {
      const int c = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
      if (c >= 0) return SocketChannel::adopt(c);
      if (errno == EINTR) continue;
      return nullptr;
    }
  }

  void close() {
    if (fd_ >= 0) {
      ::shutdown(fd_, SHUT_RDWR);
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

}  // namespace restruct::channel
