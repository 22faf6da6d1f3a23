#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "lobforge/core/error.hpp"
#include "lobforge/market/io.hpp"
#include "lobforge/market/snapshot.hpp"

namespace lobforge::market {

// Closes the connection cleanly; anything after it is ignored.
inline constexpr std::string_view kEndOfStream = R"({"eos":true})";

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  void push(T item) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(item));
    not_empty_.notify_one();
  }

  // Blocks until an item is available or the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T item = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return item;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::deque<T> items_;
  bool closed_ = false;
  std::mutex mu_;
  std::condition_variable not_empty_;
  std::condition_variable not_full_;
};

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

inline Endpoint parse_endpoint(const std::string& text) {
  auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw ConfigError("endpoint must be host:port, got '" + text + "'");
  }
  Endpoint ep;
  ep.host = colon == 0 ? "127.0.0.1" : text.substr(0, colon);
  unsigned port = 0;
  if (!detail::parse_field(std::string_view(text).substr(colon + 1), port) || port == 0 || port > 65535) {
    throw ConfigError("bad port in endpoint '" + text + "'");
  }
  ep.port = static_cast<std::uint16_t>(port);
  return ep;
}

namespace detail {

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void reset() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

 private:
  int fd_ = -1;
};

inline Socket connect_tcp(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0 || !res) {
    return {};
  }
  Socket sock(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
  const bool ok = sock.valid() && ::connect(sock.fd(), res->ai_addr, res->ai_addrlen) == 0;
  ::freeaddrinfo(res);
  if (!ok) return {};
  return sock;
}

inline bool send_all(int fd, std::string_view data) {
  while (!data.empty()) {
    auto n = ::send(fd, data.data(), data.size(), MSG_NOSIGNAL);
    if (n <= 0) return false;
    data.remove_prefix(static_cast<std::size_t>(n));
  }
  return true;
}

}  // namespace detail

// Serves a fixed list of protocol lines to every client that connects,
// followed by the end-of-stream marker. With `disconnect_after` set, the
// first connection is dropped after that many lines and later connections
// resume from there, which lets tests exercise reconnects.
class ReplayServer {
 public:
  explicit ReplayServer(std::vector<std::string> lines, std::optional<std::size_t> disconnect_after = {})
      : lines_(std::move(lines)), disconnect_after_(disconnect_after) {
    listener_ = detail::Socket(::socket(AF_INET, SOCK_STREAM, 0));
    if (!listener_.valid()) throw DataError("replay server: socket() failed");
    int yes = 1;
    ::setsockopt(listener_.fd(), SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = 0;
    if (::bind(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listener_.fd(), 4) != 0) {
      throw DataError("replay server: bind/listen failed");
    }
    socklen_t len = sizeof(addr);
    ::getsockname(listener_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    worker_ = std::thread([this] { run(); });
  }

  ReplayServer(const ReplayServer&) = delete;
  ReplayServer& operator=(const ReplayServer&) = delete;

  ~ReplayServer() {
    stop_ = true;
    if (worker_.joinable()) worker_.join();
  }

  std::uint16_t port() const { return port_; }
  Endpoint endpoint() const { return {"127.0.0.1", port_}; }
  std::size_t connections() const { return connections_; }

 private:
  void run() {
    std::size_t cursor = 0;
    while (!stop_) {
      pollfd pfd{listener_.fd(), POLLIN, 0};
      if (::poll(&pfd, 1, 50) <= 0) continue;
      detail::Socket client(::accept(listener_.fd(), nullptr, nullptr));
      if (!client.valid()) continue;
      const bool first = connections_++ == 0;
      std::size_t end = lines_.size();
      if (first && disconnect_after_) end = std::min(end, *disconnect_after_);
      bool ok = true;
      for (; cursor < end && ok && !stop_; ++cursor) {
        ok = detail::send_all(client.fd(), lines_[cursor] + "\n");
      }
      if (ok && cursor == lines_.size()) {
        detail::send_all(client.fd(), std::string(kEndOfStream) + "\n");
      }
      ::shutdown(client.fd(), SHUT_RDWR);
    }
  }

  std::vector<std::string> lines_;
  std::optional<std::size_t> disconnect_after_;
  detail::Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stop_{false};
  std::atomic<std::size_t> connections_{0};
  std::thread worker_;
};

struct CollectOptions {
  std::size_t queue_capacity = 4096;
  std::size_t max_retries = 5;
  std::chrono::milliseconds initial_backoff{20};
  std::chrono::milliseconds max_backoff{1000};
  std::ostream* log = &std::cerr;
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t gaps = 0;  // out-of-order drops plus connection losses
  std::size_t out_of_order = 0;
  std::size_t reconnects = 0;
  std::size_t protocol_violations = 0;
  bool completed = false;  // end-of-stream marker received
};

// Reads the JSONL depth protocol from `ep` and appends normalized snapshots
// to `sink` in arrival order. A reader thread fills a bounded queue that the
// calling thread drains. Snapshots sharing a timestamp collapse to the last
// one; earlier timestamps are dropped and counted as gaps.
inline IngestReport collect_stream(const Endpoint& ep, const std::function<void(const LobSnapshot&)>& sink,
                                   const CollectOptions& opt = {}) {
  struct Event {
    enum Kind { line, disconnect } kind;
    std::string text;
  };
  BoundedQueue<Event> queue(opt.queue_capacity);
  std::atomic<bool> ever_connected{false};

  std::thread reader([&] {
    std::size_t failures = 0;
    auto backoff = opt.initial_backoff;
    bool done = false;
    while (!done) {
      auto sock = detail::connect_tcp(ep);
      if (!sock.valid()) {
        if (++failures > opt.max_retries) break;
        std::this_thread::sleep_for(backoff);
        backoff = std::min(backoff * 2, opt.max_backoff);
        continue;
      }
      ever_connected = true;
      failures = 0;
      backoff = opt.initial_backoff;
      std::string buffer;
      char chunk[8192];
      while (!done) {
        auto n = ::recv(sock.fd(), chunk, sizeof(chunk), 0);
        if (n <= 0) break;
        buffer.append(chunk, static_cast<std::size_t>(n));
        std::size_t start = 0;
        for (auto nl = buffer.find('\n'); nl != std::string::npos; nl = buffer.find('\n', start)) {
          std::string text = buffer.substr(start, nl - start);
          start = nl + 1;
          if (!text.empty() && text.back() == '\r') text.pop_back();
          if (text == kEndOfStream) {
            done = true;
            break;
          }
          queue.push({Event::line, std::move(text)});
        }
        buffer.erase(0, start);
      }
      if (!done) {
        // A trailing partial line is a protocol violation, not data.
        if (!buffer.empty()) queue.push({Event::line, std::move(buffer)});
        queue.push({Event::disconnect, {}});
        if (++failures > opt.max_retries) break;
        std::this_thread::sleep_for(backoff);
        backoff = std::min(backoff * 2, opt.max_backoff);
      }
    }
    if (done) queue.push({Event::disconnect, "eos"});
    queue.close();
  });

  IngestReport report;
  std::optional<LobSnapshot> held;
  auto flush = [&] {
    if (held) {
      sink(*held);
      ++report.rows;
      held.reset();
    }
  };
  std::size_t line_no = 0;
  std::exception_ptr failure;
  while (auto ev = queue.pop()) {
    if (failure) continue;  // drain so the reader can finish
    if (ev->kind == Event::disconnect) {
      if (ev->text == "eos") {
        report.completed = true;
      } else {
        ++report.gaps;
        ++report.reconnects;
      }
      continue;
    }
    ++line_no;
    std::string why;
    auto snap = try_parse_json_line(ev->text, why);
    if (!snap) {
      ++report.protocol_violations;
      if (opt.log) *opt.log << "collect_stream: skipping message " << line_no << ": " << why << '\n';
      continue;
    }
    if (held && snap->ts < held->ts) {
      ++report.out_of_order;
      ++report.gaps;
      continue;
    }
    try {
      if (held && snap->ts > held->ts) flush();
    } catch (...) {
      failure = std::current_exception();
    }
    held = *snap;
  }
  reader.join();
  if (failure) std::rethrow_exception(failure);
  flush();
  // The final disconnect after exhausting retries is not a gap in the data.
  if (!report.completed && report.reconnects > 0) {
    --report.reconnects;
    --report.gaps;
  }
  if (!ever_connected) throw DataError("collect_stream: cannot connect to " + ep.host + ":" + std::to_string(ep.port));
  return report;
}

}  // namespace lobforge::market
