#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <thread>

#include "savime/database.hpp"
#include "savime/protocol.hpp"

namespace savime {

namespace net {

inline bool read_exact(int fd, void* buf, size_t n) {
  char* p = static_cast<char*>(buf);
  while (n > 0) {
    ssize_t r = ::recv(fd, p, n, 0);
    if (r <= 0) return false;
    p += r;
    n -= static_cast<size_t>(r);
  }
  return true;
}

inline bool write_all(int fd, const void* buf, size_t n) {
  const char* p = static_cast<const char*>(buf);
  while (n > 0) {
    ssize_t r = ::send(fd, p, n, MSG_NOSIGNAL);
    if (r <= 0) return false;
    p += r;
    n -= static_cast<size_t>(r);
  }
  return true;
}

inline ReadStatus read_frame(int fd, Frame& out) {
  char head[5];
  if (!read_exact(fd, head, 4)) return ReadStatus::Eof;
  uint32_t length = get_u32(head);
  if (length == 0 || length > kMaxFramePayload + 1) return ReadStatus::Malformed;
  if (!read_exact(fd, head + 4, 1)) return ReadStatus::Malformed;
  uint8_t kind = static_cast<uint8_t>(head[4]);
  if (kind < 1 || kind > 6) {
    // still need to drain? the connection is abandoned on malformed input
    return ReadStatus::Malformed;
  }
  out.kind = static_cast<FrameKind>(kind);
  out.payload.resize(length - 1);
  if (length > 1 && !read_exact(fd, out.payload.data(), length - 1))
    return ReadStatus::Malformed;
  return ReadStatus::Ok;
}

inline bool send_frame(int fd, FrameKind kind, std::string_view payload) {
  std::string wire = encode_frame(kind, payload);
  return write_all(fd, wire.data(), wire.size());
}

}  // namespace net

// Accepts connections and serves one session per thread. Each session
// answers QUERY frames with RESULT_SCHEMA RESULT_BLOCK* DONE (or a single
// ERROR frame) and DATASET_PUSH frames with DONE/ERROR; the session survives
// statement errors and ends on close or malformed input.
class Server {
 public:
  Server(Database& db, std::string host, int port)
      : db_(db), host_(std::move(host)), port_(port) {}

  ~Server() { stop(); }

  void start() {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw Error(ErrorCode::BindFailure, "socket()");
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port_));
    if (::inet_pton(AF_INET, host_.c_str(), &addr.sin_addr) != 1) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(ErrorCode::BindFailure, "bad listen address " + host_);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 16) != 0) {
      ::close(listen_fd_);
      listen_fd_ = -1;
      throw Error(ErrorCode::BindFailure,
                  host_ + ":" + std::to_string(port_) + ": " + std::strerror(errno));
    }
    if (port_ == 0) {
      sockaddr_in bound{};
      socklen_t len = sizeof(bound);
      ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
      port_ = ntohs(bound.sin_port);
    }
    log_info("listening on " + host_ + ":" + std::to_string(port_));
    accept_thread_ = std::thread([this] { accept_loop(); });
  }

  void stop() {
    bool expected = false;
    if (!stopping_.compare_exchange_strong(expected, true)) return;
    if (listen_fd_ >= 0) {
      ::shutdown(listen_fd_, SHUT_RDWR);
      ::close(listen_fd_);
      listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> sessions;
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
      sessions.swap(sessions_);
    }
    for (auto& t : sessions) t.join();
  }

  int port() const { return port_; }

  void wait() {
    if (accept_thread_.joinable()) accept_thread_.join();
  }

 private:
  void accept_loop() {
    int next_session = 0;
    while (!stopping_) {
      pollfd pfd{listen_fd_, POLLIN, 0};
      int r = ::poll(&pfd, 1, 200);
      if (stopping_) break;
      if (r <= 0) continue;
      int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      int sid = next_session++;
      log_info("session opened", sid);
      std::lock_guard<std::mutex> lk(mu_);
      client_fds_.push_back(fd);
      sessions_.emplace_back([this, fd, sid] {
        try {
          session(fd, sid);
        } catch (...) {
          // sessions never take the server down
        }
        ::close(fd);
        log_info("session closed", sid);
      });
    }
  }

  void session(int fd, int sid) {
    Frame frame;
    while (!stopping_) {
      ReadStatus st = net::read_frame(fd, frame);
      if (st == ReadStatus::Eof) return;
      if (st == ReadStatus::Malformed) {
        net::send_frame(fd, FrameKind::Error, "malformed frame");
        return;
      }
      switch (frame.kind) {
        case FrameKind::Query:
          handle_query(fd, sid, frame.payload);
          break;
        case FrameKind::DatasetPush:
          handle_push(fd, sid, frame.payload);
          break;
        default:
          net::send_frame(fd, FrameKind::Error, "unexpected frame kind");
          return;
      }
    }
  }

  void handle_query(int fd, int sid, const std::string& text) {
    log_debug("query: " + text, sid);
    try {
      StatementResult r = db_.execute(text);
      json schema_json;
      if (r.is_query) {
        schema_json = wire_tardef_to_json(*r.result->schema);
      } else {
        schema_json = {{"elements", json::array()}, {"message", r.message}};
      }
      if (!net::send_frame(fd, FrameKind::ResultSchema, schema_json.dump()))
        return;
      if (r.is_query) {
        for (const auto& sub : r.result->subtars)
          for (const auto& block : subtar_to_blocks(*sub))
            if (!net::send_frame(fd, FrameKind::ResultBlock, block)) return;
      }
      net::send_frame(fd, FrameKind::Done, "");
    } catch (const std::exception& e) {
      log_warn(std::string("statement failed: ") + e.what(), sid);
      net::send_frame(fd, FrameKind::Error, e.what());
    }
  }

  void handle_push(int fd, int sid, const std::string& payload) {
    try {
      DatasetPush p = decode_dataset_push(payload);
      std::vector<std::byte> bytes(p.bytes.size());
      std::memcpy(bytes.data(), p.bytes.data(), p.bytes.size());
      db_.push_dataset(p.name, p.type, bytes);
      log_info("dataset " + p.name + " pushed (" +
                   std::to_string(p.bytes.size()) + " bytes)",
               sid);
      net::send_frame(fd, FrameKind::Done, "");
    } catch (const std::exception& e) {
      net::send_frame(fd, FrameKind::Error, e.what());
    }
  }

  Database& db_;
  std::string host_;
  int port_;
  int listen_fd_ = -1;
  std::atomic<bool> stopping_{false};
  std::thread accept_thread_;
  std::mutex mu_;
  std::vector<std::thread> sessions_;
  std::vector<int> client_fds_;
};

// Frame-protocol client used by the CLI and tests.
class Client {
 public:
  Client(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw Error(ErrorCode::IoError, "socket()");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1 ||
        ::connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
      ::close(fd_);
      throw Error(ErrorCode::IoError,
                  "cannot connect to " + host + ":" + std::to_string(port));
    }
  }

  ~Client() {
    if (fd_ >= 0) ::close(fd_);
  }

  Client(const Client&) = delete;
  Client& operator=(const Client&) = delete;

  struct RemoteResult {
    TarDefPtr schema;
    std::vector<SubTarPtr> subtars;
    std::string message;
  };

  RemoteResult execute(const std::string& text) {
    if (!net::send_frame(fd_, FrameKind::Query, text))
      throw Error(ErrorCode::IoError, "connection lost");
    RemoteResult out;
    std::optional<SubtarDecoder> decoder;
    Frame frame;
    while (true) {
      ReadStatus st = net::read_frame(fd_, frame);
      if (st != ReadStatus::Ok)
        throw Error(ErrorCode::ProtocolError, "connection lost mid-reply");
      switch (frame.kind) {
        case FrameKind::ResultSchema: {
          json j = json::parse(frame.payload);
          if (j.contains("message")) out.message = j.at("message");
          out.schema = wire_tardef_from_json(j);
          decoder.emplace(out.schema);
          break;
        }
        case FrameKind::ResultBlock: {
          if (!decoder)
            throw Error(ErrorCode::ProtocolError, "block before schema");
          if (auto sub = decoder->feed(frame.payload))
            out.subtars.push_back(sub);
          break;
        }
        case FrameKind::Done: {
          if (decoder)
            if (auto sub = decoder->flush()) out.subtars.push_back(sub);
          return out;
        }
        case FrameKind::Error:
          throw Error(ErrorCode::EvaluationError, frame.payload);
        default:
          throw Error(ErrorCode::ProtocolError, "unexpected frame kind");
      }
    }
  }

  void push_dataset(const std::string& name, ElemType type,
                    std::span<const std::byte> bytes) {
    std::string payload = encode_dataset_push(name, type, bytes);
    if (!net::send_frame(fd_, FrameKind::DatasetPush, payload))
      throw Error(ErrorCode::IoError, "connection lost");
    Frame frame;
    if (net::read_frame(fd_, frame) != ReadStatus::Ok)
      throw Error(ErrorCode::ProtocolError, "connection lost mid-reply");
    if (frame.kind == FrameKind::Error)
      throw Error(ErrorCode::EvaluationError, frame.payload);
    if (frame.kind != FrameKind::Done)
      throw Error(ErrorCode::ProtocolError, "unexpected reply");
  }

  int fd() const { return fd_; }

 private:
  int fd_ = -1;
};

}  // namespace savime
