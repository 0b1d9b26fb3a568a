#pragma once

#include "respilot/pipeline.hpp"

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <memory>
#include <string>

namespace respilot {

inline constexpr int kProtocolVersion = 1;

struct ServerConfig {
    std::string host = "127.0.0.1";
    std::uint16_t port = 8765;   // 0 picks a free port
    SessionConfig session;       // defaults for new sessions
    std::size_t outbound_depth = 4;  // per-connection result queue, oldest dropped first
    std::size_t latency_window = 256;  // ticks kept for rolling latency stats
};

/// WebSocket retargeting service with an HTTP GET /health endpoint on the same port. One
/// pipeline worker thread per connection; the networking runs on a single I/O thread.
/// The wire protocol is described in docs/protocol.md.
class Server {
public:
    Server(std::shared_ptr<const RetargetContext> context, ServerConfig config);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    /// Binds and starts serving in the background. Returns the bound port. Throws Error
    /// when the address cannot be bound.
    std::uint16_t start();
    /// Closes every connection and joins all threads. Idempotent.
    void stop();
    /// Blocks until stop() is called from another thread or a signal handler.
    void wait();

    /// Identifiers, uptime and per-session rolling latency, as served on /health.
    nlohmann::json health() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace respilot
