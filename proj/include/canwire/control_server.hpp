// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "canwire/live.hpp"

namespace canwire {

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = protocol::kDefaultPort;
};

/// Accepts "host:port", ":port", "port" or "ws://host:port/control".
Endpoint parse_endpoint(const std::string& text);

/// WebSocket front end of a LiveSim at ws://host:port/control. Each text
/// message is one command; the reply goes back on the same connection and
/// telemetry is broadcast to every client.
class ControlServer {
 public:
  /// Binds immediately; throws std::system_error when the endpoint is taken.
  /// Port 0 picks a free port.
  ControlServer(LiveSim& sim, const Endpoint& endpoint);
  ~ControlServer();

  ControlServer(const ControlServer&) = delete;
  ControlServer& operator=(const ControlServer&) = delete;

  std::uint16_t port() const;
  void start();
  void stop();
  std::size_t clients() const;

  struct Impl;

 private:
  std::shared_ptr<Impl> impl_;
};

}  // namespace canwire
