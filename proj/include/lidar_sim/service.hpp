#pragma once

#include <atomic>
#include <cstdint>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lidar_sim/echo_select.hpp"

namespace lidar_sim {

/// Request: {"frame_id":N,"samples":[{"layer","az","sub","d","cls","inc"?,"epw"?}]}.
/// Samples are brought into canonical order and validated. Throws FormatError
/// or DataError.
DenseFrame parse_wire_request(const std::string& line, const SensorSpec& spec);
/// Response: {"frame_id":N,"points":[{"layer","az","echo","distance_m","epw_ns","cls"}]}.
std::string wire_response(const ScanFrame& frame);
ScanFrame parse_wire_response(const std::string& line);
std::string wire_request(const DenseFrame& frame);

/// One request line in, one response line out (no trailing newline). Never
/// throws; failures become {"frame_id":null,"error":"..."}.
std::string handle_request_line(const std::string& line, const SensorModel& model,
                                const SelectionConfig& config);

/// Newline-delimited JSON over TCP, one thread per connection. The model is
/// shared read-only.
class WireServer {
 public:
  /// Binds and listens; port 0 picks an ephemeral port. Throws
  /// std::system_error when the socket cannot be bound.
  WireServer(const SensorModel& model, SelectionConfig config, int port);
  ~WireServer();
  WireServer(const WireServer&) = delete;
  WireServer& operator=(const WireServer&) = delete;

  int port() const { return port_; }
  /// Blocks until stop() is called, then closes all connections.
  void run();
  /// Async-signal-safe.
  void stop() noexcept;

 private:
  void serve_connection(int fd);

  const SensorModel& model_;
  SelectionConfig config_;
  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  int port_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex mutex_;
  std::vector<int> client_fds_;
  std::vector<std::thread> workers_;
};

/// Blocking line client, mainly for tests and replay tools.
class WireClient {
 public:
  WireClient(const std::string& host, int port);
  ~WireClient();
  WireClient(const WireClient&) = delete;
  WireClient& operator=(const WireClient&) = delete;

  /// Sends one line and waits for one response line.
  std::string request(const std::string& line);

 private:
  int fd_ = -1;
  std::string buffer_;
};

}  // namespace lidar_sim
