#include "lidar_sim/service.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <nlohmann/json.hpp>
#include <system_error>

#include "lidar_sim/error.hpp"

namespace lidar_sim {
namespace {

using ordered_json = nlohmann::ordered_json;

constexpr std::size_t kMaxLineBytes = std::size_t{1} << 28;

std::system_error sys_error(const char* what) { return {errno, std::generic_category(), what}; }

bool send_all(int fd, const std::string& data) {
  std::size_t sent = 0;
  while (sent < data.size()) {
    const ssize_t n = ::send(fd, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

}  // namespace

DenseFrame parse_wire_request(const std::string& line, const SensorSpec& spec) {
  DenseFrame frame;
  try {
    const auto j = nlohmann::json::parse(line);
    frame.frame_id = j.at("frame_id").get<std::uint64_t>();
    for (const auto& js : j.at("samples")) {
      DenseSample s;
      s.layer = js.at("layer").get<int>();
      s.azimuth_index = js.at("az").get<int>();
      s.sub_ray = js.at("sub").get<int>();
      s.distance = js.at("d").get<double>();
      s.cls = class_from_code(js.at("cls").get<long long>());
      s.incidence_cos = js.value("inc", 1.0);
      s.true_epw = js.value("epw", 0.0);
      frame.samples.push_back(s);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("wire request: ") + e.what());
  }
  sort_canonical(frame);
  validate(frame, spec);
  return frame;
}

std::string wire_request(const DenseFrame& frame) {
  ordered_json j;
  j["frame_id"] = frame.frame_id;
  auto samples = ordered_json::array();
  for (const auto& s : frame.samples) {
    ordered_json js;
    js["layer"] = s.layer;
    js["az"] = s.azimuth_index;
    js["sub"] = s.sub_ray;
    js["d"] = s.distance;
    js["cls"] = class_code(s.cls);
    js["inc"] = s.incidence_cos;
    js["epw"] = s.true_epw;
    samples.push_back(std::move(js));
  }
  j["samples"] = std::move(samples);
  return j.dump();
}

std::string wire_response(const ScanFrame& frame) {
  ordered_json j;
  j["frame_id"] = frame.frame_id;
  auto points = ordered_json::array();
  for (const auto& p : frame.points) {
    ordered_json jp;
    jp["layer"] = p.layer;
    jp["az"] = p.azimuth_index;
    jp["echo"] = p.echo;
    jp["distance_m"] = p.distance;
    jp["epw_ns"] = p.epw;
    jp["cls"] = class_code(p.cls);
    points.push_back(std::move(jp));
  }
  j["points"] = std::move(points);
  return j.dump();
}

ScanFrame parse_wire_response(const std::string& line) {
  ScanFrame frame;
  try {
    const auto j = nlohmann::json::parse(line);
    if (j.contains("error")) throw DataError("wire response: " + j.at("error").get<std::string>());
    frame.frame_id = j.at("frame_id").get<std::uint64_t>();
    for (const auto& jp : j.at("points")) {
      ScanPoint p;
      p.layer = jp.at("layer").get<int>();
      p.azimuth_index = jp.at("az").get<int>();
      p.echo = jp.at("echo").get<int>();
      p.distance = jp.at("distance_m").get<double>();
      p.epw = jp.at("epw_ns").get<double>();
      p.cls = class_from_code(jp.at("cls").get<long long>());
      frame.points.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("wire response: ") + e.what());
  }
  return frame;
}

std::string handle_request_line(const std::string& line, const SensorModel& model,
                                const SelectionConfig& config) {
  try {
    const DenseFrame frame = parse_wire_request(line, model.spec);
    return wire_response(apply_model(frame, model, config));
  } catch (const std::exception& e) {
    ordered_json j;
    j["frame_id"] = nullptr;
    j["error"] = e.what();
    return j.dump();
  }
}

WireServer::WireServer(const SensorModel& model, SelectionConfig config, int port)
    : model_(model), config_(config) {
  if (::pipe(wake_pipe_) != 0) throw sys_error("pipe");
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw sys_error("socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_ANY);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (port < 0 || port > 65535 || ::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
    auto err = sys_error("bind");
    ::close(listen_fd_);
    ::close(wake_pipe_[0]);
    ::close(wake_pipe_[1]);
    throw err;
  }
  if (::listen(listen_fd_, 16) != 0) throw sys_error("listen");
  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

WireServer::~WireServer() {
  stop();
  for (auto& t : workers_)
    if (t.joinable()) t.join();
  if (listen_fd_ >= 0) ::close(listen_fd_);
  ::close(wake_pipe_[0]);
  ::close(wake_pipe_[1]);
}

void WireServer::stop() noexcept {
  stopping_.store(true);
  const char c = 'x';
  [[maybe_unused]] auto n = ::write(wake_pipe_[1], &c, 1);
}

void WireServer::run() {
  while (!stopping_.load()) {
    pollfd fds[2] = {{listen_fd_, POLLIN, 0}, {wake_pipe_[0], POLLIN, 0}};
    if (::poll(fds, 2, -1) < 0) {
      if (errno == EINTR) continue;
      throw sys_error("poll");
    }
    if (fds[1].revents != 0 || stopping_.load()) break;
    if (fds[0].revents & POLLIN) {
      const int fd = ::accept(listen_fd_, nullptr, nullptr);
      if (fd < 0) continue;
      std::lock_guard lock(mutex_);
      client_fds_.push_back(fd);
      workers_.emplace_back([this, fd] { serve_connection(fd); });
    }
  }
  {
    std::lock_guard lock(mutex_);
    for (int fd : client_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& t : workers_)
    if (t.joinable()) t.join();
  workers_.clear();
}

void WireServer::serve_connection(int fd) {
  std::string buffer;
  char chunk[65536];
  while (!stopping_.load()) {
    const ssize_t n = ::recv(fd, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) break;
    buffer.append(chunk, static_cast<std::size_t>(n));
    std::size_t start = 0, nl;
    bool ok = true;
    while (ok && (nl = buffer.find('\n', start)) != std::string::npos) {
      std::string line = buffer.substr(start, nl - start);
      if (!line.empty() && line.back() == '\r') line.pop_back();
      start = nl + 1;
      if (line.empty()) continue;
      ok = send_all(fd, handle_request_line(line, model_, config_) + "\n");
    }
    buffer.erase(0, start);
    if (!ok) break;
    if (buffer.size() > kMaxLineBytes) {
      send_all(fd, R"({"frame_id":null,"error":"request line too long"})" "\n");
      break;
    }
  }
  std::lock_guard lock(mutex_);
  std::erase(client_fds_, fd);
  ::close(fd);
}

WireClient::WireClient(const std::string& host, int port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || res == nullptr) {
    throw std::system_error(EHOSTUNREACH, std::generic_category(), "getaddrinfo");
  }
  fd_ = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  const int rc = fd_ < 0 ? -1 : ::connect(fd_, res->ai_addr, res->ai_addrlen);
  ::freeaddrinfo(res);
  if (rc != 0) {
    auto err = sys_error("connect");
    if (fd_ >= 0) ::close(fd_);
    throw err;
  }
}

WireClient::~WireClient() {
  if (fd_ >= 0) ::close(fd_);
}

std::string WireClient::request(const std::string& line) {
  if (!send_all(fd_, line + "\n")) throw sys_error("send");
  char chunk[65536];
  std::size_t nl;
  while ((nl = buffer_.find('\n')) == std::string::npos) {
    const ssize_t n = ::recv(fd_, chunk, sizeof chunk, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw std::system_error(ECONNRESET, std::generic_category(), "connection closed");
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  std::string out = buffer_.substr(0, nl);
  buffer_.erase(0, nl + 1);
  return out;
}

}  // namespace lidar_sim
