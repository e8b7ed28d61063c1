#include "dgform/service.hpp"

#include "dgform/error.hpp"
#include "dgform/io.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstring>
#include <thread>

namespace dgform {

using nlohmann::json;

namespace {

constexpr std::size_t kEventTail = 10;
constexpr auto kIdleWait = std::chrono::milliseconds(5);

json vec3(const Eigen::Vector3d& p) { return json::array({p.x(), p.y(), p.z()}); }

void set_nonblocking(int fd) {
  const int flags = fcntl(fd, F_GETFL, 0);
  fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

Point3 point_from(const json& j, const char* what) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kInvalidInput, std::string(what) + " must be [x, y, z]");
  Point3 p(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
  if (!p.allFinite()) throw Error(ErrorCode::kInvalidInput, std::string(what) + " is not finite");
  return p;
}

json ack(bool accepted, const std::string& reason) { return {{"accepted", accepted}, {"reason", reason}}; }

}  // namespace

std::string encode_frame(const json& message) {
  const std::string body = message.dump();
  if (body.size() > kMaxFrameBytes) throw Error(ErrorCode::kInvalidInput, "message too large");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out(4, '\0');
  out[0] = static_cast<char>((n >> 24) & 0xff);
  out[1] = static_cast<char>((n >> 16) & 0xff);
  out[2] = static_cast<char>((n >> 8) & 0xff);
  out[3] = static_cast<char>(n & 0xff);
  return out + body;
}

std::optional<json> decode_frame(std::string& buf) {
  if (buf.size() < 4) return std::nullopt;
  const auto* b = reinterpret_cast<const unsigned char*>(buf.data());
  const std::uint32_t n = (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
  if (n > kMaxFrameBytes) throw Error(ErrorCode::kInvalidInput, "frame of " + std::to_string(n) + " bytes is too large");
  if (buf.size() < 4 + std::size_t{n}) return std::nullopt;
  const std::string body = buf.substr(4, n);
  buf.erase(0, 4 + std::size_t{n});
  return parse_json(body, "frame");
}

SimService::SimService(Scenario scenario, ServiceConfig config)
    : scenario_(std::move(scenario)), config_(std::move(config)) {
  if (config_.decimation < 1) throw Error(ErrorCode::kInvalidConfig, "decimation must be at least 1");
  if (!(config_.rate > 0.0)) throw Error(ErrorCode::kInvalidConfig, "rate must be positive");
  sim_ = std::make_unique<Simulator>(scenario_);
  rate_ = config_.rate;
  playing_ = config_.start_playing;
  if (pipe(wake_pipe_) != 0) throw Error(ErrorCode::kIo, std::strerror(errno));
  set_nonblocking(wake_pipe_[0]);
  set_nonblocking(wake_pipe_[1]);
}

SimService::~SimService() {
  for (auto& [id, c] : clients_) close(c.fd);
  if (listen_fd_ >= 0) close(listen_fd_);
  close(wake_pipe_[0]);
  close(wake_pipe_[1]);
}

void SimService::bind() {
  listen_fd_ = socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error(ErrorCode::kIo, std::strerror(errno));
  const int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(config_.port));
  if (inet_pton(AF_INET, config_.host.c_str(), &addr.sin_addr) != 1) {
    throw Error(ErrorCode::kIo, "bad host address " + config_.host);
  }
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || listen(listen_fd_, 16) != 0) {
    const std::string why = std::strerror(errno);
    close(listen_fd_);
    listen_fd_ = -1;
    throw Error(ErrorCode::kIo, "cannot listen on " + config_.host + ":" + std::to_string(config_.port) + ": " + why);
  }
  socklen_t len = sizeof addr;
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  set_nonblocking(listen_fd_);
}

void SimService::request_stop() {
  stop_ = true;
  wake();
}

void SimService::wake() {
  const char c = 1;
  [[maybe_unused]] const auto n = write(wake_pipe_[1], &c, 1);
}

json SimService::snapshot(bool heartbeat) const {
  const Simulator& s = *sim_;
  const auto desired = s.desired_positions();
  json agents = json::array();
  std::vector<Point3> positions;
  for (std::size_t i = 0; i < s.agents().size(); ++i) {
    const AgentState& a = s.agents()[i];
    positions.push_back(a.position);
    agents.push_back({{"id", a.id},
                      {"position", vec3(a.position)},
                      {"velocity", vec3(a.velocity)},
                      {"target", std::isnan(desired[i].x()) ? json(nullptr) : vec3(desired[i])}});
  }
  const DvsState d = s.dvs_state();
  json boxes = json::array();
  for (const auto& b : s.scenario().boxes) boxes.push_back({{"min", vec3(b.min)}, {"max", vec3(b.max)}});
  json events = json::array();
  const auto& log = s.log().events;
  for (std::size_t k = log.size() > kEventTail ? log.size() - kEventTail : 0; k < log.size(); ++k) {
    events.push_back({{"time", log[k].time},
                      {"kind", to_string(log[k].kind)},
                      {"accepted", log[k].accepted},
                      {"reason", log[k].reason},
                      {"roster_before", log[k].roster_before},
                      {"roster_after", log[k].roster_after}});
  }
  const double min_pair = min_pair_distance(positions);
  return {{"tick", s.tick()},
          {"clock", s.clock()},
          {"paused", !playing_},
          {"heartbeat", heartbeat},
          {"rate", rate_},
          {"agents", agents},
          {"dvs", {{"position", vec3(d.position)}, {"radius", d.radius}, {"alpha", d.alpha}}},
          {"goal", vec3(s.goal())},
          {"l_s", s.plan().l_s},
          {"e_dist", s.e_dist()},
          {"min_pair", std::isfinite(min_pair) ? json(min_pair) : json(nullptr)},
          {"boxes", boxes},
          {"events", events}};
}

void SimService::send_to(int id, const std::string& type, json payload, bool droppable) {
  {
    std::lock_guard<std::mutex> lock(clients_mutex_);
    auto it = clients_.find(id);
    if (it == clients_.end()) return;
    Client& c = it->second;
    json msg{{"v", kProtocolVersion}, {"type", type}, {"seq", c.seq++}, {"payload", std::move(payload)}};
    if (droppable && c.outbox.size() >= config_.max_queue) {
      // Drop the oldest snapshot that has not started going out.
      for (auto q = c.outbox.begin() + (c.written > 0 ? 1 : 0); q != c.outbox.end(); ++q) {
        if (q->droppable) {
          c.outbox.erase(q);
          break;
        }
      }
    }
    c.outbox.push_back({encode_frame(msg), droppable});
  }
  wake();
}

void SimService::broadcast(const std::string& type, const json& payload) {
  std::vector<int> ids;
  {
    std::lock_guard<std::mutex> lock(clients_mutex_);
    for (const auto& [id, c] : clients_) ids.push_back(id);
  }
  for (int id : ids) send_to(id, type, payload, true);
}

json SimService::handle_command(const json& payload) {
  if (!payload.is_object() || !payload.contains("kind") || !payload.at("kind").is_string()) {
    return ack(false, "command needs a kind");
  }
  const std::string kind = payload.at("kind");
  try {
    if (kind == "play") {
      playing_ = true;
      return ack(true, "");
    }
    if (kind == "pause") {
      playing_ = false;
      return ack(true, "");
    }
    if (kind == "status") {
      json a = ack(true, "");
      a["snapshot"] = snapshot(false);
      return a;
    }
    if (kind == "set_rate") {
      const double r = payload.at("rate").get<double>();
      if (!(r > 0.0) || r > 1000.0) return ack(false, "rate must be in (0, 1000]");
      rate_ = r;
      return ack(true, "");
    }
    if (kind == "step") {
      const int n = payload.value("ticks", 1);
      if (n < 1) return ack(false, "ticks must be positive");
      for (int k = 0; k < n; ++k) {
        sim_->step();
        if (sim_->tick() % config_.decimation == 0) broadcast("snapshot", snapshot(false));
      }
      return ack(true, "");
    }
    if (kind == "join") {
      SimEvent ev;
      ev.kind = EventKind::kJoin;
      for (const auto& p : payload.at("positions")) ev.positions.push_back(point_from(p, "join position"));
      const CommandAck a = sim_->apply_event(ev);
      return ack(a.accepted, a.reason);
    }
    if (kind == "leave") {
      SimEvent ev;
      ev.kind = EventKind::kLeave;
      ev.ids = payload.at("ids").get<std::vector<int>>();
      const CommandAck a = sim_->apply_event(ev);
      return ack(a.accepted, a.reason);
    }
    if (kind == "set_goal") {
      SimEvent ev;
      ev.kind = EventKind::kGoal;
      ev.point = point_from(payload.at("point"), "goal");
      const CommandAck a = sim_->apply_event(ev);
      return ack(a.accepted, a.reason);
    }
    if (kind == "place_gap") {
      const double width = payload.at("width").get<double>();
      const double thickness = payload.value("thickness", 0.5);
      const json& pose = payload.at("pose");
      const Point3 center = point_from(pose.at("position"), "gap position");
      const double yaw = pose.value("yaw", 0.0);
      // Boxes are axis-aligned, so only quarter-turn orientations are representable.
      const double quarter = yaw / (0.5 * M_PI);
      if (std::abs(quarter - std::round(quarter)) > 1e-6) return ack(false, "gap yaw must be a multiple of 90 degrees");
      const bool across_y = static_cast<long>(std::lround(quarter)) % 2 == 0;
      const CommandAck a =
          sim_->add_boxes(gap_walls(center, width, thickness, sim_->scenario().bounds, across_y));
      return ack(a.accepted, a.reason);
    }
    if (kind == "reset") {
      Scenario next = scenario_;
      if (payload.contains("scenario")) {
        const json& sc = payload.at("scenario");
        next = sc.is_string() ? load_scenario(config_.scenario_dir / sc.get<std::string>())
                              : scenario_from_json(sc, config_.scenario_dir);
      }
      sim_ = std::make_unique<Simulator>(next);
      scenario_ = std::move(next);
      playing_ = false;
      return ack(true, "");
    }
  } catch (const Error& e) {
    return ack(false, e.what());
  } catch (const json::exception& e) {
    return ack(false, std::string("malformed payload: ") + e.what());
  }
  return ack(false, "unknown command kind " + kind);
}

void SimService::run() {
  if (listen_fd_ < 0) bind();
  std::thread net([this] { network_loop(); });

  using clock = std::chrono::steady_clock;
  auto next_tick = clock::now();
  auto last_heartbeat = clock::now();
  while (!stop_) {
    std::deque<PendingCommand> batch;
    {
      std::lock_guard<std::mutex> lock(commands_mutex_);
      batch.swap(commands_);
    }
    for (auto& cmd : batch) {
      const json& m = cmd.message;
      const json seq = m.contains("seq") ? m.at("seq") : json(nullptr);
      json reply = handle_command(m.contains("payload") ? m.at("payload") : json(nullptr));
      reply["command_seq"] = seq;
      send_to(cmd.client, "ack", std::move(reply), false);
    }

    const auto now = clock::now();
    if (playing_) {
      if (now >= next_tick) {
        sim_->step();
        if (sim_->tick() % config_.decimation == 0) broadcast("snapshot", snapshot(false));
        const auto period = std::chrono::duration_cast<clock::duration>(
            std::chrono::duration<double>(sim_->scenario().config.dt / rate_));
        // Slow planning ticks delay the schedule instead of bursting to catch up.
        next_tick = std::max(next_tick + period, now);
        last_heartbeat = now;
      } else {
        std::this_thread::sleep_for(std::min<clock::duration>(next_tick - now, kIdleWait));
      }
    } else {
      next_tick = now;
      if (now - last_heartbeat >= std::chrono::duration<double>(config_.heartbeat_period)) {
        broadcast("snapshot", snapshot(true));
        last_heartbeat = now;
      }
      std::this_thread::sleep_for(kIdleWait);
    }
  }
  wake();
  net.join();
}

void SimService::accept_client() {
  for (;;) {
    const int fd = accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) return;
    set_nonblocking(fd);
    const int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    std::lock_guard<std::mutex> lock(clients_mutex_);
    Client c;
    c.fd = fd;
    clients_[next_client_++] = std::move(c);
  }
}

bool SimService::read_client(int id, Client& c) {
  char buf[65536];
  for (;;) {
    const ssize_t n = recv(c.fd, buf, sizeof buf, 0);
    if (n == 0) return false;
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK) break;
      if (errno == EINTR) continue;
      return false;
    }
    c.inbox.append(buf, static_cast<std::size_t>(n));
  }
  for (;;) {
    std::optional<json> msg;
    try {
      msg = decode_frame(c.inbox);
    } catch (const Error& e) {
      json err{{"v", kProtocolVersion}, {"type", "error"}, {"seq", c.seq++}, {"payload", {{"message", e.what()}}}};
      c.outbox.push_back({encode_frame(err), false});
      // An oversized length prefix leaves the stream unrecoverable.
      if (c.inbox.size() >= 4 && std::string(e.what()).find("too large") != std::string::npos) {
        c.inbox.clear();
        c.closing = true;
      }
      continue;
    }
    if (!msg) break;
    std::string problem;
    if (!msg->is_object()) {
      problem = "message must be an object";
    } else if (msg->value("v", 0) != kProtocolVersion) {
      problem = "unsupported protocol version";
    } else if (msg->value("type", "") != "command") {
      problem = "clients may only send command messages";
    }
    if (!problem.empty()) {
      json err{{"v", kProtocolVersion}, {"type", "error"}, {"seq", c.seq++}, {"payload", {{"message", problem}}}};
      c.outbox.push_back({encode_frame(err), false});
      continue;
    }
    std::lock_guard<std::mutex> lock(commands_mutex_);
    commands_.push_back({id, std::move(*msg)});
  }
  return true;
}

bool SimService::flush_client(Client& c) {
  while (!c.outbox.empty()) {
    const std::string& bytes = c.outbox.front().bytes;
    const ssize_t n = send(c.fd, bytes.data() + c.written, bytes.size() - c.written, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK) return true;
      if (errno == EINTR) continue;
      return false;
    }
    c.written += static_cast<std::size_t>(n);
    if (c.written == bytes.size()) {
      c.outbox.pop_front();
      c.written = 0;
    }
  }
  return !c.closing;
}

void SimService::network_loop() {
  while (!stop_) {
    std::vector<pollfd> fds;
    std::vector<int> ids;
    fds.push_back({wake_pipe_[0], POLLIN, 0});
    fds.push_back({listen_fd_, POLLIN, 0});
    {
      std::lock_guard<std::mutex> lock(clients_mutex_);
      for (const auto& [id, c] : clients_) {
        fds.push_back({c.fd, static_cast<short>(POLLIN | (c.outbox.empty() ? 0 : POLLOUT)), 0});
        ids.push_back(id);
      }
    }
    if (poll(fds.data(), fds.size(), 100) < 0 && errno != EINTR) break;
    if (fds[0].revents & POLLIN) {
      char drain[256];
      while (read(wake_pipe_[0], drain, sizeof drain) > 0) {
      }
    }
    if (fds[1].revents & POLLIN) accept_client();

    std::lock_guard<std::mutex> lock(clients_mutex_);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      auto it = clients_.find(ids[k]);
      if (it == clients_.end()) continue;
      Client& c = it->second;
      bool alive = true;
      const short ev = fds[k + 2].revents;
      if (ev & (POLLERR | POLLNVAL)) alive = false;
      if (alive && (ev & (POLLIN | POLLHUP))) alive = read_client(ids[k], c);
      // Always try to flush: a wake may have queued output since the poll set was built.
      if (alive && !c.outbox.empty()) alive = flush_client(c);
      if (!alive) {
        close(c.fd);
        clients_.erase(it);
      }
    }
  }
  // Best-effort final flush so acks for the last commands are not lost.
  std::lock_guard<std::mutex> lock(clients_mutex_);
  for (auto& [id, c] : clients_) flush_client(c);
}

}  // namespace dgform
