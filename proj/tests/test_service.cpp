#include "dgform/error.hpp"
#include "dgform/io.hpp"
#include "dgform/service.hpp"

#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <thread>

using namespace dgform;
using nlohmann::json;

namespace {

Scenario hover() { return load_scenario(std::string(DGFORM_SOURCE_DIR) + "/scenarios/hover.json"); }

// Minimal blocking client speaking the framed protocol.
class TestClient {
 public:
  explicit TestClient(int port) {
    fd_ = socket(AF_INET, SOCK_STREAM, 0);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    REQUIRE(connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
    timeval tv{0, 100000};
    setsockopt(fd_, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  }
  ~TestClient() { close(fd_); }

  void send_raw(const std::string& bytes) {
    REQUIRE(::send(fd_, bytes.data(), bytes.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(bytes.size()));
  }

  void command(json payload) {
    send_raw(encode_frame({{"v", kProtocolVersion}, {"type", "command"}, {"seq", next_seq_++}, {"payload", payload}}));
  }

  // Next message of any type, or null after the deadline.
  json next(double timeout_s = 5.0) {
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    for (;;) {
      if (auto m = decode_frame(buf_)) return *m;
      if (std::chrono::steady_clock::now() > deadline) return nullptr;
      char tmp[65536];
      const ssize_t n = recv(fd_, tmp, sizeof tmp, 0);
      if (n > 0) buf_.append(tmp, static_cast<std::size_t>(n));
      if (n == 0) return nullptr;
    }
  }

  // Collects snapshots until the ack for the most recent command; returns the ack.
  json ack(std::vector<json>* snapshots = nullptr, double timeout_s = 30.0) {
    for (;;) {
      json m = next(timeout_s);
      if (m.is_null()) return m;
      if (m["type"] == "ack" && m["payload"]["command_seq"] == next_seq_ - 1) return m["payload"];
      if (m["type"] == "snapshot" && snapshots) snapshots->push_back(m["payload"]);
    }
  }

  json request(json payload, std::vector<json>* snapshots = nullptr) {
    command(std::move(payload));
    return ack(snapshots);
  }

 private:
  int fd_ = -1;
  std::string buf_;
  int next_seq_ = 1;
};

struct Running {
  SimService service;
  std::thread thread;

  Running(Scenario sc, ServiceConfig cfg) : service(std::move(sc), [&] {
    cfg.port = 0;
    return cfg;
  }()) {
    service.bind();
    thread = std::thread([this] { service.run(); });
  }
  ~Running() { stop(); }
  void stop() {
    if (thread.joinable()) {
      service.request_stop();
      thread.join();
    }
  }
};

ServiceConfig quiet() {
  ServiceConfig c;
  c.heartbeat_period = 1e6;
  return c;
}

}  // namespace

TEST_CASE("frames round trip and reject garbage") {
  const json m{{"v", 1}, {"type", "command"}, {"payload", {{"kind", "status"}}}};
  std::string wire = encode_frame(m) + encode_frame({{"x", 2}});
  CHECK(wire.size() > 8);
  CHECK(static_cast<unsigned char>(wire[0]) == 0);
  const auto first = decode_frame(wire);
  REQUIRE(first.has_value());
  CHECK(*first == m);
  std::string partial = wire.substr(0, wire.size() - 1);
  CHECK_FALSE(decode_frame(partial).has_value());
  CHECK(decode_frame(wire).value() == json{{"x", 2}});
  CHECK(wire.empty());

  std::string huge("\x7f\xff\xff\xff", 4);
  CHECK_THROWS_AS(decode_frame(huge), Error);
  std::string bad = std::string("\0\0\0\3", 4) + "{x}";
  CHECK_THROWS_AS(decode_frame(bad), Error);
}

TEST_CASE("status on a fresh service reports clock 0 and paused") {
  Running r(hover(), quiet());
  TestClient c(r.service.port());
  const json a = c.request({{"kind", "status"}});
  REQUIRE(a.is_object());
  CHECK(a["accepted"] == true);
  CHECK(a["snapshot"]["clock"] == 0.0);
  CHECK(a["snapshot"]["tick"] == 0);
  CHECK(a["snapshot"]["paused"] == true);
  CHECK(a["snapshot"]["agents"].size() == 4);
}

TEST_CASE("ten seconds at decimation five yield one hundred snapshots") {
  ServiceConfig cfg = quiet();
  cfg.decimation = 5;
  Running r(hover(), cfg);
  TestClient c(r.service.port());
  REQUIRE(c.request({{"kind", "set_rate"}, {"rate", 50.0}})["accepted"] == true);
  REQUIRE(c.request({{"kind", "play"}})["accepted"] == true);
  std::vector<json> snaps;
  for (;;) {
    json m = c.next(30.0);
    REQUIRE(m.is_object());
    if (m["type"] != "snapshot") continue;
    snaps.push_back(m["payload"]);
    if (m["payload"]["clock"].get<double>() >= 10.0 - 1e-9) break;
  }
  c.request({{"kind", "pause"}});
  CHECK(snaps.size() >= 99);
  CHECK(snaps.size() <= 101);
  for (std::size_t k = 1; k < snaps.size(); ++k) {
    CHECK(snaps[k]["tick"].get<int>() - snaps[k - 1]["tick"].get<int>() == 5);
  }
}

TEST_CASE("two subscribers see identical snapshot sequences") {
  Running r(hover(), quiet());
  TestClient a(r.service.port());
  TestClient b(r.service.port());
  // Both are registered once each has an ack back.
  REQUIRE(b.request({{"kind", "status"}}).is_object());
  std::vector<json> sa, sb;
  REQUIRE(a.request({{"kind", "step"}, {"ticks", 60}}, &sa)["accepted"] == true);
  REQUIRE(a.request({{"kind", "status"}})["accepted"] == true);
  REQUIRE(b.request({{"kind", "status"}}, &sb)["accepted"] == true);
  CHECK(sa.size() == 12);
  CHECK(sa == sb);
}

TEST_CASE("paused service sends heartbeats with a frozen clock") {
  ServiceConfig cfg;
  cfg.heartbeat_period = 0.05;
  Running r(hover(), cfg);
  TestClient c(r.service.port());
  c.request({{"kind", "step"}, {"ticks", 3}});
  std::vector<json> beats;
  while (beats.size() < 4) {
    json m = c.next(5.0);
    REQUIRE(m.is_object());
    if (m["type"] == "snapshot") beats.push_back(m["payload"]);
  }
  for (const auto& b : beats) {
    CHECK(b["heartbeat"] == true);
    CHECK(b["paused"] == true);
    CHECK(b["tick"] == 3);
    CHECK(b["clock"] == beats.front()["clock"]);
  }
}

TEST_CASE("roster commands") {
  Running r(hover(), quiet());
  TestClient c(r.service.port());

  json a = c.request({{"kind", "leave"}, {"ids", {42}}});
  CHECK(a["accepted"] == false);
  CHECK(a["reason"] == "unknown agent");

  a = c.request({{"kind", "join"}, {"positions", {{3.0, 3.0, 2.0}}}});
  CHECK(a["accepted"] == true);
  std::vector<json> snaps;
  c.request({{"kind", "step"}, {"ticks", 5}}, &snaps);
  REQUIRE(snaps.size() == 1);
  CHECK(snaps[0]["agents"].size() == 5);

  a = c.request({{"kind", "leave"}, {"ids", {0}}});
  CHECK(a["accepted"] == true);
  a = c.request({{"kind", "status"}});
  CHECK(a["snapshot"]["agents"].size() == 4);

  CHECK(c.request({{"kind", "set_goal"}, {"point", {1, 0, 2}}})["accepted"] == true);
  CHECK(c.request({{"kind", "set_rate"}, {"rate", 0}})["accepted"] == false);
  CHECK(c.request({{"kind", "teleport"}})["accepted"] == false);
  CHECK(c.request({{"kind", "join"}})["accepted"] == false);
}

TEST_CASE("place_gap adds two walls and validates the pose") {
  Running r(hover(), quiet());
  TestClient c(r.service.port());
  json a = c.request({{"kind", "place_gap"}, {"width", 1.6}, {"pose", {{"position", {5, 0, 2}}, {"yaw", 0.3}}}});
  CHECK(a["accepted"] == false);
  a = c.request({{"kind", "place_gap"}, {"width", 1.6}, {"pose", {{"position", {5, 0, 2}}, {"yaw", 0.0}}}});
  CHECK(a["accepted"] == true);
  a = c.request({{"kind", "status"}});
  CHECK(a["snapshot"]["boxes"].size() == 2);

  CHECK(c.request({{"kind", "reset"}})["accepted"] == true);
  CHECK(c.request({{"kind", "status"}})["snapshot"]["boxes"].size() == 0);
}

TEST_CASE("protocol violations get error messages and the connection survives") {
  Running r(hover(), quiet());
  TestClient c(r.service.port());
  c.send_raw(encode_frame({{"v", 1}, {"type", "snapshot"}, {"payload", {}}}));
  json m = c.next();
  CHECK(m["type"] == "error");
  c.send_raw(encode_frame({{"v", 9}, {"type", "command"}, {"payload", {{"kind", "status"}}}}));
  m = c.next();
  CHECK(m["type"] == "error");
  CHECK(m["payload"]["message"] == "unsupported protocol version");
  c.send_raw(std::string("\0\0\0\2", 4) + "{]");
  m = c.next();
  CHECK(m["type"] == "error");
  CHECK(c.request({{"kind", "status"}})["accepted"] == true);
}

TEST_CASE("pause and play skip no tick and match a headless run") {
  ServiceConfig cfg = quiet();
  cfg.decimation = 1;
  Running r(hover(), cfg);
  TestClient c(r.service.port());
  c.request({{"kind", "set_rate"}, {"rate", 20.0}});
  std::vector<json> snaps;
  for (int round = 0; round < 3; ++round) {
    c.request({{"kind", "play"}}, &snaps);
    std::this_thread::sleep_for(std::chrono::milliseconds(150));
    c.request({{"kind", "pause"}}, &snaps);
  }
  // Drain snapshots emitted before the last pause took effect.
  const json status = c.request({{"kind", "status"}}, &snaps);
  const int ticks = status["snapshot"]["tick"];
  REQUIRE(ticks > 10);
  REQUIRE(snaps.size() == static_cast<std::size_t>(ticks));
  for (std::size_t k = 0; k < snaps.size(); ++k) CHECK(snaps[k]["tick"] == static_cast<int>(k) + 1);

  r.stop();
  Simulator headless(hover());
  while (headless.tick() < ticks) headless.step();
  CHECK(logs_identical(r.service.simulator().log(), headless.log()));
}

TEST_CASE("binding a busy port fails with an io error") {
  SimService first(hover(), [] {
    ServiceConfig c;
    c.port = 0;
    return c;
  }());
  first.bind();
  ServiceConfig cfg;
  cfg.port = first.port();
  SimService second(hover(), cfg);
  try {
    second.bind();
    FAIL("bind succeeded on a busy port");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kIo);
  }
}

TEST_CASE("unattended service produces the headless log") {
  ServiceConfig cfg = quiet();
  cfg.start_playing = true;
  cfg.rate = 1000.0;
  Running r(hover(), cfg);
  std::this_thread::sleep_for(std::chrono::milliseconds(400));
  r.stop();
  const SimLog& served = r.service.simulator().log();
  REQUIRE(served.ticks.size() > 20);
  Simulator headless(hover());
  while (headless.tick() < static_cast<int>(served.ticks.size())) headless.step();
  CHECK(logs_identical(served, headless.log()));
}
