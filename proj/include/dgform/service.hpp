#pragma once

#include "dgform/sim.hpp"

#include <json.hpp>

#include <atomic>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace dgform {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxFrameBytes = 16u << 20;

// Frame helpers shared by the server, the tests and the Python client.
std::string encode_frame(const nlohmann::json& message);
// Pops one complete frame from the front of buf. Returns nullopt when more
// bytes are needed; throws kInvalidInput for oversized frames or bad JSON.
std::optional<nlohmann::json> decode_frame(std::string& buf);

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 7878;  // 0 picks a free port
  int decimation = 5;
  double rate = 1.0;             // sim seconds per wall second
  double heartbeat_period = 0.5;  // wall seconds between snapshots while paused
  std::size_t max_queue = 256;   // per-subscriber outgoing frames before dropping snapshots
  bool start_playing = false;
  // Directory used to resolve relative shape paths in reset payloads.
  std::filesystem::path scenario_dir = ".";
};

// Hosts one Simulator behind the length-prefixed JSON protocol.
// The thread calling run() owns the simulator; a network thread moves bytes
// and hands complete commands over through a queue.
class SimService {
 public:
  SimService(Scenario scenario, ServiceConfig config);
  ~SimService();
  SimService(const SimService&) = delete;
  SimService& operator=(const SimService&) = delete;

  // Throws Error(kIo) if the address is in use.
  void bind();
  int port() const { return port_; }

  // Blocks until request_stop(). Safe to call request_stop from a signal handler.
  void run();
  void request_stop();

  // Inspect after run() has returned.
  const Simulator& simulator() const { return *sim_; }

  // Snapshot payload for the current tick; also used by status acks.
  nlohmann::json snapshot(bool heartbeat) const;

 private:
  struct Outgoing {
    std::string bytes;
    bool droppable = false;
  };
  struct Client {
    int fd = -1;
    std::string inbox;
    std::deque<Outgoing> outbox;
    std::size_t written = 0;  // bytes of outbox.front() already sent
    std::uint64_t seq = 0;
    bool closing = false;
  };
  struct PendingCommand {
    int client = 0;
    nlohmann::json message;
  };

  void network_loop();
  void accept_client();
  bool read_client(int id, Client& c);
  bool flush_client(Client& c);
  void wake();
  void send_to(int id, const std::string& type, nlohmann::json payload, bool droppable);
  void broadcast(const std::string& type, const nlohmann::json& payload);
  nlohmann::json handle_command(const nlohmann::json& payload);

  Scenario scenario_;
  ServiceConfig config_;
  std::unique_ptr<Simulator> sim_;
  bool playing_ = false;
  double rate_ = 1.0;

  int listen_fd_ = -1;
  int wake_pipe_[2] = {-1, -1};
  int port_ = 0;
  std::atomic<bool> stop_{false};

  std::mutex clients_mutex_;
  std::map<int, Client> clients_;
  int next_client_ = 1;

  std::mutex commands_mutex_;
  std::deque<PendingCommand> commands_;
};

}  // namespace dgform
