#include "dgform/service.hpp"

#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = DGFORM_SOURCE_DIR;

struct Child {
  pid_t pid = -1;
  int out = -1;  // stdout and stderr, merged
};

Child spawn(const std::vector<std::string>& args) {
  int pipe_fd[2];
  REQUIRE(pipe(pipe_fd) == 0);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    dup2(pipe_fd[1], 1);
    dup2(pipe_fd[1], 2);
    close(pipe_fd[0]);
    close(pipe_fd[1]);
    std::vector<char*> argv;
    std::string exe = DGFORM_CLI;
    argv.push_back(exe.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    argv.push_back(nullptr);
    execv(exe.c_str(), argv.data());
    _exit(127);
  }
  close(pipe_fd[1]);
  return {pid, pipe_fd[0]};
}

std::string read_line(int fd) {
  std::string line;
  char ch;
  while (read(fd, &ch, 1) == 1 && ch != '\n') line.push_back(ch);
  return line;
}

std::string read_all(int fd) {
  std::string s;
  char buf[4096];
  ssize_t n;
  while ((n = read(fd, buf, sizeof buf)) > 0) s.append(buf, static_cast<std::size_t>(n));
  return s;
}

int wait_exit(const Child& c) {
  int status = 0;
  waitpid(c.pid, &status, 0);
  close(c.out);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::pair<int, std::string> run_cli(const std::vector<std::string>& args) {
  Child c = spawn(args);
  std::string text = read_all(c.out);
  return {wait_exit(c), text};
}

int connect_to(int port) {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  return fd;
}

json roundtrip(int fd, const json& payload) {
  const std::string frame =
      dgform::encode_frame({{"v", dgform::kProtocolVersion}, {"type", "command"}, {"seq", 1}, {"payload", payload}});
  REQUIRE(send(fd, frame.data(), frame.size(), MSG_NOSIGNAL) == static_cast<ssize_t>(frame.size()));
  std::string buf;
  for (;;) {
    if (auto m = dgform::decode_frame(buf)) {
      if ((*m)["type"] == "ack") return (*m)["payload"];
      continue;
    }
    char tmp[4096];
    const ssize_t n = recv(fd, tmp, sizeof tmp, 0);
    REQUIRE(n > 0);
    buf.append(tmp, static_cast<std::size_t>(n));
  }
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dgform_cli_" + name + "_" + std::to_string(getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("run on the hover scenario exits 0 and writes logs") {
  const fs::path out = scratch("run");
  const auto [code, text] = run_cli({"run", "--scenario", (kRoot / "scenarios/hover.json").string(), "--out",
                                     out.string(), "--repeat", "2", "--quiet"});
  CHECK(code == 0);
  CHECK(text.find("scenario,mode,runs,success_rate") != std::string::npos);
  CHECK(fs::exists(out / "hover_seed0" / "ticks.csv"));
  CHECK(fs::exists(out / "hover_seed1" / "summary.json"));
  fs::remove_all(out);
}

TEST_CASE("a scenario with a syntax error exits 2 with line and column") {
  const auto [code, text] = run_cli({"run", "--scenario", (kRoot / "tests/data/bad_syntax.json").string()});
  CHECK(code == 2);
  CHECK(text.find("line 5") != std::string::npos);
  CHECK(text.find("column") != std::string::npos);
}

TEST_CASE("paas-only prints the plan and its timing") {
  const auto [code, text] =
      run_cli({"run", "--scenario", (kRoot / "scenarios/hover.json").string(), "--mode", "paas-only"});
  CHECK(code == 0);
  CHECK(text.find("\"seconds\"") != std::string::npos);
  CHECK(text.find("\"assignment\"") != std::string::npos);
}

TEST_CASE("serve starts paused at clock 0 and flushes its log on SIGTERM") {
  const fs::path out = scratch("serve");
  Child c = spawn({"serve", "--scenario", (kRoot / "scenarios/hover.json").string(), "--port", "0", "--out",
                   out.string()});
  const std::string banner = read_line(c.out);
  REQUIRE(banner.rfind("listening on port ", 0) == 0);
  const int port = std::stoi(banner.substr(18));

  const int fd = connect_to(port);
  json a = roundtrip(fd, {{"kind", "status"}});
  CHECK(a["snapshot"]["clock"] == 0.0);
  CHECK(a["snapshot"]["paused"] == true);
  a = roundtrip(fd, {{"kind", "step"}, {"ticks", 25}});
  CHECK(a["accepted"] == true);
  close(fd);

  kill(c.pid, SIGTERM);
  CHECK(wait_exit(c) == 0);
  std::ifstream ticks(out / "ticks.csv");
  REQUIRE(ticks.good());
  int rows = 0;
  for (std::string line; std::getline(ticks, line);) ++rows;
  CHECK(rows == 26);
  CHECK(fs::exists(out / "summary.json"));
  fs::remove_all(out);
}

TEST_CASE("serve exits 3 when the port is taken") {
  const int fd = socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = 0;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  REQUIRE(bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  REQUIRE(listen(fd, 1) == 0);
  socklen_t len = sizeof addr;
  getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  const int port = ntohs(addr.sin_port);

  const auto [code, text] =
      run_cli({"serve", "--scenario", (kRoot / "scenarios/hover.json").string(), "--port", std::to_string(port)});
  CHECK(code == 3);
  close(fd);
}

TEST_CASE("bench-paas prints a timing table") {
  const auto [code, text] = run_cli({"bench-paas", "--shape", (kRoot / "shapes/square.json").string(), "--n", "10",
                                     "--n", "20", "--repeat", "2"});
  CHECK(code == 0);
  CHECK(text.find("shape,n,repeats,mean_s,max_s") != std::string::npos);
}
