#pragma once

#include <atomic>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "hspi/oracle.hpp"

namespace hspi {

// Little-endian length-prefixed frames over TCP. Payload layout:
//   magic "HSPI" | version u8 | opcode u8 | body
// Opcodes: 0x01/0x81 query, 0x02/0x82 info, 0x7f error (u32 code, u32 len,
// message). Logits travel as raw u32 FP32 bit patterns, inputs as raw f64,
// so a round trip preserves every bit. Full layout in docs/protocol.md.
namespace wire {

constexpr char kMagic[4] = {'H', 'S', 'P', 'I'};
constexpr uint8_t kVersion = 1;
constexpr uint8_t kOpQuery = 0x01;
constexpr uint8_t kOpQueryReply = 0x81;
constexpr uint8_t kOpInfo = 0x02;
constexpr uint8_t kOpInfoReply = 0x82;
constexpr uint8_t kOpError = 0x7f;
constexpr uint32_t kMaxFrame = 64u << 20;

constexpr uint32_t kErrBadRequest = 400;
constexpr uint32_t kErrBatchTooLarge = 413;
constexpr uint32_t kErrVersion = 426;
constexpr uint32_t kErrInternal = 500;

// Raw fd plumbing, exposed so protocol tests can speak the wire directly.
int connect_tcp(const std::string& host, int port);
void close_fd(int fd);
void send_frame(int fd, const std::vector<uint8_t>& payload);
// Empty result means the peer closed the connection cleanly.
std::vector<uint8_t> recv_frame(int fd);

std::vector<uint8_t> frame_header(uint8_t opcode);

}  // namespace wire

// Serves one model/profile over TCP. Connections are handled concurrently;
// requests within a connection strictly in order. Each connection gets its
// own defense RNG stream derived from the config seed.
class OracleServer {
  public:
    OracleServer(std::shared_ptr<const ServedModel> served, int port);
    ~OracleServer();

    OracleServer(const OracleServer&) = delete;
    OracleServer& operator=(const OracleServer&) = delete;

    int port() const { return port_; }
    void stop();

  private:
    void accept_loop();
    void serve_connection(int fd, uint64_t conn_seed);

    std::shared_ptr<const ServedModel> served_;
    int listen_fd_ = -1;
    int port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread accept_thread_;
    std::mutex conn_mu_;
    std::vector<std::thread> conn_threads_;
    std::vector<int> conn_fds_;  // live connections, shut down on stop()
    uint64_t next_conn_ = 0;
};

// Network client satisfying the same contract as LocalOracle.
class RemoteOracle : public Oracle {
  public:
    RemoteOracle(const std::string& host, int port);
    ~RemoteOracle() override;

    RemoteOracle(const RemoteOracle&) = delete;
    RemoteOracle& operator=(const RemoteOracle&) = delete;

    QueryResponse query(const Tensor& batch) override;
    OracleInfo info() override;

  private:
    std::vector<uint8_t> round_trip(const std::vector<uint8_t>& request);
    int fd_ = -1;
};

// "host:port" convenience used by the CLI.
std::unique_ptr<Oracle> connect_oracle(const std::string& address);

}  // namespace hspi
