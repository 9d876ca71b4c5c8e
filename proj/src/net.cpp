#include "hspi/net.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>

namespace hspi {

namespace wire {

namespace {

void write_all(int fd, const uint8_t* data, size_t n) {
    while (n > 0) {
        ssize_t w = ::send(fd, data, n, MSG_NOSIGNAL);
        if (w < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
        }
        data += w;
        n -= size_t(w);
    }
}

// Returns false on clean EOF before any byte.
bool read_exact(int fd, uint8_t* data, size_t n) {
    size_t got = 0;
    while (got < n) {
        ssize_t r = ::recv(fd, data + got, n - got, 0);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
        }
        if (r == 0) {
            if (got == 0) return false;
            throw ProtocolError("connection closed mid-frame");
        }
        got += size_t(r);
    }
    return true;
}

}  // namespace

int connect_tcp(const std::string& host, int port) {
    int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(uint16_t(port));
    std::string h = (host == "localhost" || host.empty()) ? "127.0.0.1" : host;
    if (::inet_pton(AF_INET, h.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw ProtocolError("unresolvable host: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        int err = errno;
        ::close(fd);
        throw ProtocolError("connect to " + h + ":" + std::to_string(port) +
                            " failed: " + std::strerror(err));
    }
    int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    return fd;
}

void close_fd(int fd) {
    if (fd >= 0) ::close(fd);
}

void send_frame(int fd, const std::vector<uint8_t>& payload) {
    if (payload.size() > kMaxFrame) throw ProtocolError("frame too large");
    std::vector<uint8_t> head;
    put_u32(head, uint32_t(payload.size()));
    write_all(fd, head.data(), head.size());
    write_all(fd, payload.data(), payload.size());
}

std::vector<uint8_t> recv_frame(int fd) {
    uint8_t head[4];
    if (!read_exact(fd, head, 4)) return {};
    uint32_t len = uint32_t(head[0]) | uint32_t(head[1]) << 8 | uint32_t(head[2]) << 16 |
                   uint32_t(head[3]) << 24;
    if (len == 0 || len > kMaxFrame) throw ProtocolError("bad frame length");
    std::vector<uint8_t> payload(size_t(len), 0);
    if (!read_exact(fd, payload.data(), payload.size()))
        throw ProtocolError("connection closed mid-frame");
    return payload;
}

std::vector<uint8_t> frame_header(uint8_t opcode) {
    std::vector<uint8_t> p(kMagic, kMagic + 4);
    p.push_back(kVersion);
    p.push_back(opcode);
    return p;
}

}  // namespace wire

namespace {

using namespace wire;

std::vector<uint8_t> error_frame(uint32_t code, const std::string& msg) {
    std::vector<uint8_t> p = frame_header(kOpError);
    put_u32(p, code);
    put_u32(p, uint32_t(msg.size()));
    p.insert(p.end(), msg.begin(), msg.end());
    return p;
}

// Checks magic and version, returns the opcode and a reader over the body.
uint8_t open_payload(const std::vector<uint8_t>& payload, ByteReader& r) {
    if (r.str(4) != std::string(kMagic, 4)) throw ProtocolError("bad magic");
    uint8_t version = r.u8();
    if (version != kVersion)
        throw ProtocolError("protocol version mismatch: got " + std::to_string(version));
    return r.u8();
}

std::vector<uint8_t> encode_query(const Tensor& batch) {
    std::vector<uint8_t> p = frame_header(kOpQuery);
    put_u32(p, uint32_t(batch.dim(0)));
    put_u32(p, uint32_t(batch.rank() - 1));
    for (size_t i = 1; i < batch.rank(); ++i) put_u32(p, uint32_t(batch.shape[i]));
    for (double v : batch.data) put_f64(p, v);
    return p;
}

Tensor decode_query(ByteReader& r) {
    int64_t n = r.u32();
    uint32_t ndims = r.u32();
    if (n < 1 || ndims < 1 || ndims > 8) throw ProtocolError("bad query geometry");
    std::vector<int64_t> shape{n};
    int64_t numel = n;
    for (uint32_t i = 0; i < ndims; ++i) {
        int64_t d = r.u32();
        if (d < 1 || numel > (1 << 28) / d) throw ProtocolError("bad query geometry");
        shape.push_back(d);
        numel *= d;
    }
    Tensor t = Tensor::zeros(shape);
    for (double& v : t.data) v = r.f64();
    if (!r.done()) throw ProtocolError("trailing bytes in query");
    return t;
}

std::vector<uint8_t> encode_response(const QueryResponse& resp) {
    std::vector<uint8_t> p = frame_header(kOpQueryReply);
    put_u8(p, resp.logits.has_value() ? 1 : 0);
    if (resp.logits) {
        const Tensor& l = *resp.logits;
        put_u32(p, uint32_t(l.dim(0)));
        put_u32(p, uint32_t(l.dim(1)));
        for (double v : l.data) put_f32(p, float(v));
    }
    put_u32(p, uint32_t(resp.labels.size()));
    for (int64_t lab : resp.labels) put_u32(p, uint32_t(lab));
    put_u32(p, uint32_t(resp.served_batch_size));
    return p;
}

QueryResponse decode_response(ByteReader& r) {
    QueryResponse resp;
    if (r.u8()) {
        int64_t n = r.u32();
        int64_t c = r.u32();
        if (n < 1 || c < 1 || n * c > (1 << 28)) throw ProtocolError("bad response geometry");
        Tensor l = Tensor::zeros({n, c});
        for (double& v : l.data) v = double(r.f32());
        resp.logits = std::move(l);
    }
    uint32_t labels = r.u32();
    resp.labels.resize(labels);
    for (uint32_t i = 0; i < labels; ++i) resp.labels[i] = r.u32();
    resp.served_batch_size = r.u32();
    if (!r.done()) throw ProtocolError("trailing bytes in response");
    return resp;
}

std::vector<uint8_t> encode_info(const OracleInfo& inf) {
    std::vector<uint8_t> p = frame_header(kOpInfoReply);
    put_u32(p, uint32_t(inf.input_shape.size()));
    for (int64_t d : inf.input_shape) put_u32(p, uint32_t(d));
    put_u32(p, uint32_t(inf.num_classes));
    put_u8(p, inf.response_mode == ResponseMode::LabelOnly ? 1 : 0);
    put_u32(p, uint32_t(inf.batch_group));
    put_u32(p, uint32_t(inf.max_batch));
    return p;
}

OracleInfo decode_info(ByteReader& r) {
    OracleInfo inf;
    uint32_t ndims = r.u32();
    if (ndims < 1 || ndims > 8) throw ProtocolError("bad info geometry");
    for (uint32_t i = 0; i < ndims; ++i) inf.input_shape.push_back(r.u32());
    inf.num_classes = r.u32();
    inf.response_mode = r.u8() ? ResponseMode::LabelOnly : ResponseMode::Logits;
    inf.batch_group = int(r.u32());
    inf.max_batch = int(r.u32());
    if (!r.done()) throw ProtocolError("trailing bytes in info");
    return inf;
}

}  // namespace

OracleServer::OracleServer(std::shared_ptr<const ServedModel> served, int port)
    : served_(std::move(served)) {
    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0) throw ProtocolError(std::string("socket failed: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
    addr.sin_port = htons(uint16_t(port));
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        int err = errno;
        ::close(listen_fd_);
        throw ProtocolError("bind to port " + std::to_string(port) +
                            " failed: " + std::strerror(err));
    }
    if (::listen(listen_fd_, 16) != 0) {
        int err = errno;
        ::close(listen_fd_);
        throw ProtocolError(std::string("listen failed: ") + std::strerror(err));
    }
    socklen_t len = sizeof addr;
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    accept_thread_ = std::thread([this] { accept_loop(); });
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::stop() {
    if (stopping_.exchange(true)) return;
    if (listen_fd_ >= 0) {
        ::shutdown(listen_fd_, SHUT_RDWR);
        ::close(listen_fd_);
        listen_fd_ = -1;
    }
    if (accept_thread_.joinable()) accept_thread_.join();
    std::vector<std::thread> conns;
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        // Wake handlers blocked on recv even if the peer is still connected.
        for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
        conns.swap(conn_threads_);
    }
    for (auto& t : conns)
        if (t.joinable()) t.join();
}

void OracleServer::accept_loop() {
    while (!stopping_.load()) {
        pollfd pfd{listen_fd_, POLLIN, 0};
        int pr = ::poll(&pfd, 1, 100);
        if (pr < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (pr == 0) continue;
        int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0) {
            if (errno == EINTR) continue;
            break;
        }
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        uint64_t conn_seed = served_->base_seed + next_conn_++;
        if (served_->defense.kind != Defense::Kind::None)
            std::fprintf(stderr, "oracle: connection %llu defense-seed %llu\n",
                         (unsigned long long)(next_conn_ - 1), (unsigned long long)conn_seed);
        std::lock_guard<std::mutex> lock(conn_mu_);
        conn_fds_.push_back(fd);
        conn_threads_.emplace_back([this, fd, conn_seed] { serve_connection(fd, conn_seed); });
    }
}

void OracleServer::serve_connection(int fd, uint64_t conn_seed) {
    LocalOracle oracle(served_, conn_seed);
    for (;;) {
        std::vector<uint8_t> payload;
        try {
            payload = recv_frame(fd);
        } catch (const ProtocolError&) {
            break;  // transport torn down by the peer
        }
        if (payload.empty()) break;  // clean close

        std::vector<uint8_t> reply;
        bool fatal = false;
        try {
            ByteReader r(payload);
            uint8_t op = open_payload(payload, r);
            if (op == kOpQuery) {
                Tensor batch = decode_query(r);
                reply = encode_response(oracle.query(batch));
            } else if (op == kOpInfo) {
                if (!r.done()) throw ProtocolError("trailing bytes in info request");
                reply = encode_info(oracle.info());
            } else {
                throw ProtocolError("unexpected opcode " + std::to_string(op));
            }
        } catch (const ProtocolError& e) {
            // Framing survived but the payload is unusable; answer and drop
            // the connection since the peer is not speaking the protocol.
            bool version = std::string(e.what()).find("version mismatch") != std::string::npos;
            reply = error_frame(version ? kErrVersion : kErrBadRequest, e.what());
            fatal = true;
        } catch (const Error& e) {
            std::string msg = e.what();
            uint32_t code = kErrInternal;
            if (msg.rfind("shape-mismatch", 0) == 0) code = kErrBadRequest;
            if (msg.rfind("batch-too-large", 0) == 0) code = kErrBatchTooLarge;
            reply = error_frame(code, msg);
        } catch (const std::exception& e) {
            reply = error_frame(kErrInternal, e.what());
        }
        try {
            send_frame(fd, reply);
        } catch (const ProtocolError&) {
            break;
        }
        if (fatal) break;
    }
    {
        std::lock_guard<std::mutex> lock(conn_mu_);
        std::erase(conn_fds_, fd);
    }
    ::close(fd);
}

RemoteOracle::RemoteOracle(const std::string& host, int port) {
    fd_ = connect_tcp(host, port);
}

RemoteOracle::~RemoteOracle() { close_fd(fd_); }

std::vector<uint8_t> RemoteOracle::round_trip(const std::vector<uint8_t>& request) {
    send_frame(fd_, request);
    std::vector<uint8_t> payload = recv_frame(fd_);
    if (payload.empty()) throw ProtocolError("server closed the connection");
    return payload;
}

namespace {

[[noreturn]] void throw_error_reply(ByteReader& r) {
    uint32_t code = r.u32();
    uint32_t len = r.u32();
    std::string msg = r.str(len);
    if (code == kErrBadRequest || code == kErrBatchTooLarge) throw Error(msg);
    throw ProtocolError("server error " + std::to_string(code) + ": " + msg);
}

}  // namespace

QueryResponse RemoteOracle::query(const Tensor& batch) {
    std::vector<uint8_t> payload = round_trip(encode_query(batch));
    ByteReader r(payload);
    uint8_t op = open_payload(payload, r);
    if (op == kOpError) throw_error_reply(r);
    if (op != kOpQueryReply) throw ProtocolError("unexpected reply opcode");
    return decode_response(r);
}

OracleInfo RemoteOracle::info() {
    std::vector<uint8_t> payload = round_trip(frame_header(kOpInfo));
    ByteReader r(payload);
    uint8_t op = open_payload(payload, r);
    if (op == kOpError) throw_error_reply(r);
    if (op != kOpInfoReply) throw ProtocolError("unexpected reply opcode");
    return decode_info(r);
}

std::unique_ptr<Oracle> connect_oracle(const std::string& address) {
    auto colon = address.rfind(':');
    if (colon == std::string::npos) throw Error("oracle address must be host:port");
    int port = 0;
    try {
        port = std::stoi(address.substr(colon + 1));
    } catch (...) {
        throw Error("invalid oracle port in: " + address);
    }
    return std::make_unique<RemoteOracle>(address.substr(0, colon), port);
}

}  // namespace hspi
