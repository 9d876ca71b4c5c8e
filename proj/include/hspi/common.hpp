#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace hspi {

// Toolkit release; reported by the CLI and embedded in experiment artifacts.
inline constexpr const char* kHspiVersion = "1.0.0";

// Generic failure. Message strings double as stable error codes where the
// contract names one (e.g. "unrepresentable-nan", "empty-registry").
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed config or data file; carries a 1-based line number when known.
struct ParseError : Error {
    int line = 0;
    ParseError(const std::string& msg, int line_no)
        : Error(line_no > 0 ? msg + " (line " + std::to_string(line_no) + ")" : msg),
          line(line_no) {}
};

// Wire-protocol violation or transport failure.
struct ProtocolError : Error {
    explicit ProtocolError(const std::string& msg) : Error(msg) {}
};

// --- little-endian scalar IO over byte buffers -------------------------------

inline void put_u8(std::vector<uint8_t>& buf, uint8_t v) { buf.push_back(v); }

inline void put_u32(std::vector<uint8_t>& buf, uint32_t v) {
    buf.push_back(uint8_t(v));
    buf.push_back(uint8_t(v >> 8));
    buf.push_back(uint8_t(v >> 16));
    buf.push_back(uint8_t(v >> 24));
}

inline void put_u64(std::vector<uint8_t>& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(uint8_t(v >> (8 * i)));
}

inline void put_f64(std::vector<uint8_t>& buf, double v) {
    uint64_t u;
    std::memcpy(&u, &v, 8);
    put_u64(buf, u);
}

inline void put_f32(std::vector<uint8_t>& buf, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(buf, u);
}

// Cursor-style reader; throws ProtocolError on under-run.
struct ByteReader {
    const uint8_t* data;
    size_t size;
    size_t pos = 0;

    ByteReader(const uint8_t* d, size_t n) : data(d), size(n) {}
    explicit ByteReader(const std::vector<uint8_t>& b) : data(b.data()), size(b.size()) {}

    void need(size_t n) const {
        if (pos + n > size) throw ProtocolError("truncated message");
    }
    uint8_t u8() {
        need(1);
        return data[pos++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = uint32_t(data[pos]) | uint32_t(data[pos + 1]) << 8 |
                     uint32_t(data[pos + 2]) << 16 | uint32_t(data[pos + 3]) << 24;
        pos += 4;
        return v;
    }
    uint64_t u64() {
        uint64_t lo = u32();
        uint64_t hi = u32();
        return lo | (hi << 32);
    }
    double f64() {
        uint64_t u = u64();
        double v;
        std::memcpy(&v, &u, 8);
        return v;
    }
    float f32() {
        uint32_t u = u32();
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    }
    std::string str(size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(data + pos), n);
        pos += n;
        return s;
    }
    bool done() const { return pos == size; }
};

// FNV-1a 64; used for provenance hashes embedded in reports.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t seed = 0xcbf29ce484222325ull) {
    const uint8_t* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(s.data(), s.size(), seed);
}

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes);
std::string read_file_text(const std::string& path);
void write_file_text(const std::string& path, const std::string& text);

// Deterministic numeric formatting for reports (round-trippable, locale-free).
std::string fmt_double(double v);

}  // namespace hspi
