#include "hspi/common.hpp"

#include <cstdio>
#include <fstream>

namespace hspi {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open file: " + path);
    in.seekg(0, std::ios::end);
    auto n = in.tellg();
    if (n < 0) throw Error("cannot read file: " + path);
    std::vector<uint8_t> bytes(static_cast<size_t>(n), 0);
    in.seekg(0, std::ios::beg);
    if (n > 0) in.read(reinterpret_cast<char*>(bytes.data()), n);
    if (!in) throw Error("cannot read file: " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open file for writing: " + path);
    if (!bytes.empty()) out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    out.flush();
    if (!out) throw Error("cannot write file: " + path);
}

std::string read_file_text(const std::string& path) {
    auto bytes = read_file_bytes(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_file_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open file for writing: " + path);
    out.write(text.data(), std::streamsize(text.size()));
    out.flush();
    if (!out) throw Error("cannot write file: " + path);
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace hspi
