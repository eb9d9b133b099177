#pragma once

// Internal little-endian framing helpers shared by the binary containers.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include "segquant/error.hpp"

namespace segquant::detail {

inline void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteReader {
  public:
    ByteReader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16() {
        const char* p = take(2);
        return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                          (static_cast<std::uint8_t>(p[1]) << 8));
    }
    std::uint32_t u32() {
        const char* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }
    std::string bytes(std::size_t n) { return std::string(take(n), n); }
    bool done() const { return pos_ == buf_.size(); }

  private:
    const char* take(std::size_t n) {
        if (pos_ + n > buf_.size())
            throw_parse("parse_failure", path_ + ": truncated container");
        const char* p = buf_.data() + pos_;
        pos_ += n;
        return p;
    }
    const std::string& buf_;
    std::string path_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw_io("io", "cannot open " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f)
        throw_io("io", "cannot write " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f)
        throw_io("io", "short write to " + path);
}

}  // namespace segquant::detail
