#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>

namespace lidargen {

// Explicit little-endian packing so files are byte-identical across hosts.
inline void put_u32(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

struct ByteReader {
    const std::string& bytes;
    std::string origin;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > bytes.size())
            throw std::runtime_error(origin + ": truncated (need " + std::to_string(n) +
                                     " bytes at offset " + std::to_string(pos) + ")");
    }
    uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
        pos += 4;
        return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
               uint32_t(p[3]) << 24;
    }
    float f32() {
        const uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string raw(size_t n) {
        need(n);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == bytes.size(); }
};

}  // namespace lidargen
