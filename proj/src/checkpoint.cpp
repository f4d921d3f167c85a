#include "lidargen/checkpoint.hpp"

#include <stdexcept>

#include "lidargen/bytes.hpp"
#include "lidargen/lri.hpp"

namespace lidargen {

namespace {
constexpr int kMaxRank = 8;
constexpr uint32_t kMaxDim = 1u << 28;
constexpr int64_t kMaxNumel = int64_t(1) << 30;
}  // namespace

std::string encode_lgck(const ParamDict& dict, uint32_t version) {
    std::string out;
    out += "LGCK";
    put_u32(out, version);
    put_u32(out, uint32_t(dict.size()));
    for (const auto& [name, t] : dict.items) {
        put_u32(out, uint32_t(name.size()));
        out += name;
        put_u32(out, uint32_t(t.shape.size()));
        for (int d : t.shape) put_u32(out, uint32_t(d));
        for (float v : t.data) put_f32(out, v);
    }
    return out;
}

ParamDict decode_lgck(const std::string& bytes, const std::string& origin) {
    ByteReader rd{bytes, origin};
    if (rd.raw(4) != "LGCK")
        throw std::runtime_error(origin + ": not an LGCK checkpoint (bad magic)");
    const uint32_t version = rd.u32();
    if (version != kCheckpointVersion)
        throw std::runtime_error(origin + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const uint32_t count = rd.u32();
    ParamDict dict;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = rd.u32();
        if (name_len == 0 || name_len > 4096)
            throw std::runtime_error(origin + ": bad parameter name length");
        const std::string name = rd.raw(name_len);
        const uint32_t rank = rd.u32();
        if (rank > kMaxRank) throw std::runtime_error(origin + ": tensor rank too large");
        Shape shape(rank);
        int64_t n = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint32_t dim = rd.u32();
            if (dim == 0 || dim > kMaxDim)
                throw std::runtime_error(origin + ": bad dimension in '" + name + "'");
            shape[d] = int(dim);
            n *= dim;
            if (n > kMaxNumel)
                throw std::runtime_error(origin + ": tensor '" + name + "' too large");
        }
        std::vector<float> data(static_cast<size_t>(n));
        for (float& v : data) v = rd.f32();
        if (dict.has(name))
            throw std::runtime_error(origin + ": duplicate entry '" + name + "'");
        dict.add(name, Tensor(std::move(shape), std::move(data)));
    }
    if (!rd.done())
        throw std::runtime_error(origin + ": trailing bytes after last entry");
    return dict;
}

void write_lgck(const ParamDict& dict, const std::string& path, uint32_t version) {
    atomic_write_bytes(path, encode_lgck(dict, version));
}

ParamDict read_lgck(const std::string& path) {
    return decode_lgck(read_bytes(path), path);
}

}  // namespace lidargen
