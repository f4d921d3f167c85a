#include "lidargen/lri.hpp"

#include "lidargen/bytes.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lidargen {

std::string read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    if (in.bad()) throw std::runtime_error("read failed: " + path);
    return std::move(ss).str();
}

void atomic_write_bytes(const std::string& path, const std::string& bytes) {
    namespace fs = std::filesystem;
    const fs::path dest(path);
    if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
    fs::path tmp = dest;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.flush();
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, dest, ec);
    if (ec) {
        fs::remove(tmp);
        throw std::runtime_error("rename failed: " + path + ": " + ec.message());
    }
}

std::string encode_lri(const RangeImage& img) {
    img.validate();
    std::string out;
    const uint32_t c = uint32_t(img.semantics.size());
    const uint32_t h = uint32_t(img.grid.height);
    const uint32_t w = uint32_t(img.grid.width);
    out.reserve(4 + 12 + 4 * c + 4 * size_t(c) * h * w + 4 * h + 8);
    out.append("LRI1", 4);
    put_u32(out, c);
    put_u32(out, h);
    put_u32(out, w);
    for (Channel ch : img.semantics) put_u32(out, uint32_t(ch));
    for (const auto& channel : img.channels)
        for (float v : channel) put_f32(out, v);
    for (double e : img.grid.elevations) put_f32(out, float(e));
    put_f32(out, img.d_min);
    put_f32(out, img.d_max);
    return out;
}

RangeImage decode_lri(const std::string& bytes, const std::string& origin) {
    ByteReader rd{bytes, origin};
    rd.need(4);
    if (bytes.compare(0, 4, "LRI1") != 0)
        throw std::runtime_error("bad LRI magic: " + origin);
    rd.pos = 4;
    const uint32_t c = rd.u32();
    const uint32_t h = rd.u32();
    const uint32_t w = rd.u32();
    if (c == 0 || c > 16 || h == 0 || w == 0 || h > (1u << 20) || w > (1u << 20))
        throw std::runtime_error("implausible LRI header: " + origin);

    RangeImage img;
    img.grid.height = int(h);
    img.grid.width = int(w);
    img.semantics.resize(c);
    for (uint32_t i = 0; i < c; ++i) {
        const uint32_t code = rd.u32();
        if (code > 3) throw std::runtime_error("unknown LRI channel code: " + origin);
        img.semantics[i] = Channel(code);
    }
    img.channels.resize(c);
    for (uint32_t i = 0; i < c; ++i) {
        img.channels[i].resize(size_t(h) * w);
        for (float& v : img.channels[i]) v = rd.f32();
    }
    img.grid.elevations.resize(h);
    for (double& e : img.grid.elevations) e = rd.f32();
    img.grid.azimuths.resize(w);
    const double step = 2.0 * M_PI / w;
    for (uint32_t j = 0; j < w; ++j) img.grid.azimuths[j] = -M_PI + (j + 0.5) * step;
    img.d_min = rd.f32();
    img.d_max = rd.f32();
    if (rd.pos != bytes.size())
        throw std::runtime_error("trailing bytes in LRI data: " + origin);
    img.validate();
    return img;
}

void write_lri(const RangeImage& img, const std::string& path) {
    atomic_write_bytes(path, encode_lri(img));
}

RangeImage read_lri(const std::string& path) {
    return decode_lri(read_bytes(path), path);
}

PointCloud read_kitti_bin(const std::string& path) {
    const std::string bytes = read_bytes(path);
    if (bytes.size() % 16 != 0)
        throw std::runtime_error("velodyne scan not a multiple of 16 bytes: " + path);
    ByteReader rd{bytes, path};
    PointCloud cloud;
    const size_t n = bytes.size() / 16;
    cloud.points.reserve(n);
    cloud.intensity.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        Vec3 p;
        p.x = rd.f32();
        p.y = rd.f32();
        p.z = rd.f32();
        cloud.points.push_back(p);
        cloud.intensity.push_back(rd.f32());
    }
    return cloud;
}

void write_xyz(const PointCloud& cloud, const std::string& path) {
    cloud.validate();
    std::string out;
    out.reserve(cloud.points.size() * 32);
    char line[128];
    for (const Vec3& p : cloud.points) {
        const int len = std::snprintf(line, sizeof line, "%.9g %.9g %.9g\n", p.x, p.y, p.z);
        out.append(line, size_t(len));
    }
    atomic_write_bytes(path, out);
}

PointCloud read_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    PointCloud cloud;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        Vec3 p;
        if (!(ss >> p.x >> p.y >> p.z))
            throw std::runtime_error("bad xyz line " + std::to_string(lineno) + ": " + path);
        cloud.points.push_back(p);
    }
    return cloud;
}

std::string frame_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06d.lri", index);
    return buf;
}

void write_dataset(const std::vector<RangeImage>& frames, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::string manifest;
    for (size_t i = 0; i < frames.size(); ++i) {
        const std::string name = frame_name(int(i));
        write_lri(frames[i], (fs::path(dir) / name).string());
        manifest += name;
        manifest += '\n';
    }
    atomic_write_bytes((fs::path(dir) / "manifest.txt").string(), manifest);
}

std::vector<std::string> read_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string path = (fs::path(dir) / "manifest.txt").string();
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) names.push_back(line);
    }
    return names;
}

std::vector<RangeImage> read_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::vector<RangeImage> frames;
    for (const std::string& name : read_manifest(dir))
        frames.push_back(read_lri((fs::path(dir) / name).string()));
    return frames;
}

}  // namespace lidargen
