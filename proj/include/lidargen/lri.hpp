#pragma once

#include <string>
#include <vector>

#include "lidargen/geom.hpp"

namespace lidargen {

// LRI raster layout, all little-endian:
//   "LRI1", u32 C, u32 H, u32 W,
//   C u32 semantic codes (0=RANGE, 1=INVDEPTH, 2=PROB, 3=MASK),
//   C*H*W f32 samples (channel-major, then row-major),
//   H f32 elevations, f32 d_min, f32 d_max.
// Azimuth centers are implicit: theta_j = -pi + (j + 0.5) * 2*pi / W.
void write_lri(const RangeImage& img, const std::string& path);
RangeImage read_lri(const std::string& path);

// In-memory variants of the same byte layout (used by the file API and by
// byte-identity tests).
std::string encode_lri(const RangeImage& img);
RangeImage decode_lri(const std::string& bytes, const std::string& origin = "<memory>");

// KITTI velodyne scan: packed little-endian f32 (x, y, z, intensity) records.
PointCloud read_kitti_bin(const std::string& path);

// Text export, one "x y z" line per point ("%.9g": exact f32 round trip).
void write_xyz(const PointCloud& cloud, const std::string& path);
PointCloud read_xyz(const std::string& path);

// A dataset directory holds frames named 000000.lri, 000001.lri, ... plus
// manifest.txt with one filename per line in frame order.
std::string frame_name(int index);
void write_dataset(const std::vector<RangeImage>& frames, const std::string& dir);
std::vector<std::string> read_manifest(const std::string& dir);
std::vector<RangeImage> read_dataset(const std::string& dir);

// Writes via temp file + rename in the destination directory, so readers see
// either the old content or the complete new content, never a partial write.
void atomic_write_bytes(const std::string& path, const std::string& bytes);
std::string read_bytes(const std::string& path);

}  // namespace lidargen
