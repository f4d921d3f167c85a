#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace lidargen {

struct Vec3 {
    float x = 0.f, y = 0.f, z = 0.f;
};

// Unordered set of Cartesian points in meters, optional per-point intensity.
struct PointCloud {
    std::vector<Vec3> points;
    std::vector<float> intensity;  // empty, or one value per point

    size_t size() const { return points.size(); }
    void validate() const;  // throws std::invalid_argument on broken invariants
};

// Per-pixel azimuth/elevation calibration of a range image.
// Row 0 is the highest elevation; azimuths are uniformly spaced and wrap.
struct AngularGrid {
    int height = 0;
    int width = 0;
    std::vector<double> elevations;  // size H, radians, strictly decreasing
    std::vector<double> azimuths;    // size W, radians in [-pi, pi), step 2*pi/W

    // Standard grid with azimuth centers at -pi + (j + 0.5) * 2*pi/W and
    // linearly spaced elevations from elev_top down to elev_bottom.
    static AngularGrid uniform(int height, int width, double elev_top, double elev_bottom);

    // HDL-64E-like desk default: +2 deg .. -24.8 deg.
    static AngularGrid kitti_like(int height, int width);

    double azimuth_step() const;
    void validate() const;
    bool same_as(const AngularGrid& other) const;
};

enum class Channel : uint32_t {
    Range = 0,     // meters, 0 = dropped
    InvDepth = 1,  // d_min / d in [0, 1], 0 = dropped
    Prob = 2,      // [0, 1]
    Mask = 3,      // {0, 1}
};

// H x W raster with one or more channels sharing one angular grid.
struct RangeImage {
    AngularGrid grid;
    float d_min = 1.0f;
    float d_max = 80.0f;
    std::vector<Channel> semantics;
    std::vector<std::vector<float>> channels;  // channel-major, then row-major H*W

    int pixel_count() const { return grid.height * grid.width; }
    bool has(Channel c) const;
    const std::vector<float>& data(Channel c) const;  // throws if missing
    std::vector<float>& data(Channel c);
    void add_channel(Channel c, std::vector<float> values);

    // true at (r, c) if MASK=1, or RANGE/INVDEPTH > 0 when no mask channel
    bool valid_at(int idx) const;
    void validate() const;
};

inline constexpr float kDefaultDMin = 1.0f;
inline constexpr float kDefaultDMax = 80.0f;

// Grid with factor-many times the rows and columns, keeping every original
// angle verbatim at even indices and inserting midpoints at odd ones (the
// final row/column extrapolates past the last original).  factor in {1,2,4}.
AngularGrid interleaved(const AngularGrid& grid, int factor);

// Spherical projection of a cloud onto an angular grid. Nearest range wins on
// bin collisions (ties to the lower point index); points outside
// [d_min, d_max] or the elevation span are discarded. Output: RANGE + MASK.
RangeImage project(const PointCloud& cloud, const AngularGrid& grid,
                   float d_min = kDefaultDMin, float d_max = kDefaultDMax);

// One point per valid pixel at (d cos(phi) cos(theta), d cos(phi) sin(theta), d sin(phi)).
PointCloud unproject(const RangeImage& img);

// v = d_min / clamp(d, d_min, d_max) on valid pixels, 0 on dropped pixels.
RangeImage to_inverse_depth(const RangeImage& img);

// d = clamp(d_min / v, d_min, d_max) for v > 0, dropped for v = 0.
RangeImage from_inverse_depth(const RangeImage& img);

// Splits an angle-ordered scan into H rings at azimuth wrap-around boundaries
// (fallback: equal-length split), subsamples each ring to W points at indices
// floor(i*L/W), and stacks rows top ring first.
RangeImage kitti_chunk(const PointCloud& ordered, int height = 64, int width = 512,
                       float d_min = kDefaultDMin, float d_max = kDefaultDMax);

}  // namespace lidargen
