#include "lidargen/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lidargen {

void PointCloud::validate() const {
    for (const Vec3& p : points) {
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw std::invalid_argument("PointCloud: non-finite coordinate");
    }
    if (!intensity.empty() && intensity.size() != points.size())
        throw std::invalid_argument("PointCloud: intensity size mismatch");
}

AngularGrid AngularGrid::uniform(int height, int width, double elev_top, double elev_bottom) {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("AngularGrid: empty grid");
    if (!(elev_top > elev_bottom))
        throw std::invalid_argument("AngularGrid: elev_top must exceed elev_bottom");
    AngularGrid g;
    g.height = height;
    g.width = width;
    g.elevations.resize(height);
    if (height == 1) {
        g.elevations[0] = 0.5 * (elev_top + elev_bottom);
    } else {
        for (int r = 0; r < height; ++r)
            g.elevations[r] = elev_top + (elev_bottom - elev_top) * double(r) / double(height - 1);
    }
    g.azimuths.resize(width);
    const double step = 2.0 * M_PI / width;
    for (int c = 0; c < width; ++c)
        g.azimuths[c] = -M_PI + (c + 0.5) * step;
    return g;
}

AngularGrid AngularGrid::kitti_like(int height, int width) {
    return uniform(height, width, 2.0 * M_PI / 180.0, -24.8 * M_PI / 180.0);
}

double AngularGrid::azimuth_step() const {
    if (width <= 0) throw std::invalid_argument("AngularGrid: empty grid");
    return 2.0 * M_PI / width;
}

void AngularGrid::validate() const {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("AngularGrid: empty grid");
    if ((int)elevations.size() != height || (int)azimuths.size() != width)
        throw std::invalid_argument("AngularGrid: angle vector sizes disagree with H/W");
    for (int r = 1; r < height; ++r)
        if (!(elevations[r] < elevations[r - 1]))
            throw std::invalid_argument("AngularGrid: elevations not strictly decreasing");
    const double step = azimuth_step();
    for (int c = 0; c < width; ++c) {
        if (azimuths[c] < -M_PI || azimuths[c] >= M_PI)
            throw std::invalid_argument("AngularGrid: azimuth outside [-pi, pi)");
        if (c > 0) {
            // uniform spacing modulo the 2*pi wrap
            double d = azimuths[c] - azimuths[c - 1];
            if (d < 0) d += 2.0 * M_PI;
            if (std::abs(d - step) > 1e-9)
                throw std::invalid_argument("AngularGrid: azimuths not uniformly spaced");
        }
    }
}

bool AngularGrid::same_as(const AngularGrid& other) const {
    return height == other.height && width == other.width &&
           elevations == other.elevations && azimuths == other.azimuths;
}

AngularGrid interleaved(const AngularGrid& grid, int factor) {
    if (factor != 1 && factor != 2 && factor != 4)
        throw std::invalid_argument("interleaved: factor must be 1, 2, or 4");
    grid.validate();
    if (factor == 1) return grid;
    if (grid.height < 2)
        throw std::invalid_argument("interleaved: need at least 2 rows to interpolate");

    AngularGrid out;
    out.height = grid.height * 2;
    out.width = grid.width * 2;
    out.elevations.reserve(size_t(out.height));
    for (int r = 0; r < grid.height; ++r) {
        const double e = grid.elevations[size_t(r)];
        out.elevations.push_back(e);
        out.elevations.push_back(
            r + 1 < grid.height
                ? 0.5 * (e + grid.elevations[size_t(r) + 1])
                : e - 0.5 * (grid.elevations[size_t(r) - 1] - e));
    }
    const double half = 0.5 * grid.azimuth_step();
    out.azimuths.reserve(size_t(out.width));
    for (int c = 0; c < grid.width; ++c) {
        out.azimuths.push_back(grid.azimuths[size_t(c)]);
        double mid = grid.azimuths[size_t(c)] + half;
        if (mid >= M_PI) mid -= 2.0 * M_PI;
        out.azimuths.push_back(mid);
    }
    out.validate();
    return factor == 4 ? interleaved(out, 2) : out;
}

bool RangeImage::has(Channel c) const {
    return std::find(semantics.begin(), semantics.end(), c) != semantics.end();
}

const std::vector<float>& RangeImage::data(Channel c) const {
    for (size_t i = 0; i < semantics.size(); ++i)
        if (semantics[i] == c) return channels[i];
    throw std::invalid_argument("RangeImage: missing channel");
}

std::vector<float>& RangeImage::data(Channel c) {
    for (size_t i = 0; i < semantics.size(); ++i)
        if (semantics[i] == c) return channels[i];
    throw std::invalid_argument("RangeImage: missing channel");
}

void RangeImage::add_channel(Channel c, std::vector<float> values) {
    if ((int)values.size() != pixel_count())
        throw std::invalid_argument("RangeImage: channel size disagrees with grid");
    semantics.push_back(c);
    channels.push_back(std::move(values));
}

bool RangeImage::valid_at(int idx) const {
    if (has(Channel::Mask)) return data(Channel::Mask)[idx] != 0.f;
    if (has(Channel::Range)) return data(Channel::Range)[idx] > 0.f;
    if (has(Channel::InvDepth)) return data(Channel::InvDepth)[idx] > 0.f;
    return false;
}

void RangeImage::validate() const {
    grid.validate();
    if (!(d_min < d_max) || d_min <= 0.f)
        throw std::invalid_argument("RangeImage: need 0 < d_min < d_max");
    if (semantics.size() != channels.size())
        throw std::invalid_argument("RangeImage: semantics/channel count mismatch");
    const int n = pixel_count();
    for (size_t i = 0; i < channels.size(); ++i) {
        if ((int)channels[i].size() != n)
            throw std::invalid_argument("RangeImage: channel size disagrees with grid");
        for (float v : channels[i]) {
            switch (semantics[i]) {
                case Channel::Range:
                    if (v != 0.f && (v < d_min || v > d_max))
                        throw std::invalid_argument("RangeImage: RANGE outside {0} U [d_min, d_max]");
                    break;
                case Channel::InvDepth:
                case Channel::Prob:
                    if (v < 0.f || v > 1.f)
                        throw std::invalid_argument("RangeImage: channel value outside [0, 1]");
                    break;
                case Channel::Mask:
                    if (v != 0.f && v != 1.f)
                        throw std::invalid_argument("RangeImage: MASK value not in {0, 1}");
                    break;
            }
        }
    }
}

RangeImage project(const PointCloud& cloud, const AngularGrid& grid, float d_min, float d_max) {
    grid.validate();
    cloud.validate();
    if (!(d_min < d_max))
        throw std::invalid_argument("project: need d_min < d_max");

    const int h = grid.height, w = grid.width;
    RangeImage img;
    img.grid = grid;
    img.d_min = d_min;
    img.d_max = d_max;
    std::vector<float> range(size_t(h) * w, 0.f);
    std::vector<float> mask(size_t(h) * w, 0.f);

    // Elevation bin boundaries at midpoints; half a step beyond each edge.
    std::vector<double> bounds(h + 1);
    if (h == 1) {
        bounds[0] = grid.elevations[0] + M_PI;  // single row catches everything
        bounds[1] = grid.elevations[0] - M_PI;
    } else {
        bounds[0] = grid.elevations[0] + 0.5 * (grid.elevations[0] - grid.elevations[1]);
        for (int r = 1; r < h; ++r)
            bounds[r] = 0.5 * (grid.elevations[r - 1] + grid.elevations[r]);
        bounds[h] = grid.elevations[h - 1] - 0.5 * (grid.elevations[h - 2] - grid.elevations[h - 1]);
    }

    const double step = grid.azimuth_step();
    const double az0 = grid.azimuths[0];

    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const Vec3& p = cloud.points[i];
        const double d = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
        if (d < d_min || d > d_max) continue;
        const double phi = std::asin(std::clamp(double(p.z) / d, -1.0, 1.0));
        if (phi > bounds[0] || phi <= bounds[h]) continue;
        // nearest elevation row: first boundary below phi
        int row = int(std::upper_bound(bounds.begin() + 1, bounds.end(), phi,
                                       std::greater<double>()) -
                      (bounds.begin() + 1));
        row = std::clamp(row, 0, h - 1);
        const double theta = std::atan2(double(p.y), double(p.x));
        double rel = (theta - az0) / step + 0.5;
        int col = int(std::floor(rel));
        col %= w;
        if (col < 0) col += w;
        const int idx = row * w + col;
        const float df = float(d);
        if (mask[idx] == 0.f || df < range[idx]) {
            range[idx] = df;
            mask[idx] = 1.f;
        }
    }
    img.add_channel(Channel::Range, std::move(range));
    img.add_channel(Channel::Mask, std::move(mask));
    return img;
}

PointCloud unproject(const RangeImage& img) {
    if (!img.has(Channel::Range))
        throw std::invalid_argument("unproject: missing RANGE channel");
    img.grid.validate();
    const auto& range = img.data(Channel::Range);
    PointCloud out;
    for (int r = 0; r < img.grid.height; ++r) {
        const double phi = img.grid.elevations[r];
        const double cphi = std::cos(phi), sphi = std::sin(phi);
        for (int c = 0; c < img.grid.width; ++c) {
            const int idx = r * img.grid.width + c;
            if (!img.valid_at(idx)) continue;
            const double d = range[idx];
            const double theta = img.grid.azimuths[c];
            out.points.push_back(Vec3{float(d * cphi * std::cos(theta)),
                                      float(d * cphi * std::sin(theta)),
                                      float(d * sphi)});
        }
    }
    return out;
}

RangeImage to_inverse_depth(const RangeImage& img) {
    if (!img.has(Channel::Range))
        throw std::invalid_argument("to_inverse_depth: missing RANGE channel");
    if (img.d_min <= 0.f)
        throw std::invalid_argument("to_inverse_depth: d_min must be positive");
    const auto& range = img.data(Channel::Range);
    RangeImage out;
    out.grid = img.grid;
    out.d_min = img.d_min;
    out.d_max = img.d_max;
    std::vector<float> inv(range.size(), 0.f);
    std::vector<float> mask(range.size(), 0.f);
    for (size_t i = 0; i < range.size(); ++i) {
        if (!img.valid_at(int(i))) continue;
        const float d = std::clamp(range[i], img.d_min, img.d_max);
        inv[i] = img.d_min / d;
        mask[i] = 1.f;
    }
    out.add_channel(Channel::InvDepth, std::move(inv));
    out.add_channel(Channel::Mask, std::move(mask));
    return out;
}

RangeImage from_inverse_depth(const RangeImage& img) {
    if (!img.has(Channel::InvDepth))
        throw std::invalid_argument("from_inverse_depth: missing INVDEPTH channel");
    const auto& inv = img.data(Channel::InvDepth);
    RangeImage out;
    out.grid = img.grid;
    out.d_min = img.d_min;
    out.d_max = img.d_max;
    std::vector<float> range(inv.size(), 0.f);
    std::vector<float> mask(inv.size(), 0.f);
    for (size_t i = 0; i < inv.size(); ++i) {
        if (inv[i] <= 0.f) continue;
        range[i] = std::clamp(img.d_min / inv[i], img.d_min, img.d_max);
        mask[i] = 1.f;
    }
    out.add_channel(Channel::Range, std::move(range));
    out.add_channel(Channel::Mask, std::move(mask));
    return out;
}

RangeImage kitti_chunk(const PointCloud& ordered, int height, int width,
                       float d_min, float d_max) {
    if (height <= 0 || width <= 0)
        throw std::invalid_argument("kitti_chunk: empty grid");
    if ((int)ordered.points.size() < height)
        throw std::invalid_argument("kitti_chunk: fewer points than rings");

    const size_t n = ordered.points.size();
    std::vector<size_t> starts;  // ring start indices
    starts.push_back(0);
    double prev = std::atan2(double(ordered.points[0].y), double(ordered.points[0].x));
    for (size_t i = 1; i < n; ++i) {
        double a = std::atan2(double(ordered.points[i].y), double(ordered.points[i].x));
        if (std::abs(a - prev) > M_PI) starts.push_back(i);
        prev = a;
    }
    if ((int)starts.size() != height) {
        // fallback: equal-length split
        starts.resize(height);
        for (int r = 0; r < height; ++r) starts[r] = n * size_t(r) / size_t(height);
    }

    AngularGrid grid = AngularGrid::kitti_like(height, width);
    RangeImage img;
    img.grid = grid;
    img.d_min = d_min;
    img.d_max = d_max;
    std::vector<float> range(size_t(height) * width, 0.f);
    std::vector<float> mask(size_t(height) * width, 0.f);
    for (int r = 0; r < height; ++r) {
        const size_t begin = starts[r];
        const size_t end = (r + 1 < height) ? starts[r + 1] : n;
        const size_t len = end - begin;
        if (len == 0) continue;
        for (int c = 0; c < width; ++c) {
            const size_t i = begin + len * size_t(c) / size_t(width);
            const Vec3& p = ordered.points[i];
            const float d = std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z);
            if (d < d_min || d > d_max) continue;
            range[size_t(r) * width + c] = d;
            mask[size_t(r) * width + c] = 1.f;
        }
    }
    img.add_channel(Channel::Range, std::move(range));
    img.add_channel(Channel::Mask, std::move(mask));
    return img;
}

}  // namespace lidargen
