#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "lidargen/geom.hpp"
#include "lidargen/rng.hpp"

using namespace lidargen;

namespace {

// 3x5 grid whose center pixel sits exactly at theta=0, phi=0.
AngularGrid centered_grid() { return AngularGrid::uniform(3, 5, 0.5, -0.5); }

double wrap_diff(double a, double b) {
    double d = std::fmod(a - b + M_PI, 2.0 * M_PI);
    if (d < 0) d += 2.0 * M_PI;
    return d - M_PI;
}

// Half the elevation bin extent around row r (edge rows extend half a step).
double half_elev_bin(const AngularGrid& g, int r) {
    if (g.height == 1) return M_PI;
    double above = (r > 0) ? g.elevations[r - 1] - g.elevations[r]
                           : g.elevations[0] - g.elevations[1];
    double below = (r + 1 < g.height) ? g.elevations[r] - g.elevations[r + 1]
                                      : g.elevations[g.height - 2] - g.elevations[g.height - 1];
    return 0.5 * std::max(above, below);
}

PointCloud random_cloud_in_span(const AngularGrid& g, Rng& rng, int n,
                                float d_min, float d_max) {
    PointCloud cloud;
    const double phi_top = g.elevations[0];
    const double phi_bot = g.elevations[g.height - 1];
    for (int i = 0; i < n; ++i) {
        const double theta = rng.uniform(-M_PI, M_PI);
        const double phi = rng.uniform(phi_bot, phi_top);
        const double d = rng.uniform(d_min * 1.01, d_max * 0.99);
        cloud.points.push_back(Vec3{float(d * std::cos(phi) * std::cos(theta)),
                                    float(d * std::cos(phi) * std::sin(theta)),
                                    float(d * std::sin(phi))});
    }
    return cloud;
}

}  // namespace

TEST_CASE("project: axis-aligned point lands on the theta=0, phi=0 pixel") {
    AngularGrid g = centered_grid();
    REQUIRE(g.azimuths[2] == doctest::Approx(0.0).epsilon(1e-12));
    REQUIRE(g.elevations[1] == 0.0);

    PointCloud cloud;
    cloud.points.push_back(Vec3{2.f, 0.f, 0.f});
    RangeImage img = project(cloud, g);
    const auto& range = img.data(Channel::Range);
    const auto& mask = img.data(Channel::Mask);
    const int idx = 1 * g.width + 2;
    CHECK(range[idx] == 2.f);
    CHECK(mask[idx] == 1.f);
    for (int i = 0; i < img.pixel_count(); ++i) {
        if (i == idx) continue;
        CHECK(range[i] == 0.f);
        CHECK(mask[i] == 0.f);
    }
}

TEST_CASE("project: empty cloud gives all-zero channels") {
    RangeImage img = project(PointCloud{}, centered_grid());
    for (float v : img.data(Channel::Range)) CHECK(v == 0.f);
    for (float v : img.data(Channel::Mask)) CHECK(v == 0.f);
}

TEST_CASE("project: empty grid is rejected") {
    CHECK_THROWS_AS(AngularGrid::uniform(0, 8, 0.5, -0.5), std::invalid_argument);
    AngularGrid g = centered_grid();
    g.width = 0;
    g.azimuths.clear();
    CHECK_THROWS_AS(project(PointCloud{}, g), std::invalid_argument);
}

TEST_CASE("project/unproject: recovered angles within half a bin, range exact") {
    Rng rng(42);
    AngularGrid g = AngularGrid::uniform(8, 32, 0.4, -0.4);
    PointCloud cloud = random_cloud_in_span(g, rng, 100, 1.f, 80.f);
    RangeImage img = project(cloud, g);
    PointCloud back = unproject(img);
    CHECK(back.size() > 0);

    const double half_az = M_PI / g.width;
    for (const Vec3& q : back.points) {
        const double d = std::sqrt(double(q.x) * q.x + double(q.y) * q.y + double(q.z) * q.z);
        const double theta = std::atan2(double(q.y), double(q.x));
        const double phi = std::asin(std::clamp(double(q.z) / d, -1.0, 1.0));
        bool matched = false;
        for (const Vec3& p : cloud.points) {
            const double dp = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
            const double tp = std::atan2(double(p.y), double(p.x));
            const double pp = std::asin(std::clamp(double(p.z) / dp, -1.0, 1.0));
            // row is unknown here, so accept the widest half-bin in the grid
            double max_half_elev = 0;
            for (int r = 0; r < g.height; ++r)
                max_half_elev = std::max(max_half_elev, half_elev_bin(g, r));
            if (std::abs(wrap_diff(theta, tp)) <= half_az + 1e-9 &&
                std::abs(phi - pp) <= max_half_elev + 1e-9 &&
                std::abs(d - dp) <= 1e-5 * dp) {
                matched = true;
                break;
            }
        }
        CHECK(matched);
    }
}

TEST_CASE("project: distinct bins conserve point count") {
    Rng rng(7);
    AngularGrid g = AngularGrid::uniform(6, 24, 0.3, -0.3);
    // one point jittered inside each of 40 distinct pixels
    std::vector<int> pixels(g.height * g.width);
    for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = int(i);
    for (size_t i = pixels.size(); i > 1; --i)
        std::swap(pixels[i - 1], pixels[rng.uniform_int(uint32_t(i))]);
    const int n = 40;
    PointCloud cloud;
    for (int k = 0; k < n; ++k) {
        const int r = pixels[k] / g.width, c = pixels[k] % g.width;
        const double theta = g.azimuths[c] + rng.uniform(-0.4, 0.4) * g.azimuth_step();
        const double phi = g.elevations[r] + rng.uniform(-0.4, 0.4) * half_elev_bin(g, r);
        const double d = rng.uniform(2.0, 70.0);
        cloud.points.push_back(Vec3{float(d * std::cos(phi) * std::cos(theta)),
                                    float(d * std::cos(phi) * std::sin(theta)),
                                    float(d * std::sin(phi))});
    }
    RangeImage img = project(cloud, g);
    int valid = 0;
    for (float m : img.data(Channel::Mask)) valid += (m != 0.f);
    CHECK(valid == n);
}

TEST_CASE("project: every projected point stays within its pixel's bin") {
    Rng rng(11);
    AngularGrid g = AngularGrid::uniform(5, 16, 0.35, -0.35);
    for (int k = 0; k < 200; ++k) {
        PointCloud one = random_cloud_in_span(g, rng, 1, 1.f, 80.f);
        RangeImage img = project(one, g);
        const auto& mask = img.data(Channel::Mask);
        int idx = -1;
        for (int i = 0; i < img.pixel_count(); ++i)
            if (mask[i] != 0.f) idx = i;
        REQUIRE(idx >= 0);
        const int r = idx / g.width, c = idx % g.width;
        const Vec3& p = one.points[0];
        const double d = std::sqrt(double(p.x) * p.x + double(p.y) * p.y + double(p.z) * p.z);
        const double theta = std::atan2(double(p.y), double(p.x));
        const double phi = std::asin(std::clamp(double(p.z) / d, -1.0, 1.0));
        CHECK(std::abs(wrap_diff(theta, g.azimuths[c])) <= M_PI / g.width + 1e-9);
        CHECK(std::abs(phi - g.elevations[r]) <= half_elev_bin(g, r) + 1e-9);
    }
}

TEST_CASE("unproject: single pixel at theta=0, phi=0, d=5 gives (5,0,0)") {
    AngularGrid g = centered_grid();
    RangeImage img;
    img.grid = g;
    std::vector<float> range(size_t(g.height) * g.width, 0.f);
    range[1 * g.width + 2] = 5.f;
    img.add_channel(Channel::Range, std::move(range));
    PointCloud cloud = unproject(img);
    REQUIRE(cloud.size() == 1);
    CHECK(cloud.points[0].x == doctest::Approx(5.0).epsilon(1e-6));
    CHECK(cloud.points[0].y == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
    CHECK(cloud.points[0].z == doctest::Approx(0.0).scale(1.0).epsilon(1e-6));
}

TEST_CASE("unproject: all pixels dropped gives empty cloud") {
    RangeImage img;
    img.grid = centered_grid();
    img.add_channel(Channel::Range, std::vector<float>(15, 0.f));
    CHECK(unproject(img).size() == 0);
}

TEST_CASE("unproject: missing RANGE channel is rejected") {
    RangeImage img;
    img.grid = centered_grid();
    img.add_channel(Channel::Mask, std::vector<float>(15, 0.f));
    CHECK_THROWS_AS(unproject(img), std::invalid_argument);
}

TEST_CASE("round trips hold for 1000 random seeds") {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        Rng rng(seed);
        const int h = 2 + int(rng.uniform_int(6));
        const int w = 4 + int(rng.uniform_int(28));
        AngularGrid g = AngularGrid::uniform(h, w, 0.45, -0.45);
        PointCloud cloud = random_cloud_in_span(g, rng, 20, 1.f, 80.f);
        RangeImage img1 = project(cloud, g);

        // project . unproject . project is idempotent (ranges up to rounding)
        RangeImage img2 = project(unproject(img1), g);
        const auto& m1 = img1.data(Channel::Mask);
        const auto& m2 = img2.data(Channel::Mask);
        const auto& r1 = img1.data(Channel::Range);
        const auto& r2 = img2.data(Channel::Range);
        REQUIRE(m1 == m2);
        for (int i = 0; i < img1.pixel_count(); ++i)
            if (m1[i] != 0.f)
                CHECK(std::abs(r1[i] - r2[i]) <= 1e-6f * r1[i]);

        // inverse-depth round trip, exact up to float rounding
        RangeImage inv = to_inverse_depth(img1);
        RangeImage back = from_inverse_depth(inv);
        const auto& rb = back.data(Channel::Range);
        REQUIRE(back.data(Channel::Mask) == m1);
        for (int i = 0; i < img1.pixel_count(); ++i)
            if (m1[i] != 0.f)
                CHECK(std::abs(r1[i] - rb[i]) <= 1e-6f * r1[i]);
    }
}

TEST_CASE("to_inverse_depth: boundary values") {
    AngularGrid g = centered_grid();
    RangeImage img;
    img.grid = g;
    img.d_min = 1.f;
    img.d_max = 80.f;
    std::vector<float> range(15, 0.f);
    range[0] = 1.f;   // d = d_min
    range[1] = 40.f;  // interior
    img.add_channel(Channel::Range, std::move(range));
    RangeImage inv = to_inverse_depth(img);
    const auto& v = inv.data(Channel::InvDepth);
    CHECK(v[0] == 1.f);
    CHECK(v[1] == doctest::Approx(1.0 / 40.0));
    CHECK(v[2] == 0.f);  // dropped stays dropped
    CHECK(inv.data(Channel::Mask)[2] == 0.f);

    SUBCASE("monotone: nearer range gives larger inverse depth") {
        CHECK(v[0] > v[1]);
    }
    SUBCASE("d_min <= 0 rejected") {
        img.d_min = 0.f;
        CHECK_THROWS_AS(to_inverse_depth(img), std::invalid_argument);
    }
    SUBCASE("missing RANGE rejected") {
        RangeImage no_range;
        no_range.grid = g;
        no_range.add_channel(Channel::Prob, std::vector<float>(15, 0.5f));
        CHECK_THROWS_AS(to_inverse_depth(no_range), std::invalid_argument);
    }
}

TEST_CASE("from_inverse_depth: boundary values") {
    AngularGrid g = centered_grid();
    RangeImage img;
    img.grid = g;
    img.d_min = 1.f;
    img.d_max = 80.f;
    std::vector<float> v(15, 0.f);
    v[0] = 1.f;             // -> d_min
    v[1] = 1.f / 80.f;      // -> d_max
    img.add_channel(Channel::InvDepth, std::move(v));
    RangeImage out = from_inverse_depth(img);
    const auto& d = out.data(Channel::Range);
    CHECK(d[0] == 1.f);
    CHECK(d[1] == 80.f);
    CHECK(d[2] == 0.f);
    CHECK(out.data(Channel::Mask)[0] == 1.f);
    CHECK(out.data(Channel::Mask)[2] == 0.f);
}

TEST_CASE("kitti_chunk: 64x512 output for a synthetic multi-ring scan") {
    Rng rng(3);
    PointCloud scan;
    for (int r = 0; r < 64; ++r) {
        const int len = 600 + int(rng.uniform_int(400));
        const double phi = 0.03 - 0.008 * r;
        for (int i = 0; i < len; ++i) {
            const double theta = -M_PI + (i + 0.5) * 2.0 * M_PI / len;
            const double d = rng.uniform(2.0, 70.0);
            scan.points.push_back(Vec3{float(d * std::cos(phi) * std::cos(theta)),
                                       float(d * std::cos(phi) * std::sin(theta)),
                                       float(d * std::sin(phi))});
        }
    }
    RangeImage img = kitti_chunk(scan);
    CHECK(img.grid.height == 64);
    CHECK(img.grid.width == 512);
    int valid = 0;
    for (float m : img.data(Channel::Mask)) valid += (m != 0.f);
    CHECK(valid == 64 * 512);  // every synthetic return is in range
}

TEST_CASE("kitti_chunk: exact H x W equi-angular input is row-stacked unchanged") {
    const int h = 4, w = 512;
    Rng rng(5);
    PointCloud scan;
    std::vector<float> expected;
    for (int r = 0; r < h; ++r) {
        const double phi = 0.02 - 0.01 * r;
        for (int c = 0; c < w; ++c) {
            const double theta = -M_PI + (c + 0.5) * 2.0 * M_PI / w;
            const double d = rng.uniform(2.0, 70.0);
            Vec3 p{float(d * std::cos(phi) * std::cos(theta)),
                   float(d * std::cos(phi) * std::sin(theta)), float(d * std::sin(phi))};
            scan.points.push_back(p);
            expected.push_back(std::sqrt(p.x * p.x + p.y * p.y + p.z * p.z));
        }
    }
    RangeImage img = kitti_chunk(scan, h, w);
    CHECK(img.data(Channel::Range) == expected);
}

TEST_CASE("kitti_chunk: subsample indices for L=1024, W=512 are 0,2,...,1022") {
    PointCloud ring;
    for (int i = 0; i < 1024; ++i) {
        const float d = 2.f + 0.05f * i;  // index-coded range, norm is exact
        ring.points.push_back(Vec3{d, 0.f, 0.f});
    }
    RangeImage img = kitti_chunk(ring, 1, 512);
    const auto& range = img.data(Channel::Range);

    // independent enumeration of floor(c*L/W)
    for (int c = 0; c < 512; ++c) {
        const int idx = int(size_t(c) * 1024 / 512);
        CHECK(idx == 2 * c);
        CHECK(range[c] == 2.f + 0.05f * idx);
    }
}

TEST_CASE("kitti_chunk: fewer points than rings is rejected") {
    PointCloud tiny;
    tiny.points.assign(63, Vec3{5.f, 0.f, 0.f});
    CHECK_THROWS_AS(kitti_chunk(tiny, 64, 512), std::invalid_argument);
}

TEST_CASE("inverse-depth monotonicity on valid pixels") {
    AngularGrid g = centered_grid();
    RangeImage img;
    img.grid = g;
    std::vector<float> range(15, 0.f);
    for (int i = 0; i < 15; ++i) range[i] = 2.f + 5.f * i;
    img.add_channel(Channel::Range, std::move(range));
    RangeImage inv = to_inverse_depth(img);
    const auto& r = img.data(Channel::Range);
    const auto& v = inv.data(Channel::InvDepth);
    for (int i = 0; i < 15; ++i)
        for (int j = 0; j < 15; ++j)
            if (r[i] < r[j]) CHECK(v[i] > v[j]);
}

TEST_CASE("RangeImage validation catches out-of-contract channels") {
    RangeImage img;
    img.grid = centered_grid();
    img.add_channel(Channel::Range, std::vector<float>(15, 0.5f));  // < d_min
    CHECK_THROWS_AS(img.validate(), std::invalid_argument);

    RangeImage img2;
    img2.grid = centered_grid();
    img2.add_channel(Channel::Mask, std::vector<float>(15, 0.25f));
    CHECK_THROWS_AS(img2.validate(), std::invalid_argument);

    RangeImage img3;
    img3.grid = centered_grid();
    img3.add_channel(Channel::Prob, std::vector<float>(15, 1.5f));
    CHECK_THROWS_AS(img3.validate(), std::invalid_argument);
}
