#include "lidargen/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace lidargen {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Hit {
    double t = kInf;
    double cos_inc = 0.0;  // |dot(ray dir, surface normal)|
    const RaydropRule* rule = nullptr;
};

void consider(Hit& best, double t, double cos_inc, const RaydropRule& rule) {
    if (t > 1e-9 && t < best.t) {
        best.t = t;
        best.cos_inc = std::abs(cos_inc);
        best.rule = &rule;
    }
}

void hit_ground(const SceneSpec& spec, const double u[3], Hit& best) {
    if (u[2] == 0.0) return;
    const double t = double(spec.ground_height) / u[2];
    consider(best, t, u[2], spec.ground_drop);
}

// Slab test from the origin; interior starts never count as hits.
void hit_box(const Box& b, const RaydropRule& rule, const double u[3], Hit& best) {
    const double lo[3] = {b.center.x - 0.5 * b.size.x, b.center.y - 0.5 * b.size.y,
                          b.center.z - 0.5 * b.size.z};
    const double hi[3] = {b.center.x + 0.5 * b.size.x, b.center.y + 0.5 * b.size.y,
                          b.center.z + 0.5 * b.size.z};
    double tmin = -kInf, tmax = kInf;
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
        if (u[a] == 0.0) {
            if (0.0 < lo[a] || 0.0 > hi[a]) return;
            continue;
        }
        double t0 = lo[a] / u[a], t1 = hi[a] / u[a];
        if (t0 > t1) std::swap(t0, t1);
        if (t0 > tmin) {
            tmin = t0;
            axis = a;
        }
        tmax = std::min(tmax, t1);
    }
    if (tmin > tmax || axis < 0) return;
    consider(best, tmin, u[axis], rule);
}

void hit_cylinder(const Cylinder& c, const RaydropRule& rule, const double u[3], Hit& best) {
    const double z0 = c.center.z - 0.5 * c.height, z1 = c.center.z + 0.5 * c.height;
    // lateral surface: |origin + t*u - axis|_xy = radius
    const double a = u[0] * u[0] + u[1] * u[1];
    const double b = -2.0 * (c.center.x * u[0] + c.center.y * u[1]);
    const double q = double(c.center.x) * c.center.x + double(c.center.y) * c.center.y -
                     double(c.radius) * c.radius;
    if (a > 0.0) {
        const double disc = b * b - 4.0 * a * q;
        if (disc >= 0.0) {
            const double s = std::sqrt(disc);
            for (double t : {(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)}) {
                const double z = t * u[2];
                if (t <= 1e-9 || z < z0 || z > z1) continue;
                const double nx = (t * u[0] - c.center.x) / c.radius;
                const double ny = (t * u[1] - c.center.y) / c.radius;
                consider(best, t, u[0] * nx + u[1] * ny, rule);
                break;  // nearer root first; the second can only be farther
            }
        }
    }
    // end caps
    if (u[2] != 0.0) {
        for (double zc : {z0, z1}) {
            const double t = zc / u[2];
            if (t <= 1e-9) continue;
            const double dx = t * u[0] - c.center.x, dy = t * u[1] - c.center.y;
            if (dx * dx + dy * dy <= double(c.radius) * c.radius)
                consider(best, t, u[2], rule);
        }
    }
}

}  // namespace

void SceneSpec::validate() const {
    auto check_rule = [](const RaydropRule& r) {
        if (r.base_prob < 0.f || r.base_prob > 1.f)
            throw std::invalid_argument("SceneSpec: retention probability outside [0, 1]");
        if (!(r.incidence_k >= 0.f))
            throw std::invalid_argument("SceneSpec: negative incidence coefficient");
    };
    check_rule(ground_drop);
    if (!std::isfinite(ground_height))
        throw std::invalid_argument("SceneSpec: non-finite ground height");
    for (const ScenePrimitive& p : primitives) {
        check_rule(p.drop);
        if (p.kind == ScenePrimitive::Kind::Box) {
            if (!(p.box.size.x > 0.f && p.box.size.y > 0.f && p.box.size.z > 0.f))
                throw std::invalid_argument("SceneSpec: box dimensions must be positive");
        } else {
            if (!(p.cylinder.radius > 0.f && p.cylinder.height > 0.f))
                throw std::invalid_argument("SceneSpec: cylinder dimensions must be positive");
        }
    }
}

RaycastResult raycast(const SceneSpec& spec, const AngularGrid& grid, float d_min,
                      float d_max) {
    spec.validate();
    grid.validate();
    if (!(0.f < d_min && d_min < d_max))
        throw std::invalid_argument("raycast: need 0 < d_min < d_max");

    const int h = grid.height, w = grid.width;
    std::vector<float> range(size_t(h) * w, 0.f);
    std::vector<float> mask(size_t(h) * w, 0.f);
    std::vector<float> prob(size_t(h) * w, 0.f);

    for (int r = 0; r < h; ++r) {
        const double phi = grid.elevations[r];
        const double cphi = std::cos(phi), sphi = std::sin(phi);
        for (int c = 0; c < w; ++c) {
            const double theta = grid.azimuths[c];
            const double u[3] = {cphi * std::cos(theta), cphi * std::sin(theta), sphi};
            Hit best;
            hit_ground(spec, u, best);
            for (const ScenePrimitive& p : spec.primitives) {
                if (p.kind == ScenePrimitive::Kind::Box)
                    hit_box(p.box, p.drop, u, best);
                else
                    hit_cylinder(p.cylinder, p.drop, u, best);
            }
            if (!best.rule) continue;
            const int idx = r * w + c;
            range[idx] = std::clamp(float(best.t), d_min, d_max);
            mask[idx] = 1.f;
            prob[idx] = std::clamp(
                best.rule->base_prob *
                    float(std::pow(best.cos_inc, double(best.rule->incidence_k))),
                0.f, 1.f);
        }
    }

    RaycastResult out;
    out.range.grid = grid;
    out.range.d_min = d_min;
    out.range.d_max = d_max;
    out.range.add_channel(Channel::Range, std::move(range));
    out.range.add_channel(Channel::Mask, std::move(mask));
    out.prob.grid = grid;
    out.prob.d_min = d_min;
    out.prob.d_max = d_max;
    out.prob.add_channel(Channel::Prob, std::move(prob));
    return out;
}

SceneSpec random_scene(uint64_t seed) {
    Rng rng = substream(seed, {0x5ce9e5});
    SceneSpec spec;
    spec.seed = seed;
    spec.ground_height = float(rng.uniform(-2.4, -1.6));
    spec.ground_drop.base_prob = float(rng.uniform(0.85, 1.0));
    spec.ground_drop.incidence_k = float(rng.uniform(0.1, 0.4));

    const int n_box = 2 + int(rng.uniform_int(5));
    const int n_cyl = 1 + int(rng.uniform_int(4));
    for (int i = 0; i < n_box; ++i) {
        ScenePrimitive p;
        p.kind = ScenePrimitive::Kind::Box;
        const double ang = rng.uniform(-M_PI, M_PI);
        const double dist = rng.uniform(6.0, 40.0);
        p.box.size = Vec3{float(rng.uniform(1.0, 6.0)), float(rng.uniform(1.0, 6.0)),
                          float(rng.uniform(1.5, 5.0))};
        p.box.center = Vec3{float(dist * std::cos(ang)), float(dist * std::sin(ang)),
                            spec.ground_height + 0.5f * p.box.size.z};
        p.drop.base_prob = float(rng.uniform(0.6, 1.0));
        p.drop.incidence_k = float(rng.uniform(0.5, 2.0));
        spec.primitives.push_back(p);
    }
    for (int i = 0; i < n_cyl; ++i) {
        ScenePrimitive p;
        p.kind = ScenePrimitive::Kind::Cylinder;
        const double ang = rng.uniform(-M_PI, M_PI);
        const double dist = rng.uniform(3.0, 35.0);
        p.cylinder.radius = float(rng.uniform(0.2, 1.2));
        p.cylinder.height = float(rng.uniform(2.0, 7.0));
        p.cylinder.center = Vec3{float(dist * std::cos(ang)), float(dist * std::sin(ang)),
                                 spec.ground_height + 0.5f * p.cylinder.height};
        p.drop.base_prob = float(rng.uniform(0.6, 1.0));
        p.drop.incidence_k = float(rng.uniform(0.5, 2.0));
        spec.primitives.push_back(p);
    }
    return spec;
}

RangeImage apply_raydrop(const RaycastResult& cast, Rng& rng) {
    RangeImage out = cast.range;
    auto& range = out.data(Channel::Range);
    auto& mask = out.data(Channel::Mask);
    const auto& prob = cast.prob.data(Channel::Prob);
    for (size_t i = 0; i < range.size(); ++i) {
        const double u = rng.uniform();  // one draw per pixel keeps streams aligned
        if (mask[i] != 0.f && u >= prob[i]) {
            range[i] = 0.f;
            mask[i] = 0.f;
        }
    }
    out.add_channel(Channel::Prob, prob);
    return out;
}

std::vector<RangeImage> sample_dataset(int n, uint64_t seed, const AngularGrid& grid,
                                       bool raydrop, float d_min, float d_max) {
    if (n < 1) throw std::invalid_argument("sample_dataset: need n >= 1");
    grid.validate();
    std::vector<RangeImage> frames;
    frames.reserve(size_t(n));
    for (int i = 0; i < n; ++i) {
        const uint64_t scene_seed = substream(seed, {0x5ce9e, uint64_t(i)}).next();
        RaycastResult cast = raycast(random_scene(scene_seed), grid, d_min, d_max);
        if (raydrop) {
            Rng drop = substream(seed, {0xd709, uint64_t(i)});
            frames.push_back(apply_raydrop(cast, drop));
        } else {
            RangeImage frame = std::move(cast.range);
            frame.add_channel(Channel::Prob, cast.prob.data(Channel::Prob));
            frames.push_back(std::move(frame));
        }
    }
    return frames;
}

}  // namespace lidargen
