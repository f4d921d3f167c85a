#pragma once

#include <cstdint>
#include <vector>

#include "lidargen/geom.hpp"
#include "lidargen/rng.hpp"

namespace lidargen {

// Retention model for a surface: a laser return at incidence angle alpha is
// kept with probability base_prob * |cos(alpha)|^incidence_k, so grazing hits
// (object silhouettes, flat ground far away) drop out more often.
struct RaydropRule {
    float base_prob = 1.f;    // in [0, 1]
    float incidence_k = 1.f;  // >= 0; 0 disables the incidence term
};

struct Box {
    Vec3 center;
    Vec3 size;  // full extents, all positive
};

// Axis-vertical cylinder resting parallel to z.
struct Cylinder {
    Vec3 center;   // mid-height point of the axis
    float radius = 0.f;
    float height = 0.f;
};

struct ScenePrimitive {
    enum class Kind { Box, Cylinder };
    Kind kind = Kind::Box;
    Box box;
    Cylinder cylinder;
    RaydropRule drop;
};

struct SceneSpec {
    uint64_t seed = 0;
    float ground_height = -2.f;  // sensor sits at the origin
    RaydropRule ground_drop;
    std::vector<ScenePrimitive> primitives;

    void validate() const;  // throws std::invalid_argument
};

struct RaycastResult {
    RangeImage range;  // RANGE + MASK
    RangeImage prob;   // PROB: rule-derived retention, 0 where no surface is hit
};

// Casts one ray per grid pixel from the origin and keeps the nearest
// analytic ground/box/cylinder intersection, clamped to [d_min, d_max].
RaycastResult raycast(const SceneSpec& spec, const AngularGrid& grid,
                      float d_min = kDefaultDMin, float d_max = kDefaultDMax);

// Randomized desk-scale layout: a ground plane plus a handful of boxes and
// cylinders standing on it, with per-primitive retention rules.
SceneSpec random_scene(uint64_t seed);

// Bernoulli raydrop against the PROB channel; zeroes RANGE and MASK on
// dropped pixels. The PROB channel rides along unchanged as ground truth.
RangeImage apply_raydrop(const RaycastResult& cast, Rng& rng);

// n frames with layouts drawn from (seed, index); raydrop=false keeps every
// surface hit. Deterministic given (n, seed, grid, raydrop).
std::vector<RangeImage> sample_dataset(int n, uint64_t seed, const AngularGrid& grid,
                                       bool raydrop, float d_min = kDefaultDMin,
                                       float d_max = kDefaultDMax);

}  // namespace lidargen
