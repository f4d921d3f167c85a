#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lidargen/geom.hpp"
#include "lidargen/params.hpp"

namespace lidargen {

// greedy farthest-point subset; deterministic, starts at index 0
PointCloud fps(const PointCloud& cloud, int k);

// exact minimum mean matching distance between equal-size point sets
double emd(const PointCloud& a, const PointCloud& b);

// Jensen-Shannon divergence (nats) between bird's-eye-view occupancy
// histograms: 100x100 cells over [-80,80]^2 meters plus one overflow cell
double jsd(const std::vector<PointCloud>& real_set,
           const std::vector<PointCloud>& gen_set);

struct CovMmd1nna {
    double cov;
    double mmd;
    double one_nna;
};
// coverage / minimum matching distance / 1-NN two-sample accuracy; the
// cloud distance defaults to EMD
using CloudDistance = double (*)(const PointCloud&, const PointCloud&);
CovMmd1nna cov_mmd_1nna(const std::vector<PointCloud>& real_set,
                        const std::vector<PointCloud>& gen_set,
                        CloudDistance dist = &emd);

struct SwdReport {
    std::vector<double> per_level;  // level 0 is the finest pyramid band
    double mean;
};
// sliced Wasserstein distance over normalized 7x7 patches from a 3-level
// Laplacian pyramid (circular column padding); images are H*W rasters
SwdReport swd(const std::vector<std::vector<float>>& real_imgs,
              const std::vector<std::vector<float>>& gen_imgs, int height, int width,
              uint64_t seed);

// per-point MLP 3 -> 64 -> 128 -> 256 with max pooling
struct FeatureEncoder {
    ParamDict params;

    static FeatureEncoder random(uint64_t seed = 0);
    static FeatureEncoder from_params(ParamDict params);
};
std::vector<float> encode(const PointCloud& cloud, const FeatureEncoder& enc);

// Frechet distance between Gaussian fits of two feature collections
double frechet_distance(const std::vector<std::vector<float>>& feats_a,
                        const std::vector<std::vector<float>>& feats_b);

// unbiased squared MMD with kernel (x.y/dim + 1)^3
double squared_mmd(const std::vector<std::vector<float>>& feats_a,
                   const std::vector<std::vector<float>>& feats_b);

// Everything the evaluate verb reports for one real/generated comparison.
struct MetricReport {
    double jsd = 0.0;
    double cov = 0.0;
    double mmd_emd = 0.0;
    double one_nna = 0.0;
    std::vector<double> swd_levels;
    double swd_mean = 0.0;
    double fpd = 0.0;
    double kid = 0.0;  // squared MMD on the same features as fpd
    int n_real = 0;
    int n_gen = 0;
    int n_points = 0;  // per-cloud FPS budget used for EMD-based metrics
};

// kinds: gauss, dropin, inflate, yaw, tx, ty.  Disturbances use common
// random numbers: the same seed draws the same underlying noise for every
// lambda, so sweeps are monotone in the disturbance strength.
PointCloud disturb(const PointCloud& cloud, const std::string& kind, double lambda,
                   uint64_t seed);
std::vector<PointCloud> disturb(const std::vector<PointCloud>& set,
                                const std::string& kind, double lambda, uint64_t seed);

}  // namespace lidargen
