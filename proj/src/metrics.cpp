#include "lidargen/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>

#include "lidargen/rng.hpp"

namespace lidargen {

namespace {

double dist2(const Vec3& a, const Vec3& b) {
    const double dx = double(a.x) - double(b.x);
    const double dy = double(a.y) - double(b.y);
    const double dz = double(a.z) - double(b.z);
    return dx * dx + dy * dy + dz * dz;
}

// exact minimum-cost assignment on an n x n matrix (shortest augmenting
// paths with potentials); returns the total cost of the optimal matching
double solve_assignment(const std::vector<std::vector<double>>& cost) {
    const int n = int(cost.size());
    const double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> u(size_t(n) + 1, 0.0), v(size_t(n) + 1, 0.0);
    std::vector<int> match(size_t(n) + 1, 0), way(size_t(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        match[0] = i;
        int j0 = 0;
        std::vector<double> minv(size_t(n) + 1, kInf);
        std::vector<char> used(size_t(n) + 1, 0);
        do {
            used[size_t(j0)] = 1;
            const int i0 = match[size_t(j0)];
            int j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[size_t(j)]) continue;
                const double cur = cost[size_t(i0) - 1][size_t(j) - 1] - u[size_t(i0)] - v[size_t(j)];
                if (cur < minv[size_t(j)]) {
                    minv[size_t(j)] = cur;
                    way[size_t(j)] = j0;
                }
                if (minv[size_t(j)] < delta) {
                    delta = minv[size_t(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[size_t(j)]) {
                    u[size_t(match[size_t(j)])] += delta;
                    v[size_t(j)] -= delta;
                } else {
                    minv[size_t(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[size_t(j0)] != 0);
        do {
            const int j1 = way[size_t(j0)];
            match[size_t(j0)] = match[size_t(j1)];
            j0 = j1;
        } while (j0 != 0);
    }
    double total = 0.0;
    for (int j = 1; j <= n; ++j) total += cost[size_t(match[size_t(j)]) - 1][size_t(j) - 1];
    return total;
}

}  // namespace

PointCloud fps(const PointCloud& cloud, int k) {
    const int n = int(cloud.size());
    if (k < 1 || k > n) {
        throw std::invalid_argument("fps: k must be in [1, " + std::to_string(n) + "], got " +
                                    std::to_string(k));
    }
    const bool with_intensity = !cloud.intensity.empty();
    PointCloud out;
    out.points.reserve(size_t(k));
    if (with_intensity) out.intensity.reserve(size_t(k));

    std::vector<double> min_d2(size_t(n), std::numeric_limits<double>::infinity());
    int cur = 0;
    for (int s = 0; s < k; ++s) {
        out.points.push_back(cloud.points[size_t(cur)]);
        if (with_intensity) out.intensity.push_back(cloud.intensity[size_t(cur)]);
        int best = 0;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            const double d2 = dist2(cloud.points[size_t(i)], cloud.points[size_t(cur)]);
            if (d2 < min_d2[size_t(i)]) min_d2[size_t(i)] = d2;
            if (min_d2[size_t(i)] > best_d) {  // strict: ties keep the lower index
                best_d = min_d2[size_t(i)];
                best = i;
            }
        }
        cur = best;
    }
    return out;
}

double emd(const PointCloud& a, const PointCloud& b) {
    const int n = int(a.size());
    if (int(b.size()) != n) {
        throw std::invalid_argument("emd: size mismatch (" + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    }
    if (n == 0) throw std::invalid_argument("emd: empty clouds");
    std::vector<std::vector<double>> cost(static_cast<size_t>(n),
                                          std::vector<double>(static_cast<size_t>(n), 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            cost[size_t(i)][size_t(j)] = std::sqrt(dist2(a.points[size_t(i)], b.points[size_t(j)]));
        }
    }
    return solve_assignment(cost) / double(n);
}

namespace {

constexpr int kBevBins = 100;
constexpr double kBevHalf = 80.0;

// normalized BEV occupancy over 100x100 cells plus one trailing overflow cell
std::vector<double> bev_histogram(const std::vector<PointCloud>& set, const char* which) {
    std::vector<double> h(size_t(kBevBins) * kBevBins + 1, 0.0);
    const double cell = 2.0 * kBevHalf / kBevBins;
    double total = 0.0;
    double in_bounds = 0.0;
    for (const PointCloud& cloud : set) {
        for (const Vec3& p : cloud.points) {
            const double x = p.x;
            const double y = p.y;
            total += 1.0;
            if (x >= -kBevHalf && x < kBevHalf && y >= -kBevHalf && y < kBevHalf) {
                const int ix = std::min(kBevBins - 1, int((x + kBevHalf) / cell));
                const int iy = std::min(kBevBins - 1, int((y + kBevHalf) / cell));
                h[size_t(iy) * kBevBins + size_t(ix)] += 1.0;
                in_bounds += 1.0;
            } else {
                h.back() += 1.0;
            }
        }
    }
    if (in_bounds == 0.0) {
        throw std::invalid_argument(std::string("jsd: ") + which + " set has no in-bounds points");
    }
    for (double& v : h) v /= total;
    return h;
}

}  // namespace

double jsd(const std::vector<PointCloud>& real_set, const std::vector<PointCloud>& gen_set) {
    if (real_set.empty() || gen_set.empty()) throw std::invalid_argument("jsd: empty set");
    const std::vector<double> p = bev_histogram(real_set, "real");
    const std::vector<double> q = bev_histogram(gen_set, "gen");
    double d = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        const double m = 0.5 * (p[i] + q[i]);
        if (p[i] > 0.0) d += 0.5 * p[i] * std::log(p[i] / m);
        if (q[i] > 0.0) d += 0.5 * q[i] * std::log(q[i] / m);
    }
    return std::max(0.0, d);
}

CovMmd1nna cov_mmd_1nna(const std::vector<PointCloud>& real_set,
                        const std::vector<PointCloud>& gen_set, CloudDistance dist) {
    const int nr = int(real_set.size());
    const int ng = int(gen_set.size());
    if (nr == 0 || ng == 0) throw std::invalid_argument("cov_mmd_1nna: empty set");
    const size_t n_points = real_set[0].size();
    for (const PointCloud& c : real_set) {
        if (c.size() != n_points) throw std::invalid_argument("cov_mmd_1nna: point-count mismatch");
    }
    for (const PointCloud& c : gen_set) {
        if (c.size() != n_points) throw std::invalid_argument("cov_mmd_1nna: point-count mismatch");
    }

    // one symmetric matrix over the union: real clouds first, then generated
    const int n = nr + ng;
    auto cloud_at = [&](int i) -> const PointCloud& {
        return i < nr ? real_set[size_t(i)] : gen_set[size_t(i - nr)];
    };
    std::vector<std::vector<double>> d(size_t(n), std::vector<double>(size_t(n), 0.0));
    for (int i = 0; i < n; ++i) {
        for (int j = i + 1; j < n; ++j) {
            d[size_t(i)][size_t(j)] = d[size_t(j)][size_t(i)] = dist(cloud_at(i), cloud_at(j));
        }
    }

    CovMmd1nna out{};
    std::vector<char> covered(size_t(nr), 0);
    for (int g = 0; g < ng; ++g) {
        int best = 0;
        for (int r = 1; r < nr; ++r) {
            if (d[size_t(nr + g)][size_t(r)] < d[size_t(nr + g)][size_t(best)]) best = r;
        }
        covered[size_t(best)] = 1;
    }
    int n_covered = 0;
    for (char c : covered) n_covered += c;
    out.cov = double(n_covered) / double(nr);

    double mmd_sum = 0.0;
    for (int r = 0; r < nr; ++r) {
        double best = std::numeric_limits<double>::infinity();
        for (int g = 0; g < ng; ++g) best = std::min(best, d[size_t(r)][size_t(nr + g)]);
        mmd_sum += best;
    }
    out.mmd = mmd_sum / double(nr);

    // leave-one-out 1-NN accuracy; at distance 0 a cross-set duplicate wins
    // over a same-set one because exact ties make the plain rule ambiguous
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = -1;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            if (best < 0 || d[size_t(i)][size_t(j)] < d[size_t(i)][size_t(best)]) {
                best = j;
            } else if (d[size_t(i)][size_t(j)] == d[size_t(i)][size_t(best)] &&
                       d[size_t(i)][size_t(j)] == 0.0) {
                const bool best_cross = (best < nr) != (i < nr);
                const bool cand_cross = (j < nr) != (i < nr);
                if (cand_cross && !best_cross) best = j;
            }
        }
        const bool same_side = (best < nr) == (i < nr);
        if (same_side) ++correct;
    }
    out.one_nna = double(correct) / double(n);
    return out;
}

namespace {

// separable [1,4,6,4,1]/16 blur; columns wrap (azimuth), rows reflect
std::vector<float> blur5(const std::vector<float>& img, int h, int w) {
    static const double kKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
    std::vector<float> tmp(size_t(h) * size_t(w), 0.f), out(size_t(h) * size_t(w), 0.f);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t) {
                const int cc = ((c + t) % w + w) % w;
                acc += kKernel[t + 2] * img[size_t(r) * size_t(w) + size_t(cc)];
            }
            tmp[size_t(r) * size_t(w) + size_t(c)] = float(acc);
        }
    }
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double acc = 0.0;
            for (int t = -2; t <= 2; ++t) {
                int rr = r + t;
                if (rr < 0) rr = -rr;
                if (rr > h - 1) rr = 2 * (h - 1) - rr;
                acc += kKernel[t + 2] * tmp[size_t(rr) * size_t(w) + size_t(c)];
            }
            out[size_t(r) * size_t(w) + size_t(c)] = float(acc);
        }
    }
    return out;
}

std::vector<float> downsample2(const std::vector<float>& img, int h, int w) {
    std::vector<float> out(size_t(h / 2) * size_t(w / 2));
    for (int r = 0; r < h / 2; ++r) {
        for (int c = 0; c < w / 2; ++c) {
            out[size_t(r) * size_t(w / 2) + size_t(c)] =
                img[size_t(2 * r) * size_t(w) + size_t(2 * c)];
        }
    }
    return out;
}

std::vector<float> upsample2(const std::vector<float>& img, int h, int w) {
    std::vector<float> out(size_t(2 * h) * size_t(2 * w));
    for (int r = 0; r < 2 * h; ++r) {
        for (int c = 0; c < 2 * w; ++c) {
            out[size_t(r) * size_t(2 * w) + size_t(c)] =
                img[size_t(r / 2) * size_t(w) + size_t(c / 2)];
        }
    }
    return blur5(out, 2 * h, 2 * w);
}

struct PyramidLevel {
    std::vector<float> data;
    int h = 0;
    int w = 0;
};

// L0 = G0 - up(G1), L1 = G1 - up(G2), L2 = G2
std::vector<PyramidLevel> laplacian_pyramid(const std::vector<float>& img, int h, int w) {
    std::vector<PyramidLevel> gauss;
    gauss.push_back({img, h, w});
    for (int l = 0; l < 2; ++l) {
        const PyramidLevel& g = gauss.back();
        gauss.push_back({downsample2(blur5(g.data, g.h, g.w), g.h, g.w), g.h / 2, g.w / 2});
    }
    std::vector<PyramidLevel> lap;
    for (int l = 0; l < 2; ++l) {
        const PyramidLevel& g = gauss[size_t(l)];
        const std::vector<float> up = upsample2(gauss[size_t(l) + 1].data, g.h / 2, g.w / 2);
        PyramidLevel band{g.data, g.h, g.w};
        for (size_t i = 0; i < band.data.size(); ++i) band.data[i] -= up[i];
        lap.push_back(std::move(band));
    }
    lap.push_back(gauss[2]);
    return lap;
}

constexpr int kPatch = 7;
constexpr int kMaxPatches = 1 << 14;
constexpr int kProjections = 128;

// rows x 49 matrix of normalized patches; column wrap mirrors the blur
Eigen::MatrixXf sample_patches(const std::vector<const PyramidLevel*>& levels, int count,
                               Rng rng) {
    Eigen::MatrixXf out(count, kPatch * kPatch);
    for (int s = 0; s < count; ++s) {
        const PyramidLevel& lv = *levels[rng.uniform_int(uint32_t(levels.size()))];
        const int r0 = int(rng.uniform_int(uint32_t(lv.h - kPatch + 1)));
        const int c0 = int(rng.uniform_int(uint32_t(lv.w)));
        double sum = 0.0, sum2 = 0.0;
        float vals[kPatch * kPatch];
        for (int i = 0; i < kPatch; ++i) {
            for (int j = 0; j < kPatch; ++j) {
                const int c = (c0 + j) % lv.w;
                const float v = lv.data[size_t(r0 + i) * size_t(lv.w) + size_t(c)];
                vals[i * kPatch + j] = v;
                sum += v;
                sum2 += double(v) * v;
            }
        }
        const double mean = sum / (kPatch * kPatch);
        const double var = std::max(0.0, sum2 / (kPatch * kPatch) - mean * mean);
        const float inv_sd = float(1.0 / std::max(std::sqrt(var), 1e-8));
        for (int t = 0; t < kPatch * kPatch; ++t) {
            out(s, t) = (vals[t] - float(mean)) * inv_sd;
        }
    }
    return out;
}

}  // namespace

SwdReport swd(const std::vector<std::vector<float>>& real_imgs,
              const std::vector<std::vector<float>>& gen_imgs, int height, int width,
              uint64_t seed) {
    if (real_imgs.empty() || gen_imgs.empty()) throw std::invalid_argument("swd: empty set");
    if (height % 4 != 0 || width % 4 != 0 || height / 4 < kPatch || width / 4 < kPatch) {
        throw std::invalid_argument("swd: images too small for a 3-level pyramid of 7x7 patches (" +
                                    std::to_string(height) + "x" + std::to_string(width) + ")");
    }
    const size_t numel = size_t(height) * size_t(width);
    for (const auto& img : real_imgs) {
        if (img.size() != numel) throw std::invalid_argument("swd: real image size mismatch");
    }
    for (const auto& img : gen_imgs) {
        if (img.size() != numel) throw std::invalid_argument("swd: gen image size mismatch");
    }

    std::vector<std::vector<PyramidLevel>> real_pyr, gen_pyr;
    real_pyr.reserve(real_imgs.size());
    gen_pyr.reserve(gen_imgs.size());
    for (const auto& img : real_imgs) real_pyr.push_back(laplacian_pyramid(img, height, width));
    for (const auto& img : gen_imgs) gen_pyr.push_back(laplacian_pyramid(img, height, width));

    SwdReport report;
    for (int level = 0; level < 3; ++level) {
        std::vector<const PyramidLevel*> rl, gl;
        for (const auto& p : real_pyr) rl.push_back(&p[size_t(level)]);
        for (const auto& p : gen_pyr) gl.push_back(&p[size_t(level)]);

        // both sets draw positions from the same substream so identical sets
        // under one seed sample identical patches
        const Eigen::MatrixXf pa =
            sample_patches(rl, kMaxPatches, substream(seed, {0x5a7c, uint64_t(level)}));
        const Eigen::MatrixXf pb =
            sample_patches(gl, kMaxPatches, substream(seed, {0x5a7c, uint64_t(level)}));

        Rng dir_rng = substream(seed, {0xd1a0, uint64_t(level)});
        Eigen::MatrixXf dirs(kPatch * kPatch, kProjections);
        for (int p = 0; p < kProjections; ++p) {
            double norm2 = 0.0;
            for (int t = 0; t < kPatch * kPatch; ++t) {
                const double v = dir_rng.normal();
                dirs(t, p) = float(v);
                norm2 += v * v;
            }
            dirs.col(p) /= float(std::sqrt(std::max(norm2, 1e-30)));
        }

        const Eigen::MatrixXf qa = pa * dirs;  // patches x projections
        const Eigen::MatrixXf qb = pb * dirs;
        double level_sum = 0.0;
        std::vector<float> ca(static_cast<size_t>(kMaxPatches), 0.f);
        std::vector<float> cb(static_cast<size_t>(kMaxPatches), 0.f);
        for (int p = 0; p < kProjections; ++p) {
            for (int i = 0; i < kMaxPatches; ++i) {
                ca[size_t(i)] = qa(i, p);
                cb[size_t(i)] = qb(i, p);
            }
            std::sort(ca.begin(), ca.end());
            std::sort(cb.begin(), cb.end());
            double w1 = 0.0;
            for (int i = 0; i < kMaxPatches; ++i) w1 += std::abs(double(ca[size_t(i)]) - cb[size_t(i)]);
            level_sum += w1 / kMaxPatches;
        }
        report.per_level.push_back(level_sum / kProjections);
    }
    report.mean = (report.per_level[0] + report.per_level[1] + report.per_level[2]) / 3.0;
    return report;
}

namespace {

constexpr int kEncDims[4] = {3, 64, 128, 256};

}  // namespace

FeatureEncoder FeatureEncoder::random(uint64_t seed) {
    Rng rng = substream(seed, {0xfea7});
    FeatureEncoder enc;
    for (int l = 0; l < 3; ++l) {
        const int fan_in = kEncDims[l];
        const int fan_out = kEncDims[l + 1];
        const float scale = std::sqrt(2.0f / float(fan_in));
        Tensor w(Shape{fan_in, fan_out}, 0.f);
        for (float& v : w.data) v = scale * float(rng.normal());
        enc.params.add("enc." + std::to_string(l) + ".w", std::move(w));
        enc.params.add("enc." + std::to_string(l) + ".b", Tensor(Shape{fan_out}, 0.f));
    }
    return enc;
}

FeatureEncoder FeatureEncoder::from_params(ParamDict params) {
    for (int l = 0; l < 3; ++l) {
        const std::string base = "enc." + std::to_string(l);
        const Shape want_w{kEncDims[l], kEncDims[l + 1]};
        const Shape want_b{kEncDims[l + 1]};
        if (params.at(base + ".w").shape != want_w || params.at(base + ".b").shape != want_b) {
            throw std::invalid_argument("FeatureEncoder: bad shape for " + base);
        }
    }
    FeatureEncoder enc;
    enc.params = std::move(params);
    return enc;
}

std::vector<float> encode(const PointCloud& cloud, const FeatureEncoder& enc) {
    const int n = int(cloud.size());
    if (n == 0) throw std::invalid_argument("encode: empty cloud");
    using RowMajorMap =
        Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    std::vector<RowMajorMap> ws;
    std::vector<Eigen::Map<const Eigen::VectorXf>> bs;
    for (int l = 0; l < 3; ++l) {
        const Tensor& w = enc.params.at("enc." + std::to_string(l) + ".w");
        const Tensor& b = enc.params.at("enc." + std::to_string(l) + ".b");
        ws.emplace_back(w.data.data(), kEncDims[l], kEncDims[l + 1]);
        bs.emplace_back(b.data.data(), kEncDims[l + 1]);
    }
    // one matrix-vector product per point: the per-unit accumulation order
    // never depends on batch layout, so pooling is exactly permutation- and
    // duplication-invariant
    Eigen::VectorXf h0(kEncDims[1]), h1(kEncDims[2]), h2(kEncDims[3]);
    Eigen::VectorXf pooled = Eigen::VectorXf::Constant(kEncDims[3],
                                                       -std::numeric_limits<float>::infinity());
    for (int i = 0; i < n; ++i) {
        const Eigen::Vector3f x(cloud.points[size_t(i)].x, cloud.points[size_t(i)].y,
                                cloud.points[size_t(i)].z);
        h0 = (ws[0].transpose() * x + bs[0]).cwiseMax(0.f);
        h1 = (ws[1].transpose() * h0 + bs[1]).cwiseMax(0.f);
        h2 = (ws[2].transpose() * h1 + bs[2]).cwiseMax(0.f);
        pooled = pooled.cwiseMax(h2);
    }
    return std::vector<float>(pooled.data(), pooled.data() + kEncDims[3]);
}

namespace {

struct Moments {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
};

Moments fit_gaussian(const std::vector<std::vector<float>>& feats, const char* which) {
    const int n = int(feats.size());
    if (n < 2) {
        throw std::invalid_argument(std::string("frechet_distance: need >= 2 ") + which +
                                    " samples");
    }
    const int d = int(feats[0].size());
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i) {
        if (int(feats[size_t(i)].size()) != d) {
            throw std::invalid_argument("frechet_distance: inconsistent feature dimension");
        }
        for (int j = 0; j < d; ++j) x(i, j) = feats[size_t(i)][size_t(j)];
    }
    Moments m;
    m.mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - m.mean.transpose();
    m.cov = centered.transpose() * centered / double(n - 1);
    return m;
}

// PSD square root; eigenvalues below -1e-6 are a numerical failure
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& s, const char* what) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(0.5 * (s + s.transpose()));
    if (eig.info() != Eigen::Success) {
        throw std::runtime_error(std::string("frechet_distance: eigendecomposition failed for ") +
                                 what);
    }
    Eigen::VectorXd vals = eig.eigenvalues();
    for (int i = 0; i < vals.size(); ++i) {
        if (vals[i] < -1e-6) {
            throw std::runtime_error(std::string("frechet_distance: ") + what +
                                     " has eigenvalue " + std::to_string(vals[i]) +
                                     " below -1e-6 (numerical failure)");
        }
        vals[i] = std::sqrt(std::max(0.0, vals[i]));
    }
    return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const std::vector<std::vector<float>>& feats_a,
                        const std::vector<std::vector<float>>& feats_b) {
    const Moments a = fit_gaussian(feats_a, "A");
    const Moments b = fit_gaussian(feats_b, "B");
    if (a.mean.size() != b.mean.size()) {
        throw std::invalid_argument("frechet_distance: feature dimension mismatch");
    }
    const Eigen::MatrixXd a_half = psd_sqrt(a.cov, "cov_A");
    const Eigen::MatrixXd inner = a_half * b.cov * a_half;
    const Eigen::MatrixXd inner_half = psd_sqrt(inner, "cov_A^1/2 cov_B cov_A^1/2");
    const double mean_term = (a.mean - b.mean).squaredNorm();
    const double trace_term = a.cov.trace() + b.cov.trace() - 2.0 * inner_half.trace();
    return std::max(0.0, mean_term + trace_term);
}

double squared_mmd(const std::vector<std::vector<float>>& feats_a,
                   const std::vector<std::vector<float>>& feats_b) {
    const int m = int(feats_a.size());
    const int n = int(feats_b.size());
    if (m < 2 || n < 2) throw std::invalid_argument("squared_mmd: need >= 2 samples per side");
    const int d = int(feats_a[0].size());
    for (const auto& f : feats_a) {
        if (int(f.size()) != d) throw std::invalid_argument("squared_mmd: inconsistent dimension");
    }
    for (const auto& f : feats_b) {
        if (int(f.size()) != d) throw std::invalid_argument("squared_mmd: inconsistent dimension");
    }
    auto kernel = [d](const std::vector<float>& x, const std::vector<float>& y) {
        double dot = 0.0;
        for (int j = 0; j < d; ++j) dot += double(x[size_t(j)]) * y[size_t(j)];
        const double base = dot / d + 1.0;
        return base * base * base;
    };
    double kaa = 0.0, kbb = 0.0, kab = 0.0;
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            if (i != j) kaa += kernel(feats_a[size_t(i)], feats_a[size_t(j)]);
        }
    }
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i != j) kbb += kernel(feats_b[size_t(i)], feats_b[size_t(j)]);
        }
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) kab += kernel(feats_a[size_t(i)], feats_b[size_t(j)]);
    }
    return kaa / (double(m) * (m - 1)) + kbb / (double(n) * (n - 1)) -
           2.0 * kab / (double(m) * n);
}

namespace {

// outliers land around the origin at roughly scene scale
constexpr double kDropinSigma = 20.0;

}  // namespace

PointCloud disturb(const PointCloud& cloud, const std::string& kind, double lambda,
                   uint64_t seed) {
    PointCloud out = cloud;
    const size_t n = cloud.size();
    if (kind == "gauss") {
        if (lambda < 0.0) throw std::invalid_argument("disturb: gauss lambda must be >= 0");
        // raw normals are independent of lambda: common random numbers keep
        // the sweep monotone in the disturbance strength
        Rng rng = substream(seed, {0x6a01});
        for (Vec3& p : out.points) {
            p.x += float(lambda * rng.normal());
            p.y += float(lambda * rng.normal());
            p.z += float(lambda * rng.normal());
        }
    } else if (kind == "dropin") {
        if (lambda < 0.0 || lambda > 1.0) {
            throw std::invalid_argument("disturb: dropin lambda must be in [0, 1]");
        }
        const size_t k = size_t(std::ceil(lambda * double(n)));
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        Rng perm_rng = substream(seed, {0x6a02});
        for (size_t i = n; i > 1; --i) {
            std::swap(order[i - 1], order[size_t(perm_rng.uniform_int(uint32_t(i)))]);
        }
        // victims are nested and replacements keyed by slot, so larger
        // lambda only adds outliers on top of the smaller sweep
        for (size_t s = 0; s < k; ++s) {
            Rng rng = substream(seed, {0x6a03, uint64_t(s)});
            Vec3& p = out.points[order[s]];
            p.x = float(kDropinSigma * rng.normal());
            p.y = float(kDropinSigma * rng.normal());
            p.z = float(kDropinSigma * rng.normal());
        }
    } else if (kind == "inflate") {
        if (lambda <= 0.0) throw std::invalid_argument("disturb: inflate lambda must be > 0");
        for (Vec3& p : out.points) {
            p.x = float(lambda * p.x);
            p.y = float(lambda * p.y);
            p.z = float(lambda * p.z);
        }
    } else if (kind == "yaw") {
        const double c = std::cos(lambda);
        const double s = std::sin(lambda);
        for (Vec3& p : out.points) {
            const double x = p.x, y = p.y;
            p.x = float(c * x + s * y);
            p.y = float(-s * x + c * y);
        }
    } else if (kind == "tx") {
        for (Vec3& p : out.points) p.x += float(lambda);
    } else if (kind == "ty") {
        for (Vec3& p : out.points) p.y += float(lambda);
    } else {
        throw std::invalid_argument("disturb: unknown kind '" + kind + "'");
    }
    return out;
}

std::vector<PointCloud> disturb(const std::vector<PointCloud>& set, const std::string& kind,
                                double lambda, uint64_t seed) {
    std::vector<PointCloud> out;
    out.reserve(set.size());
    for (size_t i = 0; i < set.size(); ++i) {
        Rng derive = substream(seed, {0x6a10, uint64_t(i)});
        out.push_back(disturb(set[i], kind, lambda, derive.next()));
    }
    return out;
}

}  // namespace lidargen

