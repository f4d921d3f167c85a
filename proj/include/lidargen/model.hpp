#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidargen/autodiff.hpp"
#include "lidargen/geom.hpp"
#include "lidargen/params.hpp"
#include "lidargen/rng.hpp"

namespace lidargen {

enum class SynthMode { Pure, Hierarchical };

struct GeneratorConfig {
    int d_z = 64;
    int d_w = 64;
    int map_layers = 4;
    int map_width = 64;
    int n_blocks = 4;
    int width = 128;
    int n_freq = 64;          // Fourier features per block
    int btheta_max = 64;      // azimuth frequencies drawn from powers of two <= this
    float f_max = 430.0f;     // bound on |b_phi|, rad^-1
    float tau = 0.3f;         // Gumbel-Sigmoid temperature

    void validate() const;
};

struct DiscriminatorConfig {
    int height = 32;
    int width = 128;
    int base_channels = 32;
    int n_layers = 4;  // stride-2 convolution stages

    void validate() const;
};

// |b_phi| bound that puts at most H/2 cycles across the grid's elevation span
float elevation_nyquist(const AngularGrid& grid);
// largest power of two <= W/2, the azimuth bandwidth resolvable on the grid
int azimuth_band_limit(int width);

struct Generator {
    GeneratorConfig cfg;
    ParamDict params;  // includes cfg.g.* entries

    static Generator init(const GeneratorConfig& cfg, uint64_t seed);
    static Generator from_params(ParamDict params);
};

struct Discriminator {
    DiscriminatorConfig cfg;
    ParamDict params;  // includes cfg.d.* entries

    static Discriminator init(const DiscriminatorConfig& cfg, uint64_t seed);
    static Discriminator from_params(ParamDict params);
};

// name predicates used when staging parameters onto a tape
bool is_generator_trainable(const std::string& name);  // weights, not basis
bool is_pivotal_trainable(const std::string& name);    // synthesis blocks + heads only

std::vector<float> sample_latent(Rng& rng, int n, int d_z);

// Raster-level (tape-free) operations -------------------------------------

// feature_k(theta,phi) = sin(b_theta[k]*theta + b_phi[k]*phi + phase[k]);
// azimuths are wrapped with remainder(theta, 2*pi) before evaluation so the
// encoding is exactly 2*pi-periodic; layout [P][D] flattened
std::vector<float> positional_encoding(const std::vector<double>& thetas,
                                       const std::vector<double>& phis,
                                       const std::vector<float>& b_theta,
                                       const std::vector<float>& b_phi,
                                       const std::vector<float>& phase);
// grid variant, row-major over pixels: layout [H][W][D] flattened
std::vector<float> positional_encoding(const AngularGrid& grid,
                                       const std::vector<float>& b_theta,
                                       const std::vector<float>& b_phi,
                                       const std::vector<float>& phase);

// hard Bernoulli mask: m = 1 iff sigma((logit(p) + g)/tau) > 0.5, logistic g
RangeImage sample_mask(const RangeImage& x_n, float tau, uint64_t seed);

// x_G = m * x_d elementwise; INVDEPTH result with dropped pixels exactly 0
RangeImage compose(const RangeImage& x_d, const RangeImage& m);

// Tape-level forward passes ------------------------------------------------

namespace detail {

template <typename T>
std::vector<T> to_vec(const std::vector<float>& v) {
    return std::vector<T>(v.begin(), v.end());
}

// sin(theta * b_theta + phi * b_phi + phase) as a constant subgraph; coords
// flattened row-major over the grid, output [H*W, D]
template <typename T>
Ten<T> encode_coords(Tape<T>& tp, const std::vector<double>& thetas,
                     const std::vector<double>& phis, const ParamDict& params,
                     int block) {
    const std::string b = "basis." + std::to_string(block) + ".";
    const auto& bt = params.at(b + "btheta").data;
    const auto& bp = params.at(b + "bphi").data;
    const auto& ph = params.at(b + "phase").data;
    const int d = int(bt.size());
    const int hw = int(thetas.size());
    // evaluated host-side in double; wrapping keeps periodicity exact in T
    std::vector<T> feat(size_t(hw) * d);
    for (int p = 0; p < hw; ++p) {
        const double th = std::remainder(thetas[size_t(p)], 6.28318530717958647692);
        for (int k = 0; k < d; ++k)
            feat[size_t(p) * d + k] = T(std::sin(double(bt[k]) * th +
                                                 double(bp[k]) * phis[size_t(p)] +
                                                 double(ph[k])));
    }
    return tp.constant({hw, d}, std::move(feat));
}

// style-modulated, demodulated linear layer over per-pixel features
// x [n*p, cin], w [cin, cout], bias [1, cout], style [n, cin] -> [n*p, cout]
template <typename T>
Ten<T> modulated_linear(Tape<T>& tp, Ten<T> x, Ten<T> w, Ten<T> bias, Ten<T> style,
                        int n, int p) {
    const int cin = tp.shape(w)[0];
    const int cout = tp.shape(w)[1];
    Ten<T> x3 = tp.reshape(x, {n, p, cin});
    Ten<T> s3 = tp.broadcast(tp.reshape(style, {n, 1, cin}), {n, p, cin});
    Ten<T> y = tp.matmul(tp.reshape(tp.mul(x3, s3), {n * p, cin}), w);
    Ten<T> sigma =
        tp.sqrt(tp.add_scalar(tp.matmul(tp.square(style), tp.square(w)), T(1e-8)));
    Ten<T> y3 = tp.div(tp.reshape(y, {n, p, cout}),
                       tp.broadcast(tp.reshape(sigma, {n, 1, cout}), {n, p, cout}));
    Ten<T> yb = tp.add(y3, tp.broadcast(bias, {n, p, cout}));
    return tp.reshape(yb, {n * p, cout});
}

}  // namespace detail

// z [N, d_z] -> w [N, d_w]
template <typename T>
Ten<T> mapping_forward(Tape<T>& tp, const GeneratorConfig& cfg, const TapeDict<T>& td,
                       Ten<T> z) {
    if (tp.shape(z).size() != 2 || tp.shape(z)[1] != cfg.d_z)
        throw std::invalid_argument("mapping_forward: z must be [N, d_z]");
    const int n = tp.shape(z)[0];
    Ten<T> h = z;
    for (int l = 0; l < cfg.map_layers; ++l) {
        const std::string p = "map." + std::to_string(l) + ".";
        Ten<T> y = tp.matmul(h, td.at(p + "w"));
        const int out = tp.shape(y)[1];
        h = tp.leaky_relu(tp.add(y, tp.broadcast(td.at(p + "b"), {n, out})), T(0.2));
    }
    return h;
}

template <typename T>
struct SynthOut {
    Ten<T> x_d;        // [N,H,W,1], sigmoid inverse depth in (0,1)
    Ten<T> xn_logits;  // [N,H,W,1], retention-probability logits
};

// w [N, d_w] queried at every (theta, phi) of `grid`
template <typename T>
SynthOut<T> synthesize_forward(Tape<T>& tp, const GeneratorConfig& cfg,
                               const TapeDict<T>& td, const ParamDict& params,
                               Ten<T> w, const AngularGrid& grid, SynthMode mode) {
    grid.validate();
    const int n = tp.shape(w)[0];
    const int gh = grid.height, gw = grid.width;

    // per-block azimuth resolution: hierarchical mode halves early blocks
    std::vector<int> block_w(size_t(cfg.n_blocks), gw);
    if (mode == SynthMode::Hierarchical) {
        for (int i = 0; i < cfg.n_blocks; ++i) {
            const int shift = cfg.n_blocks - 1 - i;
            if (gw % (1 << shift) != 0)
                throw std::invalid_argument(
                    "synthesize: width not divisible for hierarchical mode");
            block_w[size_t(i)] = std::max(1, gw >> shift);
        }
    }

    auto coords_at = [&](int wres) {
        std::pair<std::vector<double>, std::vector<double>> c;
        c.first.reserve(size_t(gh) * wres);
        c.second.reserve(size_t(gh) * wres);
        const int stride = gw / wres;
        for (int r = 0; r < gh; ++r)
            for (int j = 0; j < wres; ++j) {
                c.first.push_back(grid.azimuths[size_t(j) * stride]);
                c.second.push_back(grid.elevations[size_t(r)]);
            }
        return c;
    };

    Ten<T> h{};  // [n*p, ch]
    int ch = 0;
    for (int i = 0; i < cfg.n_blocks; ++i) {
        const int bw = block_w[size_t(i)];
        const int p = gh * bw;
        auto [th, phi] = coords_at(bw);
        Ten<T> pe = detail::encode_coords(tp, th, phi, params, i);
        Ten<T> pe_n = tp.reshape(
            tp.broadcast(tp.reshape(pe, {1, p, cfg.n_freq}), {n, p, cfg.n_freq}),
            {n * p, cfg.n_freq});

        Ten<T> x = i == 0 ? pe_n : tp.concat({h, pe_n}, 1);

        const std::string bp = "block." + std::to_string(i) + ".";
        Ten<T> style = tp.add(tp.matmul(w, td.at(bp + "aw")),
                              tp.broadcast(td.at(bp + "ab"), {n, tp.shape(x)[1]}));
        h = tp.leaky_relu(detail::modulated_linear(tp, x, td.at(bp + "w"),
                                                   td.at(bp + "b"), style, n, p),
                          T(0.2));
        ch = cfg.width;

        if (i + 1 < cfg.n_blocks && block_w[size_t(i + 1)] != bw) {
            const int f = block_w[size_t(i + 1)] / bw;
            Ten<T> h4 = tp.reshape(h, {n, gh, bw, ch});
            h = tp.reshape(tp.upsample_columns(h4, f),
                           {n * gh * block_w[size_t(i + 1)], ch});
        }
    }

    const int p = gh * gw;
    Ten<T> yd = tp.add(tp.matmul(h, td.at("head_d.w")),
                       tp.broadcast(td.at("head_d.b"), {n * p, 1}));
    Ten<T> yn = tp.add(tp.matmul(h, td.at("head_n.w")),
                       tp.broadcast(td.at("head_n.b"), {n * p, 1}));
    SynthOut<T> out;
    out.x_d = tp.reshape(tp.sigmoid(yd), {n, gh, gw, 1});
    out.xn_logits = tp.reshape(yn, {n, gh, gw, 1});
    return out;
}

// straight-through Gumbel-Sigmoid: forward exactly binary, backward follows
// the tau-relaxed sigmoid; one logistic draw per element from `rng`
template <typename T>
Ten<T> sample_mask_st(Tape<T>& tp, Ten<T> xn_logits, double tau, Rng& rng) {
    if (!(tau > 0)) throw std::invalid_argument("sample_mask: tau must be > 0");
    const Shape s = tp.shape(xn_logits);
    std::vector<T> noise(size_t(numel(s)));
    for (T& g : noise) g = T(rng.logistic());
    Ten<T> pre = tp.mul_scalar(tp.add(xn_logits, tp.constant(s, noise)), T(1.0 / tau));
    Ten<T> soft = tp.sigmoid(pre);
    const std::vector<T>& pv = tp.val(pre);
    std::vector<T> hard(pv.size());
    for (size_t i = 0; i < pv.size(); ++i) hard[i] = pv[i] > T(0) ? T(1) : T(0);
    // hard + (soft - stop_grad(soft)): value is exactly hard, gradient is soft's
    return tp.add(tp.constant(s, std::move(hard)), tp.sub(soft, tp.stop_gradient(soft)));
}

// x [N,H,W,1] at the configured training resolution -> logits [N,1]
template <typename T>
Ten<T> discriminate_forward(Tape<T>& tp, const DiscriminatorConfig& cfg,
                            const TapeDict<T>& td, Ten<T> x) {
    const Shape s = tp.shape(x);
    if (s.size() != 4 || s[1] != cfg.height || s[2] != cfg.width || s[3] != 1)
        throw std::invalid_argument("discriminate: input must be [N," +
                                    std::to_string(cfg.height) + "," +
                                    std::to_string(cfg.width) + ",1]");
    const int n = s[0];

    // fixed separable binomial blur, outer([1,2,1]/4, [1,2,1]/4)
    std::vector<T> blur(9);
    const double k1d[3] = {0.25, 0.5, 0.25};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) blur[size_t(i) * 3 + j] = T(k1d[i] * k1d[j]);
    Ten<T> h = tp.conv2d_circular(x, tp.constant({3, 3, 1, 1}, std::move(blur)), 1);

    int hh = cfg.height, ww = cfg.width;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "conv." + std::to_string(l) + ".";
        h = tp.conv2d_circular(h, td.at(p + "w"), 2);
        hh = (hh - 1) / 2 + 1;
        ww = (ww - 1) / 2 + 1;
        const int c = tp.shape(h)[3];
        h = tp.leaky_relu(tp.add(h, tp.broadcast(td.at(p + "b"), {n, hh, ww, c})),
                          T(0.2));
    }
    const int flat = hh * ww * tp.shape(h)[3];
    Ten<T> y = tp.matmul(tp.reshape(h, {n, flat}), td.at("dense.w"));
    return tp.add(y, tp.broadcast(td.at("dense.b"), {n, 1}));
}

}  // namespace lidargen
