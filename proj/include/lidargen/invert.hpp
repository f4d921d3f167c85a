#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidargen/autodiff.hpp"
#include "lidargen/geom.hpp"
#include "lidargen/model.hpp"
#include "lidargen/params.hpp"

namespace lidargen {

struct InversionConfig {
    int iters1 = 500;
    float lr1 = 0.05f;
    int iters2 = 500;
    float lr2 = 0.0005f;
    int mean_style_draws = 10000;  // z samples averaged into the initial code
    SynthMode mode = SynthMode::Hierarchical;
    uint64_t seed = 0;

    void validate() const;
};

// Relative absolute error over the masked pixels:
//   L = sum(m * |1 - x_d / x_hat|) / sum(m)
// m must be exactly binary with at least one 1, and x_hat must be positive
// wherever m is 1 (the ratio is only ever formed there).
double reconstruction_loss(const std::vector<float>& x_d, const std::vector<float>& x_hat,
                           const std::vector<float>& m_hat);

// Tape form: x_hat and m_hat ride along as constants baked into coefficient
// vectors, so the backward pass never touches a division by zero.
template <typename T>
Ten<T> reconstruction_loss(Tape<T>& tp, Ten<T> x_d, const std::vector<T>& x_hat,
                           const std::vector<T>& m_hat) {
    const Shape& s = tp.shape(x_d);
    if (int64_t(x_hat.size()) != numel(s) || m_hat.size() != x_hat.size())
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    T m_total = T(0);
    std::vector<T> inv(x_hat.size(), T(0));
    for (size_t i = 0; i < x_hat.size(); ++i) {
        if (m_hat[i] != T(0) && m_hat[i] != T(1))
            throw std::invalid_argument("reconstruction_loss: mask must be binary");
        if (m_hat[i] == T(1)) {
            if (!(x_hat[i] > T(0)))
                throw std::invalid_argument(
                    "reconstruction_loss: target must be positive on masked pixels");
            inv[i] = T(1) / x_hat[i];
            m_total += T(1);
        }
    }
    if (m_total == T(0))
        throw std::invalid_argument("reconstruction_loss: mask selects no pixels");
    Ten<T> ratio = tp.mul(x_d, tp.constant(s, std::move(inv)));
    Ten<T> err = tp.abs(tp.sub(tp.constant(s, std::vector<T>(x_hat.size(), T(1))), ratio));
    Ten<T> masked = tp.mul(err, tp.constant(s, std::vector<T>(m_hat)));
    return tp.mul_scalar(tp.sum(masked), T(1) / m_total);
}

// Average of mapping(z) over `draws` standard-normal latents.
std::vector<float> mean_style_code(const Generator& gen, int draws, uint64_t seed);

struct InversionResult {
    std::vector<float> w_hat;  // pivot style code from step 1
    ParamDict weights;         // queried generator dict (tuned copy after step 2)
    SynthMode mode = SynthMode::Hierarchical;
    RangeImage mask;  // MASK: the m_hat the objective used
    RangeImage x_d;   // INVDEPTH, complete (no drops)
    RangeImage x_n;   // PROB retention map
    RangeImage x_g;   // INVDEPTH + MASK after one Bernoulli ray-drop draw
    double l_rec_step1 = 0.0;
    double l_rec_step2 = 0.0;
};

// Step 1: Adam on the style code from the mean-code initialization; returns
// the best code seen. x_hat is an INVDEPTH raster flattened to grid order.
std::vector<float> invert_step1(const Generator& gen, const AngularGrid& grid,
                                const std::vector<float>& x_hat,
                                const std::vector<float>& m_hat, const InversionConfig& cfg,
                                double* final_loss = nullptr);

// Step 2: pivotal tuning of the synthesis blocks and heads around the frozen
// code; the input generator is never modified.
ParamDict invert_step2(const Generator& gen, const AngularGrid& grid,
                       const std::vector<float>& w_hat, const std::vector<float>& x_hat,
                       const std::vector<float>& m_hat, const InversionConfig& cfg,
                       double* final_loss = nullptr);

// Both steps plus a final render. target supplies INVDEPTH (RANGE inputs are
// converted); mask = nullptr reconstructs every valid target pixel.
InversionResult invert(const Generator& gen, const RangeImage& target,
                       const RangeImage* mask, const InversionConfig& cfg);

// Re-queries the inverted scene on a grid with factor-times the rows and
// columns (factor in {1, 2, 4}); returns a complete INVDEPTH raster.
RangeImage upsample(const InversionResult& res, int factor);

// Inversion against a partial observation: keep `rows` evenly spaced rows
// (indices floor(i*H/rows)) or a uniform `fraction` of pixels, intersected
// with the target's own validity.
InversionResult restore_rows(const Generator& gen, const RangeImage& target, int rows,
                             const InversionConfig& cfg);
InversionResult restore_fraction(const Generator& gen, const RangeImage& target,
                                 float fraction, const InversionConfig& cfg);

// Ray-drop probability by-product of inverting a real observation.
RangeImage extract_raydrop(const Generator& gen, const RangeImage& target,
                           const InversionConfig& cfg);

// Valid-pixel frequency priors over a reference set.
double prior_global(const std::vector<RangeImage>& refs);
RangeImage prior_pixelwise(const std::vector<RangeImage>& refs);

// Independent per-pixel Bernoulli retention against a scalar prior or a PROB
// raster; dropped pixels zero every value channel and the mask.
RangeImage render_raydrop(const RangeImage& sim, double prior, uint64_t seed);
RangeImage render_raydrop(const RangeImage& sim, const RangeImage& prior, uint64_t seed);

}  // namespace lidargen
