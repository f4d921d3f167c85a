#include "lidargen/invert.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <utility>

#include "lidargen/rng.hpp"

namespace lidargen {

namespace {

enum : uint64_t {
    kTagMeanW = 0x3ea2,
    kTagXg = 0x39dd,
    kTagKeep = 0x6ee9,
    kTagRender = 0x4e4d,
};

struct SynthRasters {
    RangeImage x_d;  // INVDEPTH, complete
    RangeImage x_n;  // PROB
};

SynthRasters run_synthesis(const Generator& gen, const std::vector<float>& w,
                           const AngularGrid& grid, SynthMode mode, float d_min,
                           float d_max) {
    Tape<float> tp;
    auto td = stage_params<float>(tp, gen.params, [](const std::string&) { return false; });
    Ten<float> wt = tp.constant({1, gen.cfg.d_w}, w);
    const SynthOut<float> so = synthesize_forward(tp, gen.cfg, td, gen.params, wt, grid, mode);
    const std::vector<float>& xd = tp.val(so.x_d);
    const std::vector<float>& ln = tp.val(so.xn_logits);

    SynthRasters out;
    out.x_d.grid = grid;
    out.x_d.d_min = d_min;
    out.x_d.d_max = d_max;
    out.x_d.add_channel(Channel::InvDepth, xd);
    out.x_n.grid = grid;
    out.x_n.d_min = d_min;
    out.x_n.d_max = d_max;
    std::vector<float> prob(ln.size());
    for (size_t i = 0; i < ln.size(); ++i)
        prob[i] = float(1.0 / (1.0 + std::exp(-double(ln[i]))));
    out.x_n.add_channel(Channel::Prob, std::move(prob));
    return out;
}

// m_hat = provided mask (binary) AND target validity; nullptr keeps validity
std::vector<float> build_mask(const std::vector<float>& x_hat, const RangeImage* mask) {
    std::vector<float> m(x_hat.size());
    if (mask != nullptr) {
        if (!mask->has(Channel::Mask))
            throw std::invalid_argument("invert: mask raster needs a MASK channel");
        const std::vector<float>& mv = mask->data(Channel::Mask);
        if (mv.size() != x_hat.size())
            throw std::invalid_argument("invert: mask raster does not match the target grid");
        for (size_t i = 0; i < m.size(); ++i) {
            if (mv[i] != 0.f && mv[i] != 1.f)
                throw std::invalid_argument("invert: mask must be binary");
            m[i] = (mv[i] == 1.f && x_hat[i] > 0.f) ? 1.f : 0.f;
        }
    } else {
        for (size_t i = 0; i < m.size(); ++i) m[i] = x_hat[i] > 0.f ? 1.f : 0.f;
    }
    return m;
}

}  // namespace

void InversionConfig::validate() const {
    if (iters1 < 0 || iters2 < 0)
        throw std::invalid_argument("inversion config: iters must be >= 0");
    if (!(lr1 > 0.f) || !(lr2 > 0.f))
        throw std::invalid_argument("inversion config: learning rates must be > 0");
    if (mean_style_draws < 1)
        throw std::invalid_argument("inversion config: mean_style_draws must be >= 1");
}

double reconstruction_loss(const std::vector<float>& x_d, const std::vector<float>& x_hat,
                           const std::vector<float>& m_hat) {
    if (x_d.size() != x_hat.size() || m_hat.size() != x_hat.size())
        throw std::invalid_argument("reconstruction_loss: shape mismatch");
    double num = 0.0;
    double den = 0.0;
    for (size_t i = 0; i < x_d.size(); ++i) {
        if (m_hat[i] != 0.f && m_hat[i] != 1.f)
            throw std::invalid_argument("reconstruction_loss: mask must be binary");
        if (m_hat[i] == 0.f) continue;
        if (!(x_hat[i] > 0.f))
            throw std::invalid_argument(
                "reconstruction_loss: target must be positive on masked pixels");
        num += std::abs(1.0 - double(x_d[i]) / double(x_hat[i]));
        den += 1.0;
    }
    if (den == 0.0)
        throw std::invalid_argument("reconstruction_loss: mask selects no pixels");
    return num / den;
}

std::vector<float> mean_style_code(const Generator& gen, int draws, uint64_t seed) {
    if (draws < 1) throw std::invalid_argument("mean_style_code: draws must be >= 1");
    Rng rng = substream(seed, {kTagMeanW});
    std::vector<double> acc(size_t(gen.cfg.d_w), 0.0);
    int remaining = draws;
    while (remaining > 0) {
        const int chunk = std::min(512, remaining);
        Tape<float> tp;
        auto td = stage_params<float>(tp, gen.params, [](const std::string&) { return false; });
        Ten<float> z = tp.constant({chunk, gen.cfg.d_z}, sample_latent(rng, chunk, gen.cfg.d_z));
        const std::vector<float>& w = tp.val(mapping_forward(tp, gen.cfg, td, z));
        for (int r = 0; r < chunk; ++r)
            for (int c = 0; c < gen.cfg.d_w; ++c)
                acc[size_t(c)] += double(w[size_t(r) * gen.cfg.d_w + size_t(c)]);
        remaining -= chunk;
    }
    std::vector<float> out(acc.size());
    for (size_t i = 0; i < acc.size(); ++i) out[i] = float(acc[i] / draws);
    return out;
}

std::vector<float> invert_step1(const Generator& gen, const AngularGrid& grid,
                                const std::vector<float>& x_hat,
                                const std::vector<float>& m_hat, const InversionConfig& cfg,
                                double* final_loss) {
    cfg.validate();
    std::vector<float> w = mean_style_code(gen, cfg.mean_style_draws, cfg.seed);
    std::vector<float> best_w = w;
    double best = std::numeric_limits<double>::infinity();
    AdamState<float> opt;
    for (int it = 0; it <= cfg.iters1; ++it) {
        Tape<float> tp;
        auto td = stage_params<float>(tp, gen.params, [](const std::string&) { return false; });
        Ten<float> wt = tp.input({1, gen.cfg.d_w}, w);
        const SynthOut<float> so =
            synthesize_forward(tp, gen.cfg, td, gen.params, wt, grid, cfg.mode);
        Ten<float> loss = reconstruction_loss(tp, so.x_d, x_hat, m_hat);
        const double l = tp.item(loss);
        if (l < best) {
            best = l;
            best_w = w;
        }
        if (it == cfg.iters1) break;  // last pass only scores the final update
        adam_step(w, tp.val(tp.backward_to(loss, {wt})[0]), opt, cfg.lr1);
    }
    if (final_loss != nullptr) *final_loss = best;
    return best_w;
}

ParamDict invert_step2(const Generator& gen, const AngularGrid& grid,
                       const std::vector<float>& w_hat, const std::vector<float>& x_hat,
                       const std::vector<float>& m_hat, const InversionConfig& cfg,
                       double* final_loss) {
    cfg.validate();
    Generator tuned = gen;
    ParamDict best_params = tuned.params;
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::pair<std::string, AdamState<float>>> opt;
    auto moments_for = [&opt](const std::string& name) -> AdamState<float>& {
        for (auto& [n, st] : opt)
            if (n == name) return st;
        opt.emplace_back(name, AdamState<float>{});
        return opt.back().second;
    };
    for (int it = 0; it <= cfg.iters2; ++it) {
        Tape<float> tp;
        auto td = stage_params<float>(
            tp, tuned.params, [](const std::string& n) { return is_pivotal_trainable(n); });
        Ten<float> wt = tp.constant({1, tuned.cfg.d_w}, w_hat);
        const SynthOut<float> so =
            synthesize_forward(tp, tuned.cfg, td, tuned.params, wt, grid, cfg.mode);
        Ten<float> loss = reconstruction_loss(tp, so.x_d, x_hat, m_hat);
        const double l = tp.item(loss);
        if (l < best) {
            best = l;
            best_params = tuned.params;
        }
        if (it == cfg.iters2) break;
        const std::vector<Ten<float>> grads = tp.backward(loss);
        for (size_t i = 0; i < td.trainable_names.size(); ++i)
            adam_step(tuned.params.at(td.trainable_names[i]).data, tp.val(grads[i]),
                      moments_for(td.trainable_names[i]), cfg.lr2);
    }
    if (final_loss != nullptr) *final_loss = best;
    return best_params;
}

InversionResult invert(const Generator& gen, const RangeImage& target,
                       const RangeImage* mask, const InversionConfig& cfg) {
    cfg.validate();
    target.validate();
    const RangeImage inv =
        target.has(Channel::InvDepth) ? target : to_inverse_depth(target);
    const AngularGrid& grid = inv.grid;
    const std::vector<float>& x_hat = inv.data(Channel::InvDepth);
    const std::vector<float> m_hat = build_mask(x_hat, mask);

    InversionResult res;
    res.mode = cfg.mode;
    res.w_hat = invert_step1(gen, grid, x_hat, m_hat, cfg, &res.l_rec_step1);
    res.weights =
        invert_step2(gen, grid, res.w_hat, x_hat, m_hat, cfg, &res.l_rec_step2);

    const Generator tuned = Generator::from_params(res.weights);
    SynthRasters s = run_synthesis(tuned, res.w_hat, grid, cfg.mode, inv.d_min, inv.d_max);
    res.x_d = std::move(s.x_d);
    res.x_n = std::move(s.x_n);
    res.mask.grid = grid;
    res.mask.d_min = inv.d_min;
    res.mask.d_max = inv.d_max;
    res.mask.add_channel(Channel::Mask, m_hat);
    const RangeImage draw =
        sample_mask(res.x_n, tuned.cfg.tau, substream(cfg.seed, {kTagXg}).next());
    res.x_g = compose(res.x_d, draw);
    return res;
}

RangeImage upsample(const InversionResult& res, int factor) {
    if (factor != 1 && factor != 2 && factor != 4)
        throw std::invalid_argument("upsample: factor must be 1, 2, or 4");
    const Generator gen = Generator::from_params(res.weights);
    const AngularGrid up = interleaved(res.x_d.grid, factor);
    return run_synthesis(gen, res.w_hat, up, res.mode, res.x_d.d_min, res.x_d.d_max).x_d;
}

InversionResult restore_rows(const Generator& gen, const RangeImage& target, int rows,
                             const InversionConfig& cfg) {
    const int h = target.grid.height, w = target.grid.width;
    if (rows < 1 || rows > h)
        throw std::invalid_argument("restore: kept rows must be in [1, H]");
    RangeImage mask;
    mask.grid = target.grid;
    mask.d_min = target.d_min;
    mask.d_max = target.d_max;
    std::vector<float> m(size_t(h) * size_t(w), 0.f);
    for (int i = 0; i < rows; ++i) {
        const int r = i * h / rows;
        std::fill(m.begin() + size_t(r) * w, m.begin() + size_t(r + 1) * w, 1.f);
    }
    mask.add_channel(Channel::Mask, std::move(m));
    return invert(gen, target, &mask, cfg);
}

InversionResult restore_fraction(const Generator& gen, const RangeImage& target,
                                 float fraction, const InversionConfig& cfg) {
    if (!(fraction > 0.f && fraction <= 1.f))
        throw std::invalid_argument("restore: fraction must be in (0, 1]");
    const size_t total = size_t(target.grid.height) * size_t(target.grid.width);
    const size_t keep = size_t(double(fraction) * double(total));
    if (keep == 0) throw std::invalid_argument("restore: fraction keeps no pixels");

    std::vector<uint32_t> order(total);
    for (size_t i = 0; i < total; ++i) order[i] = uint32_t(i);
    Rng rng = substream(cfg.seed, {kTagKeep});
    for (size_t i = 0; i + 1 < total; ++i) {
        const size_t j = i + rng.uniform_int(uint32_t(total - i));
        std::swap(order[i], order[j]);
    }
    RangeImage mask;
    mask.grid = target.grid;
    mask.d_min = target.d_min;
    mask.d_max = target.d_max;
    std::vector<float> m(total, 0.f);
    for (size_t i = 0; i < keep; ++i) m[order[i]] = 1.f;
    mask.add_channel(Channel::Mask, std::move(m));
    return invert(gen, target, &mask, cfg);
}

RangeImage extract_raydrop(const Generator& gen, const RangeImage& target,
                           const InversionConfig& cfg) {
    return invert(gen, target, nullptr, cfg).x_n;
}

double prior_global(const std::vector<RangeImage>& refs) {
    if (refs.empty()) throw std::invalid_argument("prior_global: no reference frames");
    int64_t valid = 0, total = 0;
    for (const RangeImage& r : refs) {
        for (int i = 0; i < r.pixel_count(); ++i) valid += r.valid_at(i) ? 1 : 0;
        total += r.pixel_count();
    }
    return double(valid) / double(total);
}

RangeImage prior_pixelwise(const std::vector<RangeImage>& refs) {
    if (refs.empty()) throw std::invalid_argument("prior_pixelwise: no reference frames");
    for (const RangeImage& r : refs)
        if (!r.grid.same_as(refs[0].grid))
            throw std::invalid_argument("prior_pixelwise: reference grids differ");
    const int n = refs[0].pixel_count();
    std::vector<float> p(size_t(n), 0.f);
    for (const RangeImage& r : refs)
        for (int i = 0; i < n; ++i)
            if (r.valid_at(i)) p[size_t(i)] += 1.f;
    for (float& v : p) v /= float(refs.size());
    RangeImage out;
    out.grid = refs[0].grid;
    out.d_min = refs[0].d_min;
    out.d_max = refs[0].d_max;
    out.add_channel(Channel::Prob, std::move(p));
    return out;
}

namespace {

RangeImage render_against(const RangeImage& sim, const std::vector<float>& prior,
                          uint64_t seed) {
    RangeImage out = sim;
    const int n = sim.pixel_count();
    std::vector<float>* range = out.has(Channel::Range) ? &out.data(Channel::Range) : nullptr;
    std::vector<float>* inv =
        out.has(Channel::InvDepth) ? &out.data(Channel::InvDepth) : nullptr;
    std::vector<float> mask(static_cast<size_t>(n));
    Rng rng = substream(seed, {kTagRender});
    for (int i = 0; i < n; ++i) {
        const bool keep = rng.uniform() < double(prior[size_t(i)]);  // drawn for every pixel
        mask[size_t(i)] = (keep && sim.valid_at(i)) ? 1.f : 0.f;
        if (mask[size_t(i)] == 0.f) {
            if (range != nullptr) (*range)[size_t(i)] = 0.f;
            if (inv != nullptr) (*inv)[size_t(i)] = 0.f;
        }
    }
    if (out.has(Channel::Mask))
        out.data(Channel::Mask) = std::move(mask);
    else
        out.add_channel(Channel::Mask, std::move(mask));
    return out;
}

}  // namespace

RangeImage render_raydrop(const RangeImage& sim, double prior, uint64_t seed) {
    if (!(prior >= 0.0 && prior <= 1.0))
        throw std::invalid_argument("render_raydrop: prior must be in [0, 1]");
    return render_against(
        sim, std::vector<float>(size_t(sim.pixel_count()), float(prior)), seed);
}

RangeImage render_raydrop(const RangeImage& sim, const RangeImage& prior, uint64_t seed) {
    if (!prior.has(Channel::Prob))
        throw std::invalid_argument("render_raydrop: prior raster needs a PROB channel");
    if (prior.grid.height != sim.grid.height || prior.grid.width != sim.grid.width)
        throw std::invalid_argument("render_raydrop: prior grid does not match the input");
    const std::vector<float>& p = prior.data(Channel::Prob);
    for (float v : p)
        if (!(v >= 0.f && v <= 1.f))
            throw std::invalid_argument("render_raydrop: prior must be in [0, 1]");
    return render_against(sim, p, seed);
}

}  // namespace lidargen
