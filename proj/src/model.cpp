#include "lidargen/model.hpp"

#include <algorithm>
#include <cmath>

namespace lidargen {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int v) { return v >= 1 && (v & (v - 1)) == 0; }

std::vector<float> normal_vec(Rng& rng, int64_t n, double stddev) {
    std::vector<float> v(static_cast<size_t>(n));
    for (float& x : v) x = float(rng.normal() * stddev);
    return v;
}

}  // namespace

void GeneratorConfig::validate() const {
    if (d_z < 1 || d_w < 1 || map_layers < 1 || map_width < 1 || n_blocks < 1 ||
        width < 1 || n_freq < 1)
        throw std::invalid_argument("generator config: dimensions must be >= 1");
    if (!is_pow2(btheta_max))
        throw std::invalid_argument("generator config: btheta_max must be a power of two");
    if (!(f_max >= 0) || !std::isfinite(f_max))
        throw std::invalid_argument("generator config: f_max must be finite and >= 0");
    if (!(tau > 0)) throw std::invalid_argument("generator config: tau must be > 0");
}

void DiscriminatorConfig::validate() const {
    if (height < 1 || width < 1 || base_channels < 1 || n_layers < 1)
        throw std::invalid_argument("discriminator config: dimensions must be >= 1");
    if (height >> n_layers == 0 || width >> n_layers == 0)
        throw std::invalid_argument(
            "discriminator config: too many stride-2 layers for the resolution");
}

float elevation_nyquist(const AngularGrid& grid) {
    grid.validate();
    if (grid.height < 2) return 0.0f;
    const double span = grid.elevations.front() - grid.elevations.back();
    return float(kPi * grid.height / span);
}

int azimuth_band_limit(int width) {
    int limit = 1;
    while (limit * 2 <= std::max(1, width / 2)) limit *= 2;
    return limit;
}

Generator Generator::init(const GeneratorConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = substream(seed, {0x6e17});
    ParamDict p;

    for (int l = 0; l < cfg.map_layers; ++l) {
        const int in = l == 0 ? cfg.d_z : cfg.map_width;
        const int out = l == cfg.map_layers - 1 ? cfg.d_w : cfg.map_width;
        const std::string key = "map." + std::to_string(l) + ".";
        p.add(key + "w", Tensor({in, out}, normal_vec(rng, int64_t(in) * out,
                                                      std::sqrt(2.0 / in))));
        p.add(key + "b", Tensor({1, out}, 0.0f));
    }

    int exp_max = 0;
    while ((1 << (exp_max + 1)) <= cfg.btheta_max) ++exp_max;
    for (int i = 0; i < cfg.n_blocks; ++i) {
        const int in = i == 0 ? cfg.n_freq : cfg.width + cfg.n_freq;
        const std::string key = "block." + std::to_string(i) + ".";
        // demodulation normalizes the weight scale, so unit normals suffice
        p.add(key + "w", Tensor({in, cfg.width},
                                normal_vec(rng, int64_t(in) * cfg.width, 1.0)));
        p.add(key + "b", Tensor({1, cfg.width}, 0.0f));
        p.add(key + "aw", Tensor({cfg.d_w, in}, normal_vec(rng, int64_t(cfg.d_w) * in,
                                                           1.0 / std::sqrt(cfg.d_w))));
        p.add(key + "ab", Tensor({1, in}, 1.0f));

        const std::string bk = "basis." + std::to_string(i) + ".";
        std::vector<float> bt(size_t(cfg.n_freq)), bp(size_t(cfg.n_freq)),
            ph(size_t(cfg.n_freq));
        for (float& v : bt) v = float(1 << rng.uniform_int(uint64_t(exp_max) + 1));
        for (float& v : bp) v = float(rng.uniform(-double(cfg.f_max), double(cfg.f_max)));
        for (float& v : ph) v = float(rng.uniform(0.0, 2.0 * kPi));
        p.add(bk + "btheta", Tensor({cfg.n_freq}, std::move(bt)));
        p.add(bk + "bphi", Tensor({cfg.n_freq}, std::move(bp)));
        p.add(bk + "phase", Tensor({cfg.n_freq}, std::move(ph)));
    }

    p.add("head_d.w",
          Tensor({cfg.width, 1}, normal_vec(rng, cfg.width, std::sqrt(1.0 / cfg.width))));
    p.add("head_d.b", Tensor({1, 1}, 0.0f));
    p.add("head_n.w",
          Tensor({cfg.width, 1}, normal_vec(rng, cfg.width, std::sqrt(1.0 / cfg.width))));
    // bias the retention head toward keeping pixels so early masks are dense
    p.add("head_n.b", Tensor({1, 1}, 2.0f));

    p.set_scalar("cfg.g.d_z", float(cfg.d_z));
    p.set_scalar("cfg.g.d_w", float(cfg.d_w));
    p.set_scalar("cfg.g.map_layers", float(cfg.map_layers));
    p.set_scalar("cfg.g.map_width", float(cfg.map_width));
    p.set_scalar("cfg.g.n_blocks", float(cfg.n_blocks));
    p.set_scalar("cfg.g.width", float(cfg.width));
    p.set_scalar("cfg.g.n_freq", float(cfg.n_freq));
    p.set_scalar("cfg.g.btheta_max", float(cfg.btheta_max));
    p.set_scalar("cfg.g.f_max", cfg.f_max);
    p.set_scalar("cfg.g.tau", cfg.tau);

    Generator g;
    g.cfg = cfg;
    g.params = std::move(p);
    return g;
}

Generator Generator::from_params(ParamDict params) {
    GeneratorConfig cfg;
    cfg.d_z = int(params.get_scalar("cfg.g.d_z"));
    cfg.d_w = int(params.get_scalar("cfg.g.d_w"));
    cfg.map_layers = int(params.get_scalar("cfg.g.map_layers"));
    cfg.map_width = int(params.get_scalar("cfg.g.map_width"));
    cfg.n_blocks = int(params.get_scalar("cfg.g.n_blocks"));
    cfg.width = int(params.get_scalar("cfg.g.width"));
    cfg.n_freq = int(params.get_scalar("cfg.g.n_freq"));
    cfg.btheta_max = int(params.get_scalar("cfg.g.btheta_max"));
    cfg.f_max = params.get_scalar("cfg.g.f_max");
    cfg.tau = params.get_scalar("cfg.g.tau");
    cfg.validate();
    Generator g;
    g.cfg = cfg;
    g.params = std::move(params);
    return g;
}

Discriminator Discriminator::init(const DiscriminatorConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng rng = substream(seed, {0xd15c});
    ParamDict p;

    int hh = cfg.height, ww = cfg.width, cin = 1;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const int cout = cfg.base_channels << l;
        const std::string key = "conv." + std::to_string(l) + ".";
        p.add(key + "w", Tensor({3, 3, cin, cout},
                                normal_vec(rng, int64_t(9) * cin * cout,
                                           std::sqrt(2.0 / (9.0 * cin)))));
        p.add(key + "b", Tensor({cout}, 0.0f));
        hh = (hh - 1) / 2 + 1;
        ww = (ww - 1) / 2 + 1;
        cin = cout;
    }
    const int flat = hh * ww * cin;
    p.add("dense.w", Tensor({flat, 1}, normal_vec(rng, flat, std::sqrt(1.0 / flat))));
    p.add("dense.b", Tensor({1, 1}, 0.0f));

    p.set_scalar("cfg.d.height", float(cfg.height));
    p.set_scalar("cfg.d.width", float(cfg.width));
    p.set_scalar("cfg.d.base_channels", float(cfg.base_channels));
    p.set_scalar("cfg.d.n_layers", float(cfg.n_layers));

    Discriminator d;
    d.cfg = cfg;
    d.params = std::move(p);
    return d;
}

Discriminator Discriminator::from_params(ParamDict params) {
    DiscriminatorConfig cfg;
    cfg.height = int(params.get_scalar("cfg.d.height"));
    cfg.width = int(params.get_scalar("cfg.d.width"));
    cfg.base_channels = int(params.get_scalar("cfg.d.base_channels"));
    cfg.n_layers = int(params.get_scalar("cfg.d.n_layers"));
    cfg.validate();
    Discriminator d;
    d.cfg = cfg;
    d.params = std::move(params);
    return d;
}

bool is_generator_trainable(const std::string& name) {
    return name.rfind("map.", 0) == 0 || name.rfind("block.", 0) == 0 ||
           name.rfind("head_", 0) == 0;
}

bool is_pivotal_trainable(const std::string& name) {
    return name.rfind("block.", 0) == 0 || name.rfind("head_", 0) == 0;
}

std::vector<float> sample_latent(Rng& rng, int n, int d_z) {
    if (n < 1 || d_z < 1) throw std::invalid_argument("sample_latent: n, d_z >= 1");
    return normal_vec(rng, int64_t(n) * d_z, 1.0);
}

std::vector<float> positional_encoding(const std::vector<double>& thetas,
                                       const std::vector<double>& phis,
                                       const std::vector<float>& b_theta,
                                       const std::vector<float>& b_phi,
                                       const std::vector<float>& phase) {
    const size_t d = b_theta.size();
    if (d == 0 || b_phi.size() != d || phase.size() != d)
        throw std::invalid_argument("positional_encoding: basis vectors must share size");
    if (thetas.size() != phis.size())
        throw std::invalid_argument("positional_encoding: coordinate sizes differ");
    std::vector<float> out(thetas.size() * d);
    size_t idx = 0;
    for (size_t p = 0; p < thetas.size(); ++p) {
        const double th = std::remainder(thetas[p], 2.0 * kPi);
        for (size_t k = 0; k < d; ++k)
            out[idx++] = float(std::sin(double(b_theta[k]) * th +
                                        double(b_phi[k]) * phis[p] + double(phase[k])));
    }
    return out;
}

std::vector<float> positional_encoding(const AngularGrid& grid,
                                       const std::vector<float>& b_theta,
                                       const std::vector<float>& b_phi,
                                       const std::vector<float>& phase) {
    grid.validate();
    std::vector<double> thetas, phis;
    thetas.reserve(size_t(grid.height) * grid.width);
    phis.reserve(size_t(grid.height) * grid.width);
    for (int r = 0; r < grid.height; ++r)
        for (int c = 0; c < grid.width; ++c) {
            thetas.push_back(grid.azimuths[size_t(c)]);
            phis.push_back(grid.elevations[size_t(r)]);
        }
    return positional_encoding(thetas, phis, b_theta, b_phi, phase);
}

RangeImage sample_mask(const RangeImage& x_n, float tau, uint64_t seed) {
    if (!(tau > 0)) throw std::invalid_argument("sample_mask: tau must be > 0");
    if (!x_n.has(Channel::Prob))
        throw std::invalid_argument("sample_mask: input needs a PROB channel");
    const std::vector<float>& prob = x_n.data(Channel::Prob);

    RangeImage m;
    m.grid = x_n.grid;
    m.d_min = x_n.d_min;
    m.d_max = x_n.d_max;
    std::vector<float> mask(prob.size());
    Rng rng = substream(seed, {0x9a5c});
    // threshold sigma((logit(p)+g)/tau) > 0.5 reduces to logit(p) + g > 0
    for (size_t i = 0; i < prob.size(); ++i) {
        const double g = rng.logistic();
        const double p = double(prob[i]);
        bool keep;
        if (p >= 1.0)
            keep = true;
        else if (p <= 0.0)
            keep = false;
        else
            keep = std::log(p) - std::log1p(-p) + g > 0.0;
        mask[i] = keep ? 1.0f : 0.0f;
    }
    m.add_channel(Channel::Mask, std::move(mask));
    return m;
}

RangeImage compose(const RangeImage& x_d, const RangeImage& m) {
    if (!x_d.has(Channel::InvDepth))
        throw std::invalid_argument("compose: x_d needs an INVDEPTH channel");
    if (!m.has(Channel::Mask))
        throw std::invalid_argument("compose: m needs a MASK channel");
    if (x_d.grid.height != m.grid.height || x_d.grid.width != m.grid.width)
        throw std::invalid_argument("compose: raster shapes differ");
    const std::vector<float>& d = x_d.data(Channel::InvDepth);
    const std::vector<float>& mask = m.data(Channel::Mask);

    RangeImage out;
    out.grid = x_d.grid;
    out.d_min = x_d.d_min;
    out.d_max = x_d.d_max;
    std::vector<float> xg(d.size());
    for (size_t i = 0; i < d.size(); ++i) xg[i] = mask[i] != 0.0f ? d[i] : 0.0f;
    out.add_channel(Channel::InvDepth, std::move(xg));
    out.add_channel(Channel::Mask, mask);
    return out;
}

}  // namespace lidargen
