#include "lidargen/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <stdexcept>
#include <utility>

#include "lidargen/checkpoint.hpp"

namespace lidargen {

namespace {

// substream tags: every random draw is keyed by (seed, tag, step, phase)
enum : uint64_t {
    kTagData = 0xda7a,
    kTagZ = 0x7a7e,
    kTagSub = 0x5b61,
    kTagMask = 0x35c7,
    kTagAugD = 0xa06d,
    kTagAugG = 0xa069,
    kTagFpdZ = 0xf9d0,
    kTagFpdM = 0xf9d1,
};

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool starts_with(const std::string& s, const char* prefix) {
    return s.rfind(prefix, 0) == 0;
}

[[noreturn]] void bad_value(const std::string& origin, int lineno, const std::string& key) {
    throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                ": invalid value for '" + key + "'");
}

long long parse_ll(const std::string& v, const std::string& origin, int lineno,
                   const std::string& key) {
    size_t used = 0;
    long long out = 0;
    try {
        out = std::stoll(v, &used);
    } catch (const std::exception&) {
        bad_value(origin, lineno, key);
    }
    if (used != v.size()) bad_value(origin, lineno, key);
    return out;
}

int parse_int(const std::string& v, const std::string& origin, int lineno,
              const std::string& key) {
    const long long out = parse_ll(v, origin, lineno, key);
    if (out < -(1ll << 31) || out >= (1ll << 31)) bad_value(origin, lineno, key);
    return int(out);
}

uint64_t parse_u64(const std::string& v, const std::string& origin, int lineno,
                   const std::string& key) {
    size_t used = 0;
    uint64_t out = 0;
    try {
        out = std::stoull(v, &used);
    } catch (const std::exception&) {
        bad_value(origin, lineno, key);
    }
    if (used != v.size() || v.empty() || v[0] == '-') bad_value(origin, lineno, key);
    return out;
}

float parse_float(const std::string& v, const std::string& origin, int lineno,
                  const std::string& key) {
    size_t used = 0;
    float out = 0.f;
    try {
        out = std::stof(v, &used);
    } catch (const std::exception&) {
        bad_value(origin, lineno, key);
    }
    if (used != v.size()) bad_value(origin, lineno, key);
    return out;
}

std::string fmt_g(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.9g", v);
    return b;
}

}  // namespace

void TrainConfig::validate() const {
    gen.validate();
    disc.validate();
    if (!(lr > 0.f)) throw std::invalid_argument("train config: lr must be > 0");
    if (!(gamma >= 0.f)) throw std::invalid_argument("train config: gamma must be >= 0");
    if (!(p_aug >= 0.f && p_aug <= 1.f))
        throw std::invalid_argument("train config: p_aug must be in [0, 1]");
    if (steps < 0) throw std::invalid_argument("train config: steps must be >= 0");
    if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
    if (ckpt_every < 1) throw std::invalid_argument("train config: ckpt_every must be >= 1");
    if (fpd_every < 1) throw std::invalid_argument("train config: fpd_every must be >= 1");
    if (fpd_clouds < 2) throw std::invalid_argument("train config: fpd_clouds must be >= 2");
    if (holdout < 2) throw std::invalid_argument("train config: holdout must be >= 2");
}

TrainConfig parse_train_config(const std::string& text, const std::string& origin) {
    TrainConfig cfg;
    size_t pos = 0;
    int lineno = 0;
    while (pos <= text.size()) {
        const size_t nl = text.find('\n', pos);
        std::string line =
            nl == std::string::npos ? text.substr(pos) : text.substr(pos, nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty() || val.empty())
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": expected 'key = value'");

        if (key == "lr") cfg.lr = parse_float(val, origin, lineno, key);
        else if (key == "batch") cfg.batch = parse_int(val, origin, lineno, key);
        else if (key == "steps") cfg.steps = parse_int(val, origin, lineno, key);
        else if (key == "gamma") cfg.gamma = parse_float(val, origin, lineno, key);
        else if (key == "p_aug") cfg.p_aug = parse_float(val, origin, lineno, key);
        else if (key == "seed") cfg.seed = parse_u64(val, origin, lineno, key);
        else if (key == "ckpt_every") cfg.ckpt_every = parse_int(val, origin, lineno, key);
        else if (key == "fpd_every") cfg.fpd_every = parse_int(val, origin, lineno, key);
        else if (key == "fpd_clouds") cfg.fpd_clouds = parse_int(val, origin, lineno, key);
        else if (key == "holdout") cfg.holdout = parse_int(val, origin, lineno, key);
        else if (key == "mode") {
            if (val == "pure") cfg.mode = SynthMode::Pure;
            else if (val == "hierarchical") cfg.mode = SynthMode::Hierarchical;
            else bad_value(origin, lineno, key);
        } else if (key == "height") {
            cfg.disc.height = parse_int(val, origin, lineno, key);
        } else if (key == "width") {
            cfg.disc.width = parse_int(val, origin, lineno, key);
        } else if (key == "d_base") {
            cfg.disc.base_channels = parse_int(val, origin, lineno, key);
        } else if (key == "d_layers") {
            cfg.disc.n_layers = parse_int(val, origin, lineno, key);
        } else if (key == "d_z") cfg.gen.d_z = parse_int(val, origin, lineno, key);
        else if (key == "d_w") cfg.gen.d_w = parse_int(val, origin, lineno, key);
        else if (key == "map_layers") cfg.gen.map_layers = parse_int(val, origin, lineno, key);
        else if (key == "map_width") cfg.gen.map_width = parse_int(val, origin, lineno, key);
        else if (key == "n_blocks") cfg.gen.n_blocks = parse_int(val, origin, lineno, key);
        else if (key == "g_width") cfg.gen.width = parse_int(val, origin, lineno, key);
        else if (key == "n_freq") cfg.gen.n_freq = parse_int(val, origin, lineno, key);
        else if (key == "btheta_max") cfg.gen.btheta_max = parse_int(val, origin, lineno, key);
        else if (key == "f_max") cfg.gen.f_max = parse_float(val, origin, lineno, key);
        else if (key == "tau") cfg.gen.tau = parse_float(val, origin, lineno, key);
        else
            throw std::invalid_argument(origin + ":" + std::to_string(lineno) +
                                        ": unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
}

std::string format_train_config(const TrainConfig& cfg) {
    std::string out;
    auto kv = [&out](const char* k, const std::string& v) {
        out += k;
        out += " = ";
        out += v;
        out += '\n';
    };
    kv("steps", std::to_string(cfg.steps));
    kv("batch", std::to_string(cfg.batch));
    kv("lr", fmt_g(cfg.lr));
    kv("gamma", fmt_g(cfg.gamma));
    kv("p_aug", fmt_g(cfg.p_aug));
    kv("seed", std::to_string(cfg.seed));
    kv("ckpt_every", std::to_string(cfg.ckpt_every));
    kv("fpd_every", std::to_string(cfg.fpd_every));
    kv("fpd_clouds", std::to_string(cfg.fpd_clouds));
    kv("holdout", std::to_string(cfg.holdout));
    kv("mode", cfg.mode == SynthMode::Pure ? "pure" : "hierarchical");
    kv("height", std::to_string(cfg.disc.height));
    kv("width", std::to_string(cfg.disc.width));
    kv("d_base", std::to_string(cfg.disc.base_channels));
    kv("d_layers", std::to_string(cfg.disc.n_layers));
    kv("d_z", std::to_string(cfg.gen.d_z));
    kv("d_w", std::to_string(cfg.gen.d_w));
    kv("map_layers", std::to_string(cfg.gen.map_layers));
    kv("map_width", std::to_string(cfg.gen.map_width));
    kv("n_blocks", std::to_string(cfg.gen.n_blocks));
    kv("g_width", std::to_string(cfg.gen.width));
    kv("n_freq", std::to_string(cfg.gen.n_freq));
    kv("btheta_max", std::to_string(cfg.gen.btheta_max));
    kv("f_max", fmt_g(cfg.gen.f_max));
    kv("tau", fmt_g(cfg.gen.tau));
    return out;
}

std::vector<int> augment_shifts(int batch, int width, float p_aug, Rng& rng) {
    if (batch < 1 || width < 1) throw std::invalid_argument("augment_shifts: empty batch/grid");
    if (!(p_aug >= 0.f && p_aug <= 1.f))
        throw std::invalid_argument("augment_shifts: p_aug must be in [0, 1]");
    std::vector<int> out(static_cast<size_t>(batch), 0);
    for (int i = 0; i < batch; ++i) {
        const bool apply = rng.uniform() < double(p_aug);
        const int shift = int(rng.uniform_int(uint32_t(width)));  // drawn unconditionally
        if (apply) out[size_t(i)] = shift;
    }
    return out;
}

std::vector<float> shift_columns(const std::vector<float>& img, int h, int w, int shift) {
    if (int64_t(img.size()) != int64_t(h) * w)
        throw std::invalid_argument("shift_columns: image size mismatch");
    const int d = ((shift % w) + w) % w;
    if (d == 0) return img;
    std::vector<float> out(img.size());
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c)
            out[size_t(r) * w + size_t(c)] = img[size_t(r) * w + size_t((c - d + w) % w)];
    return out;
}

// ---- Trainer ----

Trainer::Trainer(const TrainConfig& cfg, const std::vector<RangeImage>& dataset)
    : cfg_(cfg), enc_(FeatureEncoder::random(0)) {
    cfg_.validate();
    ingest_dataset(dataset);
    gen_ = Generator::init(cfg_.gen, cfg_.seed);
    disc_ = Discriminator::init(cfg_.disc, cfg_.seed);
}

Trainer::Trainer(const TrainConfig& cfg, const std::vector<RangeImage>& dataset,
                 const ParamDict& state)
    : cfg_(cfg), enc_(FeatureEncoder::random(0)) {
    cfg_.validate();
    ingest_dataset(dataset);

    ParamDict gdict, ddict;
    std::vector<std::pair<std::string, const Tensor*>> g_moments, d_moments;
    int64_t t_g = 0, t_d = 0;
    for (const auto& [name, t] : state.items) {
        if (starts_with(name, "opt.g.m.") || starts_with(name, "opt.g.v.")) {
            g_moments.emplace_back(name, &t);
        } else if (starts_with(name, "opt.d.m.") || starts_with(name, "opt.d.v.")) {
            d_moments.emplace_back(name, &t);
        } else if (name == "opt.g.t") {
            t_g = int64_t(t.data.at(0));
        } else if (name == "opt.d.t") {
            t_d = int64_t(t.data.at(0));
        } else if (name == "cfg.t.step") {
            step_ = int(t.data.at(0));
        } else if (starts_with(name, "conv.") || starts_with(name, "dense.") ||
                   starts_with(name, "cfg.d.")) {
            ddict.add(name, t);
        } else if (starts_with(name, "map.") || starts_with(name, "block.") ||
                   starts_with(name, "head_") || starts_with(name, "basis.") ||
                   starts_with(name, "cfg.g.")) {
            gdict.add(name, t);
        } else {
            throw std::invalid_argument("train: unknown checkpoint entry '" + name + "'");
        }
    }
    gen_ = Generator::from_params(std::move(gdict));
    disc_ = Discriminator::from_params(std::move(ddict));

    auto restore = [](std::vector<Moments>& opt, const ParamDict& params,
                      const std::vector<std::pair<std::string, const Tensor*>>& entries,
                      int64_t t, const char* side) {
        for (const auto& [full, tensor] : entries) {
            const bool is_m = full[6] == 'm';
            const std::string name = full.substr(8);
            if (!params.has(name) || params.at(name).shape != tensor->shape)
                throw std::invalid_argument(std::string("train: optimizer moment '") + full +
                                            "' does not match a " + side + " parameter");
            AdamState<float>* st = nullptr;
            for (auto& m : opt)
                if (m.name == name) st = &m.state;
            if (st == nullptr) {
                opt.push_back({name, {}});
                st = &opt.back().state;
            }
            (is_m ? st->m : st->v) = tensor->data;
            st->t = t;
        }
        for (const auto& m : opt)
            if (m.state.m.size() != m.state.v.size())
                throw std::invalid_argument(std::string("train: half-restored moments for '") +
                                            m.name + "'");
    };
    restore(opt_g_, gen_.params, g_moments, t_g, "generator");
    restore(opt_d_, disc_.params, d_moments, t_d, "discriminator");
}

void Trainer::ingest_dataset(const std::vector<RangeImage>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (int(dataset.size()) <= cfg_.holdout)
        throw std::invalid_argument("train: dataset has " + std::to_string(dataset.size()) +
                                    " frames, not enough for a holdout of " +
                                    std::to_string(cfg_.holdout));
    grid_ = dataset[0].grid;
    grid_.validate();
    if (grid_.height != cfg_.disc.height || grid_.width != cfg_.disc.width)
        throw std::invalid_argument("train: dataset grid does not match configured dims");
    d_min_ = dataset[0].d_min;
    d_max_ = dataset[0].d_max;

    const int n_train = int(dataset.size()) - cfg_.holdout;
    train_frames_.reserve(size_t(n_train));
    holdout_feats_.reserve(size_t(cfg_.holdout));
    for (size_t i = 0; i < dataset.size(); ++i) {
        const RangeImage& frame = dataset[i];
        if (!frame.grid.same_as(grid_))
            throw std::invalid_argument("train: frame " + std::to_string(i) +
                                        " is on a different grid");
        const RangeImage inv =
            frame.has(Channel::InvDepth) ? frame : to_inverse_depth(frame);
        if (int(i) < n_train) {
            train_frames_.push_back(inv.data(Channel::InvDepth));
        } else {
            PointCloud cloud = unproject(from_inverse_depth(inv));
            if (cloud.size() == 0) cloud.points.push_back({0.f, 0.f, 0.f});
            holdout_feats_.push_back(encode(cloud, enc_));
        }
    }
}

AdamState<float>& Trainer::moments_for(std::vector<Moments>& opt, const std::string& name) {
    for (auto& m : opt)
        if (m.name == name) return m.state;
    opt.push_back({name, {}});
    return opt.back().state;
}

std::vector<float> Trainer::gather_real(int step_tag) const {
    Rng rng = substream(cfg_.seed, {kTagData, uint64_t(step_tag)});
    const size_t px = size_t(grid_.height) * size_t(grid_.width);
    std::vector<float> out;
    out.reserve(size_t(cfg_.batch) * px);
    for (int b = 0; b < cfg_.batch; ++b) {
        const uint32_t idx = rng.uniform_int(uint32_t(train_frames_.size()));
        const std::vector<float>& f = train_frames_[idx];
        out.insert(out.end(), f.begin(), f.end());
    }
    return out;
}

StepLog Trainer::step() {
    StepLog log;
    log.step = step_ + 1;
    const uint64_t st = uint64_t(step_);
    const int B = cfg_.batch, H = grid_.height, W = grid_.width;

    // discriminator update: generator weights ride along as constants
    {
        Tape<float> tp;
        auto gd = stage_params<float>(tp, gen_.params, [](const std::string&) { return false; });
        auto dd = stage_params<float>(tp, disc_.params, [](const std::string&) { return true; });

        Ten<float> x_real = tp.input({B, H, W, 1}, gather_real(int(st)));

        Rng zr = substream(cfg_.seed, {kTagZ, st, 0});
        Ten<float> z = tp.constant({B, cfg_.gen.d_z}, sample_latent(zr, B, cfg_.gen.d_z));
        Ten<float> w = mapping_forward(tp, cfg_.gen, gd, z);
        Rng kr = substream(cfg_.seed, {kTagSub, st, 0});
        const int k = int(kr.uniform_int(uint32_t(W)));
        SynthOut<float> so =
            subgrid_synthesis(tp, cfg_.gen, gd, gen_.params, w, grid_, k, cfg_.mode);
        Rng mr = substream(cfg_.seed, {kTagMask, st, 0});
        Ten<float> mask = sample_mask_st(tp, so.xn_logits, double(cfg_.gen.tau), mr);
        Ten<float> x_fake = tp.mul(so.x_d, mask);

        Rng ar = substream(cfg_.seed, {kTagAugD, st});
        const std::vector<int> shifts = augment_shifts(B, W, cfg_.p_aug, ar);
        Ten<float> sr = discriminate_forward(tp, cfg_.disc, dd, augment_batch(tp, x_real, shifts));
        Ten<float> sf = discriminate_forward(tp, cfg_.disc, dd, augment_batch(tp, x_fake, shifts));

        Ten<float> ld = loss_d(tp, sr, sf);
        log.loss_d = tp.item(ld);
        Ten<float> total = ld;
        if (cfg_.gamma > 0.f) {
            Ten<float> r1 = r1_penalty(tp, sr, x_real, cfg_.gamma);
            log.r1 = tp.item(r1);
            total = tp.add(ld, r1);
        }
        if (!std::isfinite(log.loss_d) || !std::isfinite(log.r1))
            throw NonFiniteAbort("train: non-finite discriminator loss at step " +
                                     std::to_string(log.step) + " (loss_d=" +
                                     fmt_g(log.loss_d) + ", r1=" + fmt_g(log.r1) + ")",
                                 snapshot());

        std::vector<Ten<float>> grads = tp.backward(total);
        for (size_t i = 0; i < dd.trainable_names.size(); ++i) {
            const std::string& name = dd.trainable_names[i];
            adam_step(disc_.params.at(name).data, tp.val(grads[i]), moments_for(opt_d_, name),
                      cfg_.lr);
        }
    }

    // generator update against the freshly updated discriminator
    {
        Tape<float> tp;
        auto gd = stage_params<float>(tp, gen_.params,
                                      [](const std::string& n) { return is_generator_trainable(n); });
        auto dd = stage_params<float>(tp, disc_.params, [](const std::string&) { return false; });

        Rng zr = substream(cfg_.seed, {kTagZ, st, 1});
        Ten<float> z = tp.constant({B, cfg_.gen.d_z}, sample_latent(zr, B, cfg_.gen.d_z));
        Ten<float> w = mapping_forward(tp, cfg_.gen, gd, z);
        Rng kr = substream(cfg_.seed, {kTagSub, st, 1});
        const int k = int(kr.uniform_int(uint32_t(W)));
        SynthOut<float> so =
            subgrid_synthesis(tp, cfg_.gen, gd, gen_.params, w, grid_, k, cfg_.mode);
        Rng mr = substream(cfg_.seed, {kTagMask, st, 1});
        Ten<float> mask = sample_mask_st(tp, so.xn_logits, double(cfg_.gen.tau), mr);
        Ten<float> x_fake = tp.mul(so.x_d, mask);

        Rng ar = substream(cfg_.seed, {kTagAugG, st});
        const std::vector<int> shifts = augment_shifts(B, W, cfg_.p_aug, ar);
        Ten<float> sf = discriminate_forward(tp, cfg_.disc, dd, augment_batch(tp, x_fake, shifts));

        Ten<float> lg = loss_g(tp, sf);
        log.loss_g = tp.item(lg);
        if (!std::isfinite(log.loss_g))
            throw NonFiniteAbort("train: non-finite generator loss at step " +
                                     std::to_string(log.step) + " (loss_g=" +
                                     fmt_g(log.loss_g) + ")",
                                 snapshot());

        std::vector<Ten<float>> grads = tp.backward(lg);
        for (size_t i = 0; i < gd.trainable_names.size(); ++i) {
            const std::string& name = gd.trainable_names[i];
            adam_step(gen_.params.at(name).data, tp.val(grads[i]), moments_for(opt_g_, name),
                      cfg_.lr);
        }
    }

    ++step_;
    return log;
}

double Trainer::eval_fpd() {
    std::vector<std::vector<float>> gen_feats;
    gen_feats.reserve(size_t(cfg_.fpd_clouds));
    const size_t px = size_t(grid_.height) * size_t(grid_.width);
    int remaining = cfg_.fpd_clouds;
    uint64_t chunk = 0;
    while (remaining > 0) {
        const int n = std::min(cfg_.batch, remaining);
        Tape<float> tp;
        auto gd = stage_params<float>(tp, gen_.params, [](const std::string&) { return false; });
        Rng zr = substream(cfg_.seed, {kTagFpdZ, uint64_t(step_), chunk});
        Ten<float> z = tp.constant({n, cfg_.gen.d_z}, sample_latent(zr, n, cfg_.gen.d_z));
        Ten<float> w = mapping_forward(tp, cfg_.gen, gd, z);
        SynthOut<float> so = synthesize_forward(tp, cfg_.gen, gd, gen_.params, w, grid_, cfg_.mode);
        const std::vector<float>& xd = tp.val(so.x_d);
        const std::vector<float>& ln = tp.val(so.xn_logits);
        for (int i = 0; i < n; ++i) {
            RangeImage xdi;
            xdi.grid = grid_;
            xdi.d_min = d_min_;
            xdi.d_max = d_max_;
            xdi.add_channel(Channel::InvDepth,
                            std::vector<float>(xd.begin() + int64_t(i) * int64_t(px),
                                               xd.begin() + int64_t(i + 1) * int64_t(px)));
            RangeImage xni;
            xni.grid = grid_;
            xni.d_min = d_min_;
            xni.d_max = d_max_;
            std::vector<float> prob(px);
            for (size_t j = 0; j < px; ++j)
                prob[j] = float(1.0 / (1.0 + std::exp(-double(ln[size_t(i) * px + j]))));
            xni.add_channel(Channel::Prob, std::move(prob));
            Rng ms = substream(cfg_.seed, {kTagFpdM, uint64_t(step_), chunk, uint64_t(i)});
            const RangeImage m = sample_mask(xni, cfg_.gen.tau, ms.next());
            PointCloud cloud = unproject(from_inverse_depth(compose(xdi, m)));
            if (cloud.size() == 0) cloud.points.push_back({0.f, 0.f, 0.f});
            gen_feats.push_back(encode(cloud, enc_));
        }
        remaining -= n;
        ++chunk;
    }
    return frechet_distance(holdout_feats_, gen_feats);
}

ParamDict Trainer::snapshot() const {
    ParamDict out;
    for (const auto& [name, t] : gen_.params.items) out.add(name, t);
    for (const auto& [name, t] : disc_.params.items) out.add(name, t);
    auto dump = [&out](const std::vector<Moments>& opt, const ParamDict& params,
                       const char* side) {
        int64_t t = 0;
        for (const auto& m : opt) {
            if (m.state.m.empty()) continue;  // never stepped
            const Shape& shape = params.at(m.name).shape;
            out.add(std::string("opt.") + side + ".m." + m.name, Tensor(shape, m.state.m));
            out.add(std::string("opt.") + side + ".v." + m.name, Tensor(shape, m.state.v));
            t = m.state.t;
        }
        out.set_scalar(std::string("opt.") + side + ".t", float(t));
    };
    dump(opt_g_, gen_.params, "g");
    dump(opt_d_, disc_.params, "d");
    out.set_scalar("cfg.t.step", float(step_));
    return out;
}

TrainRunResult run_training(const TrainConfig& cfg, const std::vector<RangeImage>& dataset,
                            const std::string& out_dir, const std::string& resume_ckpt) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    std::unique_ptr<Trainer> tr;
    if (resume_ckpt.empty()) {
        tr = std::make_unique<Trainer>(cfg, dataset);
    } else {
        tr = std::make_unique<Trainer>(cfg, dataset, read_lgck(resume_ckpt));
    }

    TrainRunResult res;
    res.csv_path = out_dir + "/metrics.csv";
    const bool fresh_log = !std::filesystem::exists(res.csv_path);
    std::ofstream log(res.csv_path, std::ios::app);
    if (!log) throw std::runtime_error("train: cannot open " + res.csv_path);
    if (fresh_log) log << "step,loss_d,loss_g,r1,fpd\n" << std::flush;

    auto ckpt_path = [&out_dir](const char* stem, int step) {
        char name[64];
        std::snprintf(name, sizeof name, "%s_%06d.lgck", stem, step);
        return out_dir + "/" + name;
    };

    if (tr->completed_steps() == 0) {
        res.fpd_first = tr->eval_fpd();
        res.fpd_last = res.fpd_first;
        log << "0,,,," << fmt_g(res.fpd_first) << "\n" << std::flush;
    } else {
        res.fpd_first = std::numeric_limits<double>::quiet_NaN();
    }

    try {
        while (tr->completed_steps() < cfg.steps) {
            const StepLog l = tr->step();
            log << l.step << ',' << fmt_g(l.loss_d) << ',' << fmt_g(l.loss_g) << ','
                << fmt_g(l.r1) << ',';
            if (l.step % cfg.fpd_every == 0 || l.step == cfg.steps) {
                res.fpd_last = tr->eval_fpd();
                log << fmt_g(res.fpd_last);
            }
            log << '\n' << std::flush;
            if (l.step % cfg.ckpt_every == 0 || l.step == cfg.steps) {
                res.final_ckpt_path = ckpt_path("ckpt", l.step);
                write_lgck(tr->snapshot(), res.final_ckpt_path);
            }
        }
    } catch (const NonFiniteAbort& e) {
        write_lgck(e.snapshot, ckpt_path("diagnostic", tr->completed_steps()));
        throw;
    }
    if (res.final_ckpt_path.empty()) {
        res.final_ckpt_path = ckpt_path("ckpt", tr->completed_steps());
        write_lgck(tr->snapshot(), res.final_ckpt_path);
    }
    res.final_state = tr->snapshot();
    return res;
}

}  // namespace lidargen
