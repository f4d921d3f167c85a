#include "lidargen/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "lidargen/checkpoint.hpp"
#include "lidargen/geom.hpp"
#include "lidargen/invert.hpp"
#include "lidargen/lri.hpp"
#include "lidargen/metrics.hpp"
#include "lidargen/model.hpp"
#include "lidargen/params.hpp"
#include "lidargen/rng.hpp"
#include "lidargen/scenes.hpp"
#include "lidargen/train.hpp"

namespace lidargen::cli {

namespace {

enum : uint64_t {
    kTagGenZ = 0x9e4a,  // generate: one latent stream per frame index
    kTagGenM = 0x9e4b,  // generate: one ray-drop stream per frame index
};

std::string fmt_num(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    size_t pos = 0;
    while (pos <= s.size()) {
        const size_t comma = s.find(',', pos);
        if (comma == std::string::npos) {
            out.push_back(s.substr(pos));
            break;
        }
        out.push_back(s.substr(pos, comma - pos));
        pos = comma + 1;
    }
    return out;
}

struct MetricSel {
    bool jsd = false, cov = false, mmd = false, one_nna = false;
    bool swd = false, fpd = false, kid = false;

    bool trio() const { return cov || mmd || one_nna; }
};

MetricSel parse_metrics(const std::string& list) {
    MetricSel sel;
    for (const std::string& tok : split_list(list)) {
        if (tok == "all") {
            sel = MetricSel{true, true, true, true, true, true, true};
        } else if (tok == "jsd") {
            sel.jsd = true;
        } else if (tok == "cov") {
            sel.cov = true;
        } else if (tok == "mmd") {
            sel.mmd = true;
        } else if (tok == "1nna") {
            sel.one_nna = true;
        } else if (tok == "swd") {
            sel.swd = true;
        } else if (tok == "fpd") {
            sel.fpd = true;
        } else if (tok == "kid") {
            sel.kid = true;
        } else {
            throw UsageError("--metrics: unknown metric '" + tok +
                             "' (expected all,jsd,cov,mmd,1nna,swd,fpd,kid)");
        }
    }
    return sel;
}

std::vector<double> parse_lambdas(const std::string& list) {
    std::vector<double> out;
    for (const std::string& tok : split_list(list)) {
        double v = 0.0;
        const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (ec != std::errc{} || end != tok.data() + tok.size() || !(v >= 0))
            throw UsageError("--lambdas: bad value '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw UsageError("--lambdas: need at least one value");
    return out;
}

SynthMode mode_of(const std::string& name) {
    return name == "pure" ? SynthMode::Pure : SynthMode::Hierarchical;
}

double deg2rad(double deg) { return deg * M_PI / 180.0; }

void require_exists(const std::string& path) {
    if (!std::filesystem::exists(path))
        throw std::runtime_error(path + ": no such file or directory");
}

// Accepts both bare generator dumps and full training checkpoints; anything
// that is not part of the generator (discriminator, optimizer moments,
// trainer counters) is dropped before reconstruction.
Generator load_generator(const std::string& path) {
    require_exists(path);
    ParamDict all = read_lgck(path);
    ParamDict sub;
    for (const auto& [name, t] : all.items) {
        if (name.rfind("map.", 0) == 0 || name.rfind("block.", 0) == 0 ||
            name.rfind("head_", 0) == 0 || name.rfind("basis.", 0) == 0 ||
            name.rfind("cfg.g.", 0) == 0)
            sub.add(name, t);
    }
    if (!sub.has("cfg.g.d_z"))
        throw std::runtime_error(path + ": no generator parameters in checkpoint");
    return Generator::from_params(std::move(sub));
}

InversionConfig inversion_config(const Command& c) {
    InversionConfig ic;
    ic.iters1 = c.iters1;
    ic.lr1 = float(c.lr1);
    ic.iters2 = c.iters2;
    ic.lr2 = float(c.lr2);
    ic.mean_style_draws = c.draws;
    ic.mode = mode_of(c.mode);
    ic.seed = c.seed;
    ic.validate();
    return ic;
}

RangeImage synthesize_frame(const Generator& g, const AngularGrid& grid, SynthMode mode,
                            float d_min, float d_max, uint64_t seed, uint64_t index) {
    Rng zr = substream(seed, {kTagGenZ, index});
    std::vector<float> z = sample_latent(zr, 1, g.cfg.d_z);

    Tape<float> tp;
    TapeDict<float> td =
        stage_params<float>(tp, g.params, [](const std::string&) { return false; });
    Ten<float> zt = tp.constant({1, g.cfg.d_z}, std::move(z));
    Ten<float> wt = mapping_forward(tp, g.cfg, td, zt);
    const SynthOut<float> so = synthesize_forward(tp, g.cfg, td, g.params, wt, grid, mode);

    RangeImage x_d;
    x_d.grid = grid;
    x_d.d_min = d_min;
    x_d.d_max = d_max;
    x_d.add_channel(Channel::InvDepth, tp.val(so.x_d));

    const std::vector<float>& logits = tp.val(so.xn_logits);
    std::vector<float> prob(logits.size());
    for (size_t i = 0; i < logits.size(); ++i)
        prob[i] = float(1.0 / (1.0 + std::exp(-double(logits[i]))));
    RangeImage x_n = x_d;
    x_n.semantics.clear();
    x_n.channels.clear();
    x_n.add_channel(Channel::Prob, prob);

    RangeImage m = sample_mask(x_n, g.cfg.tau, substream(seed, {kTagGenM, index}).next());
    RangeImage frame = from_inverse_depth(compose(x_d, m));
    frame.add_channel(Channel::Prob, std::move(prob));
    return frame;
}

// RANGE view of a frame regardless of how it was stored.
RangeImage as_range(const RangeImage& f) {
    return f.has(Channel::Range) ? f : from_inverse_depth(f);
}

std::vector<PointCloud> clouds_of(const std::vector<RangeImage>& frames) {
    std::vector<PointCloud> out;
    out.reserve(frames.size());
    for (const RangeImage& f : frames) out.push_back(unproject(as_range(f)));
    return out;
}

std::vector<RangeImage> load_frames(const std::string& dir, int limit) {
    require_exists(dir);
    std::vector<RangeImage> frames = read_dataset(dir);
    if (frames.empty()) throw std::runtime_error(dir + ": dataset is empty");
    if (limit > 0 && int(frames.size()) > limit) frames.resize(size_t(limit));
    return frames;
}

void write_json(const std::string& path, const nlohmann::json& j) {
    atomic_write_bytes(path, j.dump(2) + "\n");
}

int run_synth_data(const Command& c, std::ostream& out) {
    const AngularGrid grid = AngularGrid::uniform(c.height, c.width, deg2rad(c.elev_top),
                                                  deg2rad(c.elev_bottom));
    const std::vector<RangeImage> frames = sample_dataset(
        c.count, c.seed, grid, c.drop, float(c.d_min), float(c.d_max));
    write_dataset(frames, c.out);
    out << "synth-data: wrote " << frames.size() << " frames to " << c.out
        << " (seed=" << c.seed << ")\n";
    return 0;
}

int run_train(const Command& c, std::ostream& out) {
    require_exists(c.data);
    const std::vector<RangeImage> dataset = read_dataset(c.data);

    TrainConfig tc;
    if (!c.config.empty()) {
        require_exists(c.config);
        tc = parse_train_config(read_bytes(c.config), c.config);
    }
    if (c.steps >= 0) tc.steps = c.steps;
    tc.seed = c.seed;  // the command line owns the replay seed
    tc.validate();
    if (!c.resume.empty()) require_exists(c.resume);

    const TrainRunResult res = run_training(tc, dataset, c.out, c.resume);
    out << "train: " << tc.steps << " steps done, fpd " << fmt_num(res.fpd_first)
        << " -> " << fmt_num(res.fpd_last) << ", checkpoint " << res.final_ckpt_path
        << " (seed=" << c.seed << ")\n";
    return 0;
}

int run_generate(const Command& c, std::ostream& out) {
    const Generator g = load_generator(c.ckpt);
    const AngularGrid grid = AngularGrid::uniform(c.height, c.width, deg2rad(c.elev_top),
                                                  deg2rad(c.elev_bottom));
    std::vector<RangeImage> frames;
    frames.reserve(size_t(c.count));
    for (int i = 0; i < c.count; ++i)
        frames.push_back(synthesize_frame(g, grid, mode_of(c.mode), float(c.d_min),
                                          float(c.d_max), c.seed, uint64_t(i)));
    write_dataset(frames, c.out);
    out << "generate: wrote " << frames.size() << " frames to " << c.out
        << " (seed=" << c.seed << ", mode=" << c.mode << ")\n";
    return 0;
}

nlohmann::json inversion_report(const Command& c, const InversionResult& res) {
    nlohmann::json j;
    j["verb"] = c.verb;
    j["target"] = c.target;
    j["l_rec_step1"] = res.l_rec_step1;
    j["l_rec_step2"] = res.l_rec_step2;
    j["iters1"] = c.iters1;
    j["iters2"] = c.iters2;
    j["draws"] = c.draws;
    j["mode"] = c.mode;
    j["seed"] = c.seed;
    return j;
}

int run_invert(const Command& c, std::ostream& out) {
    const Generator g = load_generator(c.ckpt);
    require_exists(c.target);
    const RangeImage target = read_lri(c.target);
    RangeImage mask;
    if (!c.mask.empty()) {
        require_exists(c.mask);
        mask = read_lri(c.mask);
    }
    const InversionResult res =
        invert(g, target, c.mask.empty() ? nullptr : &mask, inversion_config(c));

    namespace fs = std::filesystem;
    write_lri(res.x_d, (fs::path(c.out) / "x_d.lri").string());
    write_lri(res.x_n, (fs::path(c.out) / "x_n.lri").string());
    write_lri(res.x_g, (fs::path(c.out) / "x_g.lri").string());
    write_lri(res.mask, (fs::path(c.out) / "mask.lri").string());
    write_json((fs::path(c.out) / "report.json").string(), inversion_report(c, res));

    out << "invert: l_rec step1=" << fmt_num(res.l_rec_step1)
        << " step2=" << fmt_num(res.l_rec_step2) << ", outputs in " << c.out
        << " (seed=" << c.seed << ")\n";
    return 0;
}

int run_upsample(const Command& c, std::ostream& out) {
    const Generator g = load_generator(c.ckpt);
    require_exists(c.target);
    const RangeImage target = read_lri(c.target);
    const InversionResult res = invert(g, target, nullptr, inversion_config(c));
    const RangeImage up = upsample(res, c.factor);

    namespace fs = std::filesystem;
    write_lri(up, (fs::path(c.out) / "upsampled.lri").string());
    write_lri(from_inverse_depth(up), (fs::path(c.out) / "range.lri").string());
    nlohmann::json j = inversion_report(c, res);
    j["factor"] = c.factor;
    write_json((fs::path(c.out) / "report.json").string(), j);

    out << "upsample: x" << c.factor << " -> " << c.out << "/upsampled.lri (l_rec step2="
        << fmt_num(res.l_rec_step2) << ", seed=" << c.seed << ")\n";
    return 0;
}

int run_restore(const Command& c, std::ostream& out) {
    const Generator g = load_generator(c.ckpt);
    require_exists(c.target);
    const RangeImage target = read_lri(c.target);
    const InversionConfig ic = inversion_config(c);
    const InversionResult res = c.rows > 0
                                    ? restore_rows(g, target, c.rows, ic)
                                    : restore_fraction(g, target, float(c.fraction), ic);

    namespace fs = std::filesystem;
    write_lri(res.x_d, (fs::path(c.out) / "restored.lri").string());
    write_lri(from_inverse_depth(res.x_d), (fs::path(c.out) / "range.lri").string());
    write_lri(res.mask, (fs::path(c.out) / "mask.lri").string());
    nlohmann::json j = inversion_report(c, res);
    if (c.rows > 0)
        j["rows"] = c.rows;
    else
        j["fraction"] = c.fraction;
    write_json((fs::path(c.out) / "report.json").string(), j);

    out << "restore: " << (c.rows > 0 ? "kept " + std::to_string(c.rows) + " rows"
                                      : "kept fraction " + fmt_num(c.fraction))
        << ", l_rec step2=" << fmt_num(res.l_rec_step2) << ", outputs in " << c.out
        << " (seed=" << c.seed << ")\n";
    return 0;
}

int run_raydrop(const Command& c, std::ostream& out) {
    if (!c.ckpt.empty()) {
        const Generator g = load_generator(c.ckpt);
        require_exists(c.target);
        const RangeImage target = read_lri(c.target);
        const RangeImage prob = extract_raydrop(g, target, inversion_config(c));
        write_lri(prob, c.out);
        out << "raydrop: extracted retention map -> " << c.out << " (seed=" << c.seed
            << ")\n";
        return 0;
    }
    if (!c.refs.empty()) {
        const std::vector<RangeImage> refs = load_frames(c.refs, 0);
        const RangeImage prior = prior_pixelwise(refs);
        write_lri(prior, c.out);
        out << "raydrop: pixelwise prior from " << refs.size() << " frames -> " << c.out
            << " (global prior=" << fmt_num(prior_global(refs)) << ", seed=" << c.seed
            << ")\n";
        return 0;
    }
    require_exists(c.in);
    const RangeImage sim = read_lri(c.in);
    RangeImage rendered;
    if (!c.prior_map.empty()) {
        require_exists(c.prior_map);
        rendered = render_raydrop(sim, read_lri(c.prior_map), c.seed);
    } else {
        rendered = render_raydrop(sim, c.prior, c.seed);
    }
    write_lri(rendered, c.out);
    out << "raydrop: rendered drops onto " << c.in << " -> " << c.out
        << " (seed=" << c.seed << ")\n";
    return 0;
}

int run_evaluate(const Command& c, std::ostream& out) {
    const MetricSel sel = parse_metrics(c.metrics);
    const std::vector<RangeImage> real_frames = load_frames(c.real, c.clouds);
    const std::vector<RangeImage> gen_frames = load_frames(c.gen, c.clouds);

    MetricReport rep;
    rep.n_real = int(real_frames.size());
    rep.n_gen = int(gen_frames.size());

    std::vector<PointCloud> real_clouds, gen_clouds;
    if (sel.jsd || sel.trio() || sel.fpd || sel.kid) {
        real_clouds = clouds_of(real_frames);
        gen_clouds = clouds_of(gen_frames);
        for (const auto& cl : real_clouds)
            if (cl.points.empty())
                throw std::runtime_error(c.real + ": frame with no valid returns");
        for (const auto& cl : gen_clouds)
            if (cl.points.empty())
                throw std::runtime_error(c.gen + ": frame with no valid returns");
    }

    if (sel.jsd) rep.jsd = jsd(real_clouds, gen_clouds);

    if (sel.trio()) {
        size_t min_n = size_t(-1);
        for (const auto& cl : real_clouds) min_n = std::min(min_n, cl.points.size());
        for (const auto& cl : gen_clouds) min_n = std::min(min_n, cl.points.size());
        rep.n_points = int(std::min(size_t(c.points), min_n));
        std::vector<PointCloud> rs, gs;
        for (const auto& cl : real_clouds) rs.push_back(fps(cl, rep.n_points));
        for (const auto& cl : gen_clouds) gs.push_back(fps(cl, rep.n_points));
        const CovMmd1nna trio = cov_mmd_1nna(rs, gs);
        rep.cov = trio.cov;
        rep.mmd_emd = trio.mmd;
        rep.one_nna = trio.one_nna;
    }

    if (sel.swd) {
        const int h = real_frames[0].grid.height, w = real_frames[0].grid.width;
        auto images = [&](const std::vector<RangeImage>& frames, const std::string& dir) {
            std::vector<std::vector<float>> imgs;
            for (const RangeImage& f : frames) {
                if (f.grid.height != h || f.grid.width != w)
                    throw std::runtime_error(dir + ": frames disagree on resolution");
                imgs.push_back(f.has(Channel::InvDepth)
                                   ? f.data(Channel::InvDepth)
                                   : to_inverse_depth(f).data(Channel::InvDepth));
            }
            return imgs;
        };
        const SwdReport sr = swd(images(real_frames, c.real), images(gen_frames, c.gen),
                                 h, w, c.seed);
        rep.swd_levels = sr.per_level;
        rep.swd_mean = sr.mean;
    }

    if (sel.fpd || sel.kid) {
        const FeatureEncoder enc = FeatureEncoder::random(0);
        std::vector<std::vector<float>> fr, fg;
        for (const auto& cl : real_clouds) fr.push_back(encode(cl, enc));
        for (const auto& cl : gen_clouds) fg.push_back(encode(cl, enc));
        if (sel.fpd) rep.fpd = frechet_distance(fr, fg);
        if (sel.kid) rep.kid = squared_mmd(fr, fg);
    }

    nlohmann::json j;
    j["verb"] = "evaluate";
    j["config"] = {{"real", c.real},     {"gen", c.gen},       {"metrics", c.metrics},
                   {"points", c.points}, {"clouds", c.clouds}, {"seed", c.seed}};
    nlohmann::json& r = j["report"];
    r["n_real"] = rep.n_real;
    r["n_gen"] = rep.n_gen;
    if (sel.jsd) r["jsd"] = rep.jsd;
    if (sel.cov) r["cov"] = rep.cov;
    if (sel.mmd) r["mmd_emd"] = rep.mmd_emd;
    if (sel.one_nna) r["one_nna"] = rep.one_nna;
    if (sel.trio()) r["n_points"] = rep.n_points;
    if (sel.swd) {
        r["swd_levels"] = rep.swd_levels;
        r["swd_mean"] = rep.swd_mean;
    }
    if (sel.fpd) r["fpd"] = rep.fpd;
    if (sel.kid) r["kid"] = rep.kid;

    out << j.dump(2) << "\n";
    if (!c.out.empty()) write_json(c.out, j);
    return 0;
}

int run_disturb(const Command& c, std::ostream& out) {
    const std::vector<double> lambdas = parse_lambdas(c.lambdas);
    const std::vector<RangeImage> frames = load_frames(c.in, c.clouds);
    const std::vector<PointCloud> clean = clouds_of(frames);
    for (const auto& cl : clean)
        if (cl.points.empty())
            throw std::runtime_error(c.in + ": frame with no valid returns");

    const FeatureEncoder enc = FeatureEncoder::random(0);
    std::vector<std::vector<float>> base;
    for (const auto& cl : clean) base.push_back(encode(cl, enc));

    nlohmann::json rows = nlohmann::json::array();
    for (const double lam : lambdas) {
        const std::vector<PointCloud> noisy = disturb(clean, c.kind, lam, c.seed);
        std::vector<std::vector<float>> feats;
        for (const auto& cl : noisy) feats.push_back(encode(cl, enc));
        rows.push_back({{"lambda", lam},
                        {"fpd", frechet_distance(base, feats)},
                        {"kid", squared_mmd(base, feats)}});
    }

    nlohmann::json j;
    j["verb"] = "disturb";
    j["config"] = {{"in", c.in},
                   {"kind", c.kind},
                   {"lambdas", lambdas},
                   {"clouds", int(clean.size())},
                   {"seed", c.seed}};
    j["rows"] = rows;
    out << j.dump(2) << "\n";
    if (!c.out.empty()) write_json(c.out, j);
    return 0;
}

}  // namespace

Command parse(const std::vector<std::string>& args) {
    Command c;
    CLI::App app{"desk-scale generative LiDAR range imaging toolkit", "lidargen"};
    app.require_subcommand(1);

    const auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", c.seed, "replay seed; every verb is bit-exact given it");
    };
    const auto add_grid = [&](CLI::App* sub) {
        sub->add_option("--height", c.height, "grid rows")->check(CLI::PositiveNumber);
        sub->add_option("--width", c.width, "grid columns")->check(CLI::PositiveNumber);
        sub->add_option("--elev-top", c.elev_top, "top elevation, degrees");
        sub->add_option("--elev-bottom", c.elev_bottom, "bottom elevation, degrees");
        sub->add_option("--dmin", c.d_min, "near depth clamp, meters")
            ->check(CLI::PositiveNumber);
        sub->add_option("--dmax", c.d_max, "far depth clamp, meters")
            ->check(CLI::PositiveNumber);
    };
    const auto add_mode = [&](CLI::App* sub) {
        sub->add_option("--mode", c.mode, "synthesis schedule")
            ->check(CLI::IsMember({"hierarchical", "pure"}));
    };
    const auto add_inversion = [&](CLI::App* sub) {
        sub->add_option("--iters1", c.iters1, "style-code optimization steps")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--lr1", c.lr1, "style-code learning rate")
            ->check(CLI::PositiveNumber);
        sub->add_option("--iters2", c.iters2, "pivotal tuning steps")
            ->check(CLI::NonNegativeNumber);
        sub->add_option("--lr2", c.lr2, "pivotal tuning learning rate")
            ->check(CLI::PositiveNumber);
        sub->add_option("--draws", c.draws, "latents averaged into the initial code")
            ->check(CLI::PositiveNumber);
        add_mode(sub);
    };

    CLI::App* synth = app.add_subcommand("synth-data",
                                         "sample random scenes into an LRI dataset");
    synth->add_option("--out", c.out, "output dataset directory")->required();
    synth->add_option("--count", c.count, "number of frames")->check(CLI::PositiveNumber);
    add_grid(synth);
    synth->add_flag("--drop,!--no-drop", c.drop, "apply per-surface ray drop");
    add_seed(synth);

    CLI::App* train = app.add_subcommand("train", "adversarial training on a dataset");
    train->add_option("--data", c.data, "training dataset directory")->required();
    train->add_option("--out", c.out, "run directory for logs and checkpoints")
        ->required();
    train->add_option("--config", c.config, "key = value hyperparameter file");
    train->add_option("--resume", c.resume, "checkpoint to continue from");
    train->add_option("--steps", c.steps, "override the configured step count (-1 keeps it)")
        ->check(CLI::Range(-1, std::numeric_limits<int>::max()));
    add_seed(train);

    CLI::App* gen = app.add_subcommand("generate", "sample frames from a checkpoint");
    gen->add_option("--ckpt", c.ckpt, "generator checkpoint")->required();
    gen->add_option("--out", c.out, "output dataset directory")->required();
    gen->add_option("--count", c.count, "number of frames")->check(CLI::PositiveNumber);
    add_grid(gen);
    add_mode(gen);
    add_seed(gen);

    CLI::App* inv = app.add_subcommand("invert", "fit the latent scene behind a frame");
    inv->add_option("--ckpt", c.ckpt, "generator checkpoint")->required();
    inv->add_option("--target", c.target, "frame to invert (.lri)")->required();
    inv->add_option("--out", c.out, "output directory")->required();
    inv->add_option("--mask", c.mask, "MASK raster limiting the objective");
    add_inversion(inv);
    add_seed(inv);

    CLI::App* up = app.add_subcommand("upsample", "invert, then re-query a denser grid");
    up->add_option("--ckpt", c.ckpt, "generator checkpoint")->required();
    up->add_option("--target", c.target, "frame to upsample (.lri)")->required();
    up->add_option("--out", c.out, "output directory")->required();
    up->add_option("--factor", c.factor, "row/column multiplier")
        ->check(CLI::IsMember({1, 2, 4}));
    add_inversion(up);
    add_seed(up);

    CLI::App* rest = app.add_subcommand("restore",
                                        "densify a frame from a sparse subset of it");
    rest->add_option("--ckpt", c.ckpt, "generator checkpoint")->required();
    rest->add_option("--target", c.target, "frame to restore (.lri)")->required();
    rest->add_option("--out", c.out, "output directory")->required();
    rest->add_option("--rows", c.rows, "keep this many equally spaced rows");
    rest->add_option("--fraction", c.fraction, "keep this fraction of valid pixels");
    add_inversion(rest);
    add_seed(rest);

    CLI::App* ray = app.add_subcommand("raydrop",
                                       "extract, estimate, or render ray-drop patterns");
    ray->add_option("--out", c.out, "output raster (.lri)")->required();
    ray->add_option("--ckpt", c.ckpt, "extract: generator checkpoint");
    ray->add_option("--target", c.target, "extract: frame whose drops to explain");
    ray->add_option("--refs", c.refs, "estimate: dataset to pool a prior from");
    ray->add_option("--in", c.in, "render: clean frame to drop rays from");
    ray->add_option("--prior", c.prior, "render: global keep probability")
        ->check(CLI::Range(0.0, 1.0));
    ray->add_option("--prior-map", c.prior_map, "render: PROB raster of keep rates");
    add_inversion(ray);
    add_seed(ray);

    CLI::App* ev = app.add_subcommand("evaluate", "distribution metrics between datasets");
    ev->add_option("--real", c.real, "reference dataset directory")->required();
    ev->add_option("--gen", c.gen, "generated dataset directory")->required();
    ev->add_option("--metrics", c.metrics, "comma list: all,jsd,cov,mmd,1nna,swd,fpd,kid");
    ev->add_option("--points", c.points, "per-cloud FPS budget for EMD metrics")
        ->check(CLI::PositiveNumber);
    ev->add_option("--clouds", c.clouds, "cap on frames per side (0 = all)")
        ->check(CLI::NonNegativeNumber);
    ev->add_option("--out", c.out, "also write the JSON report here");
    add_seed(ev);

    CLI::App* dis = app.add_subcommand("disturb",
                                       "metric response to controlled disturbances");
    dis->add_option("--in", c.in, "dataset directory to disturb")->required();
    dis->add_option("--kind", c.kind, "disturbance family")
        ->check(CLI::IsMember({"gauss", "dropin", "inflate", "yaw", "tx", "ty"}));
    dis->add_option("--lambdas", c.lambdas, "comma list of disturbance strengths");
    dis->add_option("--clouds", c.clouds, "cap on frames (0 = all)")
        ->check(CLI::NonNegativeNumber);
    dis->add_option("--out", c.out, "also write the JSON report here");
    add_seed(dis);

    try {
        std::vector<const char*> argv;
        argv.reserve(args.size() + 1);
        argv.push_back("lidargen");
        for (const std::string& a : args) argv.push_back(a.c_str());
        app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        throw HelpRequested{app.help()};
    } catch (const CLI::ParseError& e) {
        throw UsageError(std::string(e.what()) + "\n\n" + app.help());
    }

    c.verb = app.get_subcommands().at(0)->get_name();

    if (c.verb == "synth-data" || c.verb == "generate") {
        if (!(c.elev_top > c.elev_bottom))
            throw UsageError("--elev-top must exceed --elev-bottom");
        if (!(c.d_min < c.d_max)) throw UsageError("--dmin must be less than --dmax");
    }
    if (c.verb == "restore") {
        if ((rest->count("--rows") != 0) + (rest->count("--fraction") != 0) != 1)
            throw UsageError("restore: pass exactly one of --rows or --fraction");
        if (rest->count("--rows") != 0 && c.rows < 1)
            throw UsageError("--rows: must be at least 1");
        if (rest->count("--fraction") != 0 && !(c.fraction > 0.0 && c.fraction <= 1.0))
            throw UsageError("--fraction: must be in (0, 1]");
    }
    if (c.verb == "raydrop") {
        const int sources = int(!c.ckpt.empty()) + int(c.prior >= 0.0) +
                            int(!c.prior_map.empty()) + int(!c.refs.empty());
        if (sources != 1)
            throw UsageError(
                "raydrop: pass exactly one of --ckpt, --prior, --prior-map, --refs");
        if (!c.ckpt.empty() && c.target.empty())
            throw UsageError("raydrop: --target is required with --ckpt");
        if ((c.prior >= 0.0 || !c.prior_map.empty()) && c.in.empty())
            throw UsageError("raydrop: --in is required with --prior / --prior-map");
    }
    if (c.verb == "evaluate") parse_metrics(c.metrics);
    if (c.verb == "disturb") parse_lambdas(c.lambdas);
    return c;
}

std::vector<std::string> format(const Command& c) {
    std::vector<std::string> v{c.verb};
    const auto add = [&](const char* flag, const std::string& val) {
        v.push_back(flag);
        v.push_back(val);
    };
    const auto add_i = [&](const char* flag, long long x) { add(flag, std::to_string(x)); };
    const auto add_d = [&](const char* flag, double x) { add(flag, fmt_num(x)); };
    const auto add_s = [&](const char* flag, const std::string& s) {
        if (!s.empty()) add(flag, s);
    };
    const auto add_grid = [&] {
        add_i("--height", c.height);
        add_i("--width", c.width);
        add_d("--elev-top", c.elev_top);
        add_d("--elev-bottom", c.elev_bottom);
        add_d("--dmin", c.d_min);
        add_d("--dmax", c.d_max);
    };
    const auto add_inversion = [&] {
        add_i("--iters1", c.iters1);
        add_d("--lr1", c.lr1);
        add_i("--iters2", c.iters2);
        add_d("--lr2", c.lr2);
        add_i("--draws", c.draws);
        add("--mode", c.mode);
    };

    if (c.verb == "synth-data") {
        add("--out", c.out);
        add_i("--count", c.count);
        add_grid();
        v.push_back(c.drop ? "--drop" : "--no-drop");
    } else if (c.verb == "train") {
        add("--data", c.data);
        add("--out", c.out);
        add_s("--config", c.config);
        add_s("--resume", c.resume);
        add_i("--steps", c.steps);
    } else if (c.verb == "generate") {
        add("--ckpt", c.ckpt);
        add("--out", c.out);
        add_i("--count", c.count);
        add_grid();
        add("--mode", c.mode);
    } else if (c.verb == "invert") {
        add("--ckpt", c.ckpt);
        add("--target", c.target);
        add("--out", c.out);
        add_s("--mask", c.mask);
        add_inversion();
    } else if (c.verb == "upsample") {
        add("--ckpt", c.ckpt);
        add("--target", c.target);
        add("--out", c.out);
        add_i("--factor", c.factor);
        add_inversion();
    } else if (c.verb == "restore") {
        add("--ckpt", c.ckpt);
        add("--target", c.target);
        add("--out", c.out);
        if (c.rows > 0)
            add_i("--rows", c.rows);
        else
            add_d("--fraction", c.fraction);
        add_inversion();
    } else if (c.verb == "raydrop") {
        add("--out", c.out);
        if (!c.ckpt.empty()) {
            add("--ckpt", c.ckpt);
            add("--target", c.target);
            add_inversion();
        } else if (!c.refs.empty()) {
            add("--refs", c.refs);
        } else {
            add("--in", c.in);
            if (!c.prior_map.empty())
                add("--prior-map", c.prior_map);
            else
                add_d("--prior", c.prior);
        }
    } else if (c.verb == "evaluate") {
        add("--real", c.real);
        add("--gen", c.gen);
        add("--metrics", c.metrics);
        add_i("--points", c.points);
        add_i("--clouds", c.clouds);
        add_s("--out", c.out);
    } else if (c.verb == "disturb") {
        add("--in", c.in);
        add("--kind", c.kind);
        add("--lambdas", c.lambdas);
        add_i("--clouds", c.clouds);
        add_s("--out", c.out);
    } else {
        throw std::invalid_argument("format: unknown verb '" + c.verb + "'");
    }
    add("--seed", std::to_string(c.seed));
    return v;
}

int run(const Command& c, std::ostream& out) {
    if (c.verb == "synth-data") return run_synth_data(c, out);
    if (c.verb == "train") return run_train(c, out);
    if (c.verb == "generate") return run_generate(c, out);
    if (c.verb == "invert") return run_invert(c, out);
    if (c.verb == "upsample") return run_upsample(c, out);
    if (c.verb == "restore") return run_restore(c, out);
    if (c.verb == "raydrop") return run_raydrop(c, out);
    if (c.verb == "evaluate") return run_evaluate(c, out);
    if (c.verb == "disturb") return run_disturb(c, out);
    throw std::invalid_argument("run: unknown verb '" + c.verb + "'");
}

int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Command cmd;
    try {
        cmd = parse(std::vector<std::string>(argv + 1, argv + argc));
    } catch (const HelpRequested& h) {
        out << h.text;
        return 0;
    } catch (const UsageError& u) {
        err << u.what() << "\n";
        return 2;
    }
    try {
        return run(cmd, out);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (...) {
        err << "error: unknown failure\n";
        return 1;
    }
}

}  // namespace lidargen::cli
