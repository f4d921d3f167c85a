#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "lidargen/cli.hpp"
#include "lidargen/geom.hpp"
#include "lidargen/lri.hpp"
#include "lidargen/rng.hpp"

using namespace lidargen;
namespace fs = std::filesystem;

namespace {

std::string temp_dir(const char* stem) {
    static int counter = 0;
    const auto dir = fs::temp_directory_path() /
                     (std::string("lidargen_cli_") + stem + "_" + std::to_string(counter++));
    fs::remove_all(dir);
    return dir.string();
}

void write_text(const std::string& path, const std::string& text) {
    fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path);
    REQUIRE(bool(out));
    out << text;
}

struct CliResult {
    int code;
    std::string out;
    std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full{"lidargen"};
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const std::string& s : full) argv.push_back(s.c_str());
    std::ostringstream out, err;
    const int code = cli::main(int(argv.size()), argv.data(), out, err);
    return {code, out.str(), err.str()};
}

bool contains(const std::string& hay, const std::string& needle) {
    return hay.find(needle) != std::string::npos;
}

// Small hyperparameters so the pipeline smoke completes in seconds.
const char* kTinyConfig =
    "steps = 10\n"
    "batch = 2\n"
    "lr = 0.002\n"
    "gamma = 1\n"
    "p_aug = 0.5\n"
    "ckpt_every = 5\n"
    "fpd_every = 5\n"
    "fpd_clouds = 2\n"
    "holdout = 2\n"
    "mode = hierarchical\n"
    "height = 8\n"
    "width = 16\n"
    "d_base = 4\n"
    "d_layers = 2\n"
    "d_z = 4\n"
    "d_w = 4\n"
    "map_layers = 2\n"
    "map_width = 6\n"
    "n_blocks = 2\n"
    "g_width = 8\n"
    "n_freq = 6\n"
    "btheta_max = 2\n"
    "f_max = 4\n"
    "tau = 0.3\n";

}  // namespace

TEST_CASE("cli: parse fills the generate example") {
    const cli::Command c = cli::parse({"generate", "--ckpt", "m.lgck", "--count", "4",
                                       "--height", "32", "--width", "128", "--seed", "7",
                                       "--out", "d/"});
    CHECK(c.verb == "generate");
    CHECK(c.ckpt == "m.lgck");
    CHECK(c.count == 4);
    CHECK(c.height == 32);
    CHECK(c.width == 128);
    CHECK(c.seed == 7);
    CHECK(c.out == "d/");
    CHECK(c.mode == "hierarchical");       // default preserved
    CHECK(c.elev_top == -2.0);     // degrees
    CHECK(c.elev_bottom == -25.0);
}

TEST_CASE("cli: negative numbers pass through as option values") {
    const cli::Command c =
        cli::parse({"synth-data", "--out", "d", "--elev-top", "-1.5", "--elev-bottom",
                    "-38.25", "--seed", "3"});
    CHECK(c.elev_top == -1.5);
    CHECK(c.elev_bottom == -38.25);
}

TEST_CASE("cli: parse/format round trip over fuzzed command lines") {
    Rng rng = substream(17, {0xf022});
    const auto geti = [&](int lo, int hi) {
        return lo + int(rng.next() % uint64_t(hi - lo + 1));
    };
    const auto coin = [&] { return rng.next() % 2 == 0; };
    const auto num = [&](int scale) {
        // decimal strings of varied precision; equality is on parsed doubles
        return std::to_string(geti(1, 999 * scale)) + "." + std::to_string(geti(0, 999));
    };
    const auto path = [&] {
        const char* pool[] = {"a", "b/c", "data", "m.lgck", "out.lri", "run/x", "q.json"};
        return std::string(pool[geti(0, 6)]);
    };
    const auto seed_str = [&] { return std::to_string(rng.next()); };
    const char* verbs[] = {"synth-data", "train",   "generate", "invert",  "upsample",
                           "restore",    "raydrop", "evaluate", "disturb"};

    for (int it = 0; it < 135; ++it) {
        const std::string verb = verbs[it % 9];
        std::vector<std::string> a{verb};
        const auto opt = [&](const char* flag, const std::string& val) {
            a.push_back(flag);
            a.push_back(val);
        };
        const auto grid_flags = [&] {
            if (coin()) opt("--height", std::to_string(geti(1, 64)));
            if (coin()) opt("--width", std::to_string(geti(1, 256)));
            if (coin()) {
                opt("--elev-top", std::to_string(geti(-5, 30)) + "." + std::to_string(geti(0, 9)));
                opt("--elev-bottom", std::to_string(geti(-60, -25)) + ".5");
            }
            if (coin()) {
                opt("--dmin", "0." + std::to_string(geti(1, 9)));
                opt("--dmax", std::to_string(geti(40, 120)));
            }
        };
        const auto inv_flags = [&] {
            if (coin()) opt("--iters1", std::to_string(geti(0, 600)));
            if (coin()) opt("--lr1", num(1));
            if (coin()) opt("--iters2", std::to_string(geti(0, 600)));
            if (coin()) opt("--lr2", num(1));
            if (coin()) opt("--draws", std::to_string(geti(1, 20000)));
            if (coin()) opt("--mode", coin() ? "pure" : "hierarchical");
        };

        if (verb == "synth-data") {
            opt("--out", path());
            if (coin()) opt("--count", std::to_string(geti(1, 500)));
            grid_flags();
            if (coin()) a.push_back(coin() ? "--drop" : "--no-drop");
        } else if (verb == "train") {
            opt("--data", path());
            opt("--out", path());
            if (coin()) opt("--config", path());
            if (coin()) opt("--resume", path());
            if (coin()) opt("--steps", std::to_string(geti(-1, 5000)));
        } else if (verb == "generate") {
            opt("--ckpt", path());
            opt("--out", path());
            if (coin()) opt("--count", std::to_string(geti(1, 64)));
            grid_flags();
            if (coin()) opt("--mode", coin() ? "pure" : "hierarchical");
        } else if (verb == "invert") {
            opt("--ckpt", path());
            opt("--target", path());
            opt("--out", path());
            if (coin()) opt("--mask", path());
            inv_flags();
        } else if (verb == "upsample") {
            opt("--ckpt", path());
            opt("--target", path());
            opt("--out", path());
            if (coin()) opt("--factor", coin() ? "2" : "4");
            inv_flags();
        } else if (verb == "restore") {
            opt("--ckpt", path());
            opt("--target", path());
            opt("--out", path());
            if (coin())
                opt("--rows", std::to_string(geti(1, 64)));
            else
                opt("--fraction", "0." + std::to_string(geti(1, 99)));
            inv_flags();
        } else if (verb == "raydrop") {
            opt("--out", path());
            const int source = geti(0, 3);
            if (source == 0) {
                opt("--ckpt", path());
                opt("--target", path());
                inv_flags();
            } else if (source == 1) {
                opt("--refs", path());
            } else if (source == 2) {
                opt("--in", path());
                opt("--prior", "0." + std::to_string(geti(0, 999)));
            } else {
                opt("--in", path());
                opt("--prior-map", path());
            }
        } else if (verb == "evaluate") {
            opt("--real", path());
            opt("--gen", path());
            if (coin()) {
                const char* pool[] = {"all", "jsd", "jsd,fpd", "cov,mmd,1nna", "swd,kid"};
                opt("--metrics", pool[geti(0, 4)]);
            }
            if (coin()) opt("--points", std::to_string(geti(1, 512)));
            if (coin()) opt("--clouds", std::to_string(geti(0, 64)));
            if (coin()) opt("--out", path());
        } else {
            opt("--in", path());
            if (coin()) opt("--kind", coin() ? "yaw" : "dropin");
            if (coin()) opt("--lambdas", coin() ? "0,0.01,0.1" : num(1));
            if (coin()) opt("--clouds", std::to_string(geti(0, 64)));
            if (coin()) opt("--out", path());
        }
        if (coin()) opt("--seed", seed_str());

        CAPTURE(it);
        const cli::Command c1 = cli::parse(a);
        const std::vector<std::string> canon = cli::format(c1);
        const cli::Command c2 = cli::parse(canon);
        CHECK(c1 == c2);
    }
}

TEST_CASE("cli: usage errors name the offending flag") {
    CHECK_THROWS_AS(cli::parse({}), cli::UsageError);
    CHECK_THROWS_AS(cli::parse({"frobnicate"}), cli::UsageError);

    const auto message_of = [](const std::vector<std::string>& args) {
        try {
            cli::parse(args);
        } catch (const cli::UsageError& e) {
            return std::string(e.what());
        }
        return std::string("<no error>");
    };
    CHECK(contains(message_of({"train", "--out", "o"}), "--data"));
    CHECK(contains(message_of({"synth-data", "--out", "d", "--count", "0"}), "--count"));
    CHECK(contains(message_of({"upsample", "--ckpt", "m", "--target", "t", "--out", "o",
                               "--factor", "3"}),
                   "--factor"));
    CHECK(contains(message_of({"generate", "--ckpt", "m", "--out", "d", "--bogus", "1"}),
                   "--bogus"));
    CHECK(contains(message_of({"evaluate", "--real", "a", "--gen", "b", "--metrics",
                               "jsd,flub"}),
                   "--metrics"));
    CHECK(contains(message_of({"disturb", "--in", "d", "--lambdas", "0.1,,2"}),
                   "--lambdas"));
    CHECK(contains(message_of({"disturb", "--in", "d", "--kind", "melt"}), "--kind"));
    CHECK(contains(message_of({"synth-data", "--out", "d", "--elev-top", "-30"}),
                   "--elev-top"));

    // restore wants exactly one subset selector
    CHECK_THROWS_AS(cli::parse({"restore", "--ckpt", "m", "--target", "t", "--out", "o"}),
                    cli::UsageError);
    CHECK_THROWS_AS(cli::parse({"restore", "--ckpt", "m", "--target", "t", "--out", "o",
                                "--rows", "4", "--fraction", "0.5"}),
                    cli::UsageError);
    CHECK_THROWS_AS(cli::parse({"restore", "--ckpt", "m", "--target", "t", "--out", "o",
                                "--fraction", "1.5"}),
                    cli::UsageError);

    // raydrop wants exactly one prior source, with its companions present
    CHECK_THROWS_AS(cli::parse({"raydrop", "--out", "o"}), cli::UsageError);
    CHECK_THROWS_AS(cli::parse({"raydrop", "--out", "o", "--ckpt", "m", "--prior", "0.5"}),
                    cli::UsageError);
    CHECK_THROWS_AS(cli::parse({"raydrop", "--out", "o", "--ckpt", "m"}), cli::UsageError);
    CHECK_THROWS_AS(cli::parse({"raydrop", "--out", "o", "--prior", "0.5"}),
                    cli::UsageError);
}

TEST_CASE("cli: --help surfaces verb documentation") {
    bool hit = false;
    try {
        cli::parse({"--help"});
    } catch (const cli::HelpRequested& h) {
        hit = true;
        CHECK(contains(h.text, "synth-data"));
        CHECK(contains(h.text, "evaluate"));
    }
    CHECK(hit);

    hit = false;
    try {
        cli::parse({"invert", "--help"});
    } catch (const cli::HelpRequested& h) {
        hit = true;
        CHECK(contains(h.text, "--iters1"));
        CHECK(contains(h.text, "--draws"));
    }
    CHECK(hit);
}

TEST_CASE("cli: exit codes follow the 0/1/2 contract") {
    const CliResult help = run_cli({"--help"});
    CHECK(help.code == 0);
    CHECK(contains(help.out, "lidargen"));
    CHECK(help.err.empty());

    const CliResult usage = run_cli({"train", "--out", "x"});
    CHECK(usage.code == 2);
    CHECK(contains(usage.err, "--data"));
    CHECK(usage.out.empty());

    const CliResult missing = run_cli({"generate", "--ckpt", "no_such.lgck", "--out",
                                       temp_dir("gen_missing")});
    CHECK(missing.code == 1);
    CHECK(contains(missing.err, "no_such.lgck"));

    const CliResult no_data = run_cli({"evaluate", "--real", "missing_dir_a", "--gen",
                                       "missing_dir_b"});
    CHECK(no_data.code == 1);
    CHECK(contains(no_data.err, "missing_dir_a"));
}

TEST_CASE("cli: pipeline smoke from scenes to metrics") {
    const std::string root = temp_dir("pipe");
    const std::string data = root + "/data";
    const std::string run = root + "/run";
    const std::string gen_dir = root + "/gen";
    const std::string cfg_path = root + "/tiny.cfg";
    const std::vector<std::string> grid_flags = {"--height", "8",        "--width",
                                                 "16",       "--elev-top", "5",
                                                 "--elev-bottom", "-15"};
    const auto with_grid = [&](std::vector<std::string> a) {
        a.insert(a.end(), grid_flags.begin(), grid_flags.end());
        return a;
    };

    // synth-data
    const CliResult sd = run_cli(with_grid(
        {"synth-data", "--out", data, "--count", "12", "--seed", "1"}));
    CHECK(sd.code == 0);
    CHECK(contains(sd.out, "seed=1"));
    CHECK(fs::exists(data + "/000000.lri"));
    CHECK(fs::exists(data + "/000011.lri"));
    CHECK(fs::exists(data + "/manifest.txt"));

    // train
    write_text(cfg_path, kTinyConfig);
    const CliResult tr = run_cli(
        {"train", "--data", data, "--out", run, "--config", cfg_path, "--seed", "0"});
    CHECK(tr.code == 0);
    CHECK(contains(tr.out, "checkpoint"));
    const std::string ckpt = run + "/ckpt_000010.lgck";
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(run + "/metrics.csv"));

    // generate: frames in the dataset layout
    const CliResult ge = run_cli(with_grid(
        {"generate", "--ckpt", ckpt, "--out", gen_dir, "--count", "8", "--seed", "2"}));
    CHECK(ge.code == 0);
    CHECK(contains(ge.out, "seed=2"));
    const RangeImage frame = read_lri(gen_dir + "/000003.lri");
    CHECK(frame.grid.height == 8);
    CHECK(frame.grid.width == 16);
    CHECK(frame.has(Channel::Range));
    CHECK(frame.has(Channel::Mask));
    CHECK(frame.has(Channel::Prob));

    // bit-exact replay, seed sensitivity, and count-prefix stability
    const std::string gen2 = root + "/gen2";
    const CliResult ge2 = run_cli(with_grid(
        {"generate", "--ckpt", ckpt, "--out", gen2, "--count", "8", "--seed", "2"}));
    CHECK(ge2.code == 0);
    CHECK(read_bytes(gen2 + "/000003.lri") == read_bytes(gen_dir + "/000003.lri"));
    const std::string gen3 = root + "/gen3";
    const CliResult ge3 = run_cli(with_grid(
        {"generate", "--ckpt", ckpt, "--out", gen3, "--count", "3", "--seed", "2"}));
    CHECK(ge3.code == 0);
    CHECK(read_bytes(gen3 + "/000002.lri") == read_bytes(gen_dir + "/000002.lri"));
    const std::string gen4 = root + "/gen4";
    const CliResult ge4 = run_cli(with_grid(
        {"generate", "--ckpt", ckpt, "--out", gen4, "--count", "3", "--seed", "9"}));
    CHECK(ge4.code == 0);
    CHECK(read_bytes(gen4 + "/000002.lri") != read_bytes(gen_dir + "/000002.lri"));

    // evaluate: self-comparison pins jsd at zero
    const CliResult self = run_cli(
        {"evaluate", "--real", data, "--gen", data, "--metrics", "jsd"});
    CHECK(self.code == 0);
    const auto jself = nlohmann::json::parse(self.out);
    CHECK(jself["report"]["jsd"].get<double>() == 0.0);
    CHECK(jself["config"]["seed"].get<uint64_t>() == 0);

    // evaluate: real vs generated, JSON written atomically
    const std::string eval_path = root + "/eval.json";
    const CliResult ev = run_cli({"evaluate", "--real", data, "--gen", gen_dir,
                                  "--metrics", "jsd,fpd,kid", "--out", eval_path});
    CHECK(ev.code == 0);
    CHECK(fs::exists(eval_path));
    const auto jev = nlohmann::json::parse(ev.out);
    CHECK(jev["report"]["n_real"].get<int>() == 12);
    CHECK(jev["report"]["n_gen"].get<int>() == 8);
    CHECK(std::isfinite(jev["report"]["fpd"].get<double>()));
    CHECK(jev["report"]["fpd"].get<double>() >= 0.0);
    CHECK(std::isfinite(jev["report"]["kid"].get<double>()));
    CHECK(nlohmann::json::parse(read_bytes(eval_path)) == jev);

    // evaluate: EMD-based trio on a reduced budget
    const CliResult trio = run_cli({"evaluate", "--real", data, "--gen", gen_dir,
                                    "--metrics", "cov,mmd,1nna", "--points", "16",
                                    "--clouds", "4"});
    CHECK(trio.code == 0);
    const auto jt = nlohmann::json::parse(trio.out);
    CHECK(jt["report"]["cov"].get<double>() >= 0.0);
    CHECK(jt["report"]["cov"].get<double>() <= 1.0);
    CHECK(jt["report"]["one_nna"].get<double>() >= 0.0);
    CHECK(jt["report"]["one_nna"].get<double>() <= 1.0);
    CHECK(jt["report"]["n_points"].get<int>() == 16);

    // invert + upsample + restore + raydrop on one target frame
    const std::string target = data + "/000000.lri";
    const std::string inv_dir = root + "/inv";
    const std::vector<std::string> inv_budget = {"--iters1", "6", "--iters2", "4",
                                                 "--draws", "64"};
    auto with_budget = [&](std::vector<std::string> a) {
        a.insert(a.end(), inv_budget.begin(), inv_budget.end());
        return a;
    };
    const CliResult iv = run_cli(with_budget(
        {"invert", "--ckpt", ckpt, "--target", target, "--out", inv_dir, "--seed", "3"}));
    CHECK(iv.code == 0);
    for (const char* name : {"x_d.lri", "x_n.lri", "x_g.lri", "mask.lri", "report.json"})
        CHECK(fs::exists(inv_dir + "/" + name));
    const auto jinv = nlohmann::json::parse(read_bytes(inv_dir + "/report.json"));
    CHECK(std::isfinite(jinv["l_rec_step1"].get<double>()));
    CHECK(jinv["l_rec_step2"].get<double>() <= jinv["l_rec_step1"].get<double>());
    CHECK(jinv["seed"].get<uint64_t>() == 3);

    const std::string up_dir = root + "/up";
    const CliResult up = run_cli(with_budget({"upsample", "--ckpt", ckpt, "--target",
                                              target, "--out", up_dir, "--factor", "2"}));
    CHECK(up.code == 0);
    const RangeImage up_img = read_lri(up_dir + "/upsampled.lri");
    CHECK(up_img.grid.height == 16);
    CHECK(up_img.grid.width == 32);
    CHECK(up_img.has(Channel::InvDepth));

    const std::string rest_dir = root + "/rest";
    const CliResult rs = run_cli(with_budget({"restore", "--ckpt", ckpt, "--target",
                                              target, "--out", rest_dir, "--rows", "4"}));
    CHECK(rs.code == 0);
    const RangeImage restored = read_lri(rest_dir + "/range.lri");
    CHECK(restored.grid.height == 8);
    int valid = 0;
    for (int i = 0; i < 8 * 16; ++i) valid += restored.valid_at(i) ? 1 : 0;
    CHECK(valid == 8 * 16);  // the re-queried scene is complete

    const std::string prob_path = root + "/prob.lri";
    const CliResult rx = run_cli(with_budget({"raydrop", "--ckpt", ckpt, "--target",
                                              target, "--out", prob_path, "--seed", "4"}));
    CHECK(rx.code == 0);
    const RangeImage prob = read_lri(prob_path);
    CHECK(prob.has(Channel::Prob));
    for (float p : prob.data(Channel::Prob)) {
        CHECK(p >= 0.f);
        CHECK(p <= 1.f);
    }

    // raydrop: pooled prior, then a render against it and against a scalar
    const std::string prior_path = root + "/prior.lri";
    const CliResult rp = run_cli({"raydrop", "--refs", data, "--out", prior_path});
    CHECK(rp.code == 0);
    CHECK(contains(rp.out, "global prior="));
    CHECK(read_lri(prior_path).has(Channel::Prob));

    const CliResult rr = run_cli({"raydrop", "--in", target, "--prior", "0.7", "--out",
                                  root + "/rendered.lri", "--seed", "5"});
    CHECK(rr.code == 0);
    const RangeImage rendered = read_lri(root + "/rendered.lri");
    const RangeImage original = read_lri(target);
    int kept = 0, had = 0;
    for (int i = 0; i < 8 * 16; ++i) {
        had += original.valid_at(i) ? 1 : 0;
        kept += rendered.valid_at(i) ? 1 : 0;
    }
    CHECK(kept <= had);

    const CliResult rm = run_cli({"raydrop", "--in", target, "--prior-map", prior_path,
                                  "--out", root + "/rendered2.lri", "--seed", "6"});
    CHECK(rm.code == 0);

    // disturb: additive noise moves the feature distance away from zero
    const CliResult di = run_cli({"disturb", "--in", data, "--kind", "gauss", "--lambdas",
                                  "0,0.05", "--clouds", "6", "--seed", "1"});
    CHECK(di.code == 0);
    const auto jd = nlohmann::json::parse(di.out);
    REQUIRE(jd["rows"].size() == 2);
    CHECK(jd["rows"][0]["lambda"].get<double>() == 0.0);
    CHECK(jd["rows"][0]["fpd"].get<double>() < 1e-6);
    CHECK(jd["rows"][1]["fpd"].get<double>() > jd["rows"][0]["fpd"].get<double>());
    CHECK(std::isfinite(jd["rows"][1]["kid"].get<double>()));
}

TEST_CASE("cli: swd self-comparison is zero on a pyramid-friendly grid") {
    const std::string root = temp_dir("swd");
    const std::string data = root + "/data";
    const CliResult sd = run_cli({"synth-data", "--out", data, "--count", "6", "--height",
                                  "32", "--width", "32", "--elev-top", "5",
                                  "--elev-bottom", "-25", "--seed", "2"});
    CHECK(sd.code == 0);
    const CliResult ev = run_cli(
        {"evaluate", "--real", data, "--gen", data, "--metrics", "swd"});
    CHECK(ev.code == 0);
    const auto j = nlohmann::json::parse(ev.out);
    REQUIRE(j["report"]["swd_levels"].size() == 3);
    for (const auto& level : j["report"]["swd_levels"])
        CHECK(level.get<double>() == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(j["report"]["swd_mean"].get<double>() == doctest::Approx(0.0).epsilon(1e-9));
}
