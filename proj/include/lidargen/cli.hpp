#pragma once

#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lidargen::cli {

// Malformed command line; the driver maps it to exit code 2 and prints the
// message (which already embeds the relevant usage text) on stderr.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// --help anywhere; the driver prints `text` on stdout and exits 0.
struct HelpRequested {
    std::string text;
};

// One parsed invocation: the verb plus every flag, with defaults filled in.
// Fields not used by a verb stay at their defaults, so format(parse(argv))
// reparses to an equal Command.
struct Command {
    std::string verb;

    // paths
    std::string out;        // output directory (most verbs) or file (raydrop, evaluate --out)
    std::string data;       // train: dataset directory
    std::string ckpt;       // model checkpoint (.lgck)
    std::string target;     // inversion-family input frame (.lri)
    std::string mask;       // invert: optional MASK raster limiting the objective
    std::string config;     // train: key = value hyperparameter file
    std::string resume;     // train: checkpoint to continue from
    std::string real;       // evaluate: reference dataset directory
    std::string gen;        // evaluate: generated dataset directory
    std::string in;         // raydrop/disturb: input frame or dataset directory
    std::string prior_map;  // raydrop: PROB raster with per-pixel keep rates
    std::string refs;       // raydrop: dataset directory to estimate a prior from

    uint64_t seed = 0;

    // synth-data / generate grid
    int count = 4;
    int height = 32;
    int width = 128;
    double elev_top = -2.0;      // degrees
    double elev_bottom = -25.0;  // degrees
    double d_min = 1.0;
    double d_max = 80.0;
    bool drop = true;          // synth-data: apply per-surface ray drop
    std::string mode = "hierarchical";  // synthesis schedule: hierarchical | pure

    // train
    int steps = -1;  // >= 0 overrides the config value

    // inversion family
    int iters1 = 500;
    double lr1 = 0.05;
    int iters2 = 500;
    double lr2 = 0.0005;
    int draws = 10000;  // latents averaged into the initial style code
    int factor = 2;     // upsample: 1, 2, or 4
    int rows = 0;       // restore: keep this many equally spaced rows
    double fraction = 0.0;  // restore: keep this fraction of valid pixels
    double prior = -1.0;    // raydrop: global keep probability (< 0 = unset)

    // evaluate / disturb
    std::string metrics = "all";  // comma list: jsd,cov,mmd,1nna,swd,fpd,kid
    int points = 128;             // per-cloud FPS budget for EMD-based metrics
    int clouds = 0;               // 0 = use every frame
    std::string kind = "gauss";   // disturb: gauss,dropin,inflate,yaw,tx,ty
    std::string lambdas = "0.001,0.003,0.01,0.03,0.1";

    bool operator==(const Command&) const = default;
};

// Throws UsageError on anything malformed and HelpRequested for --help.
Command parse(const std::vector<std::string>& args);

// Canonical argv (verb first, no program name) that reparses to an equal
// Command.  Only the flags belonging to cmd.verb are emitted.
std::vector<std::string> format(const Command& cmd);

// Executes a parsed command; returns 0 and reports progress on `out`.
// Failures surface as exceptions for the driver to map to exit code 1.
int run(const Command& cmd, std::ostream& out);

// Full driver: parse + run with the 0/1/2 exit-code contract.
int main(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace lidargen::cli
