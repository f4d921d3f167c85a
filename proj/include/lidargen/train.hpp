#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "lidargen/autodiff.hpp"
#include "lidargen/geom.hpp"
#include "lidargen/metrics.hpp"
#include "lidargen/model.hpp"
#include "lidargen/params.hpp"
#include "lidargen/rng.hpp"

namespace lidargen {

struct TrainConfig {
    GeneratorConfig gen;
    DiscriminatorConfig disc;  // height/width double as the training grid dims

    int steps = 20000;
    int batch = 16;
    float lr = 0.002f;
    float gamma = 1.0f;  // R1 coefficient
    float p_aug = 0.2f;
    uint64_t seed = 0;
    int ckpt_every = 2000;
    int fpd_every = 2000;
    int fpd_clouds = 64;  // generated clouds per FPD evaluation
    int holdout = 64;     // trailing dataset frames reserved for FPD
    SynthMode mode = SynthMode::Hierarchical;

    void validate() const;
};

// flat `key = value` lines, '#' comments, unknown keys rejected
TrainConfig parse_train_config(const std::string& text,
                               const std::string& origin = "<config>");
std::string format_train_config(const TrainConfig& cfg);

// L_D = -mean log sigmoid(real) - mean log(1 - sigmoid(fake)), in log space
template <typename T>
Ten<T> loss_d(Tape<T>& tp, Ten<T> real_logits, Ten<T> fake_logits) {
    return tp.add(tp.mean(tp.softplus(tp.mul_scalar(real_logits, T(-1)))),
                  tp.mean(tp.softplus(fake_logits)));
}

// L_G = -mean log sigmoid(fake)
template <typename T>
Ten<T> loss_g(Tape<T>& tp, Ten<T> fake_logits) {
    return tp.mean(tp.softplus(tp.mul_scalar(fake_logits, T(-1))));
}

// (gamma/2) * mean over batch of ||d sum(scores) / d x||^2.  Each score only
// depends on its own sample, so the summed-gradient norm splits per sample.
template <typename T>
Ten<T> r1_penalty(Tape<T>& tp, Ten<T> scores, Ten<T> x, T gamma) {
    const int n = tp.shape(x)[0];
    Ten<T> gsq = tp.grad_norm_sq(tp.sum(scores), x);
    return tp.mul_scalar(gsq, gamma / (T(2) * T(n)));
}

// per-sample columns shifts: 0 with probability 1 - p_aug, else uniform [0, W)
std::vector<int> augment_shifts(int batch, int width, float p_aug, Rng& rng);

// applies shifts[i] as a circular column shift to sample i of [N,H,W,C]
template <typename T>
Ten<T> augment_batch(Tape<T>& tp, Ten<T> x, const std::vector<int>& shifts) {
    const Shape& s = tp.shape(x);
    if (s.size() != 4) throw std::invalid_argument("augment_batch: NHWC rank-4 only");
    if (int(shifts.size()) != s[0])
        throw std::invalid_argument("augment_batch: one shift per sample required");
    bool any = false;
    for (int sh : shifts) any = any || (sh % s[2] != 0);
    if (!any) return x;
    std::vector<Ten<T>> parts;
    parts.reserve(shifts.size());
    for (int i = 0; i < s[0]; ++i) {
        Ten<T> row = tp.slice(x, 0, i, 1);
        parts.push_back(shifts[size_t(i)] % s[2] == 0
                            ? row
                            : tp.translate_columns_circular(row, shifts[size_t(i)]));
    }
    return tp.concat(parts, 0);
}

// same shift semantics on a host-side H*W raster
std::vector<float> shift_columns(const std::vector<float>& img, int h, int w, int shift);

// queries the generator with azimuths rotated k columns forward and shifts
// the outputs back, so the result stays aligned to `grid` while the INR sees
// a phase-shifted subgrid
template <typename T>
SynthOut<T> subgrid_synthesis(Tape<T>& tp, const GeneratorConfig& cfg,
                              const TapeDict<T>& td, const ParamDict& params, Ten<T> w,
                              const AngularGrid& grid, int k, SynthMode mode) {
    if (k < 0 || k >= grid.width)
        throw std::invalid_argument("subgrid_synthesis: k must be in [0, W)");
    if (k == 0) return synthesize_forward(tp, cfg, td, params, w, grid, mode);
    AngularGrid rot = grid;
    for (int j = 0; j < grid.width; ++j)
        rot.azimuths[size_t(j)] = grid.azimuths[size_t((j + k) % grid.width)];
    SynthOut<T> out = synthesize_forward(tp, cfg, td, params, w, rot, mode);
    return {tp.translate_columns_circular(out.x_d, k),
            tp.translate_columns_circular(out.xn_logits, k)};
}

struct StepLog {
    int step = 0;  // 1-based index of the completed step
    double loss_d = 0.0;
    double loss_g = 0.0;
    double r1 = 0.0;
};

// non-finite loss abort; carries the full training state for post-mortems
struct NonFiniteAbort : std::runtime_error {
    ParamDict snapshot;
    NonFiniteAbort(const std::string& msg, ParamDict snap)
        : std::runtime_error(msg), snapshot(std::move(snap)) {}
};

// Alternating-step adversarial trainer.  All randomness is a function of
// (seed, step index, substream tag), so a resumed run replays the exact
// trajectory of an uninterrupted one.
class Trainer {
public:
    Trainer(const TrainConfig& cfg, const std::vector<RangeImage>& dataset);
    Trainer(const TrainConfig& cfg, const std::vector<RangeImage>& dataset,
            const ParamDict& state);

    StepLog step();     // one discriminator update then one generator update
    double eval_fpd();  // FPD(generated clouds, held-out split)

    ParamDict snapshot() const;  // weights + optimizer moments + step counter
    int completed_steps() const { return step_; }
    const TrainConfig& config() const { return cfg_; }
    const AngularGrid& grid() const { return grid_; }
    const Generator& generator() const { return gen_; }
    const Discriminator& discriminator() const { return disc_; }

private:
    struct Moments {
        std::string name;
        AdamState<float> state;
    };

    void ingest_dataset(const std::vector<RangeImage>& dataset);
    static AdamState<float>& moments_for(std::vector<Moments>& opt, const std::string& name);
    std::vector<float> gather_real(int step_tag) const;

    TrainConfig cfg_;
    AngularGrid grid_;
    float d_min_ = kDefaultDMin;
    float d_max_ = kDefaultDMax;
    std::vector<std::vector<float>> train_frames_;  // INVDEPTH, drops at 0
    std::vector<std::vector<float>> holdout_feats_;
    FeatureEncoder enc_;
    Generator gen_;
    Discriminator disc_;
    std::vector<Moments> opt_g_, opt_d_;
    int step_ = 0;
};

struct TrainRunResult {
    ParamDict final_state;
    double fpd_first = 0.0;  // baseline written to the log before any update
    double fpd_last = 0.0;
    std::string csv_path;
    std::string final_ckpt_path;
};

// Drives Trainer to cfg.steps: appends `step,loss_d,loss_g,r1,fpd` rows to
// out_dir/metrics.csv, writes ckpt_<step>.lgck at the checkpoint cadence, and
// on a non-finite loss writes diagnostic_<step>.lgck before rethrowing.
TrainRunResult run_training(const TrainConfig& cfg, const std::vector<RangeImage>& dataset,
                            const std::string& out_dir,
                            const std::string& resume_ckpt = "");

}  // namespace lidargen
