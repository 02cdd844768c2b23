// Supervised / unsupervised training loops, evaluation and test-time
// optimization.
//
// supervised:   loss = depth_l1(depth, gt_depth)            (reads gt_depth)
// unsupervised: loss = aif_l1(aif, gt_aif) + alpha * smooth  (reads gt_aif)

#ifndef DFF_TRAIN_HPP
#define DFF_TRAIN_HPP

#include <dff/adam.hpp>
#include <dff/augment.hpp>
#include <dff/losses.hpp>
#include <dff/metrics.hpp>
#include <dff/net.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dff
{

enum class TrainMode { supervised, unsupervised };

inline const char *to_string(TrainMode m)
{
    return m == TrainMode::supervised ? "supervised" : "unsupervised";
}

struct TrainConfig {
    TrainMode mode = TrainMode::supervised;
    int steps = 100;
    int batch = 4;
    AdamConfig adam{};
    double alpha = kDefaultAlpha;
    double lambda = kDefaultLambda;
    bool arbitrary_size = false; // draw F in [2, f_max] per sample
    std::size_t f_max = 5;
    bool augment = true;
    AugmentConfig augmentation{};
    std::uint64_t seed = 0;
    int validate_every = 0; // 0 disables periodic validation
    // cosine decay of the Adam step from adam.lr down to lr_floor * adam.lr
    bool cosine_decay = false;
    double lr_floor = 0.05;
};

inline double scheduled_lr(const TrainConfig &cfg, int step)
{
    if (!cfg.cosine_decay || cfg.steps <= 1) {
        return cfg.adam.lr;
    }
    const double pi = 3.14159265358979323846;
    const double u = static_cast<double>(step) / static_cast<double>(cfg.steps - 1);
    return cfg.adam.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(pi * u)));
}

struct EvalSummary {
    MetricReport depth; // field-wise mean over samples
    std::optional<double> aif_l1;
};

struct StepLog {
    int step = 0;
    LossReport loss;
    std::optional<EvalSummary> validation;
};

// Mean metrics over samples that carry gt_depth, and mean AiF L1 over samples
// that carry gt_aif.
template <typename T>
EvalSummary evaluate(const Model<T> &model, std::span<const TrainSample<T>> samples)
{
    EvalSummary s;
    std::size_t nd = 0, na = 0;
    double aif = 0;
    for (const auto &sample : samples) {
        const Inference<T> r = infer(model, sample.stack);
        if (sample.gt_depth) {
            const MetricReport m = compute_metrics(r.depth, *sample.gt_depth, sample.effective_mask());
            s.depth.mae += m.mae;
            s.depth.mse += m.mse;
            s.depth.rmse += m.rmse;
            s.depth.log_rms += m.log_rms;
            s.depth.abs_rel += m.abs_rel;
            s.depth.sqr_rel += m.sqr_rel;
            s.depth.bumpiness += m.bumpiness;
            s.depth.delta1 += m.delta1;
            s.depth.delta2 += m.delta2;
            s.depth.delta3 += m.delta3;
            s.depth.valid_pixel_count += m.valid_pixel_count;
            ++nd;
        }
        if (sample.gt_aif) {
            Tape<T> tape(false);
            aif += static_cast<double>(aif_l1_loss(tape, r.aif, *sample.gt_aif).item());
            ++na;
        }
    }
    if (nd > 0) {
        const double k = 1.0 / static_cast<double>(nd);
        for (double *f : {&s.depth.mae, &s.depth.mse, &s.depth.rmse, &s.depth.log_rms, &s.depth.abs_rel,
                          &s.depth.sqr_rel, &s.depth.bumpiness, &s.depth.delta1, &s.depth.delta2, &s.depth.delta3}) {
            *f *= k;
        }
    }
    if (na > 0) {
        s.aif_l1 = aif / static_cast<double>(na);
    }
    return s;
}

template <typename T>
void check_training_data(std::span<const TrainSample<T>> data, TrainMode mode)
{
    if (data.empty()) {
        throw Error("train: empty dataset");
    }
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (mode == TrainMode::supervised && !data[i].gt_depth) {
            throw Error("train: supervised mode needs gt_depth, missing in sample " + std::to_string(i));
        }
        if (mode == TrainMode::unsupervised && !data[i].gt_aif) {
            throw Error("train: unsupervised mode needs gt_aif, missing in sample " + std::to_string(i));
        }
    }
}

// Random subset of n frames out of F, kept in axis order.
inline std::vector<std::size_t> draw_frames(Rng &rng, std::size_t F, std::size_t n)
{
    std::vector<std::size_t> idx(F);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    for (std::size_t i = 0; i < n; ++i) {
        std::swap(idx[i], idx[i + rng.below(F - i)]);
    }
    idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

// Loss for one (already augmented) sample, recorded on `tape`.
template <typename T>
std::pair<Tensor<T>, LossReport> sample_loss(Tape<T> &tape, const Model<T> &model, const TrainSample<T> &s,
                                             const TrainConfig &cfg)
{
    const Inference<T> r = infer(tape, model, s.stack);
    LossReport rep;
    if (cfg.mode == TrainMode::supervised) {
        Tensor<T> l = depth_l1_loss(tape, r.depth, *s.gt_depth, s.effective_mask());
        rep.depth_l1 = static_cast<double>(l.item());
        rep.total = *rep.depth_l1;
        return {l, rep};
    }
    UnsupervisedLoss<T> u = unsupervised_loss(tape, r.aif, *s.gt_aif, r.depth, static_cast<T>(cfg.alpha),
                                              static_cast<T>(cfg.lambda));
    return {u.total, u.report()};
}

// Trains `model` in place and returns the per-step log. Fully determined by
// (model, data, cfg).
template <typename T>
std::vector<StepLog> train(Model<T> &model, std::span<const TrainSample<T>> data, const TrainConfig &cfg,
                           std::span<const TrainSample<T>> validation = {},
                           const std::function<void(const StepLog &)> &on_step = {})
{
    check_training_data(data, cfg.mode);
    if (cfg.batch < 1 || cfg.steps < 0) {
        throw Error("train: batch must be >= 1 and steps >= 0");
    }
    if (cfg.arbitrary_size && cfg.f_max < 2) {
        throw Error("train: f_max must be >= 2");
    }
    Rng rng(cfg.seed);
    OptimState opt(cfg.adam);
    std::vector<StepLog> log;
    log.reserve(static_cast<std::size_t>(cfg.steps));
    const T inv_batch = T{1} / static_cast<T>(cfg.batch);
    for (int step = 0; step < cfg.steps; ++step) {
        model.zero_grad();
        StepLog entry;
        entry.step = step;
        entry.loss.alpha = cfg.mode == TrainMode::unsupervised ? cfg.alpha : 0.0;
        double tot = 0, dl = 0, al = 0, sm = 0;
        for (int b = 0; b < cfg.batch; ++b) {
            TrainSample<T> s = data[rng.below(data.size())];
            const std::size_t F = s.stack.frames();
            if (cfg.arbitrary_size) {
                const std::size_t hi = std::min(cfg.f_max, F);
                const std::size_t n = 2 + rng.below(hi - 1);
                s.stack = s.stack.subset(draw_frames(rng, F, n));
            }
            if (cfg.augment) {
                s = augment(s, rng, cfg.augmentation);
            }
            Tape<T> tape;
            auto [loss, rep] = sample_loss(tape, model, s, cfg);
            tape.backward(scale(tape, loss, inv_batch));
            tot += rep.total;
            dl += rep.depth_l1.value_or(0.0);
            al += rep.aif_l1.value_or(0.0);
            sm += rep.smooth.value_or(0.0);
        }
        const double k = 1.0 / cfg.batch;
        entry.loss.total = tot * k;
        if (cfg.mode == TrainMode::supervised) {
            entry.loss.depth_l1 = dl * k;
        } else {
            entry.loss.aif_l1 = al * k;
            entry.loss.smooth = sm * k;
        }
        opt.config.lr = scheduled_lr(cfg, step);
        adam_step(opt, model);
        if (cfg.validate_every > 0 && !validation.empty()
            && ((step + 1) % cfg.validate_every == 0 || step + 1 == cfg.steps)) {
            entry.validation = evaluate(model, validation);
        }
        if (on_step) {
            on_step(entry);
        }
        log.push_back(std::move(entry));
    }
    return log;
}

struct TtoConfig {
    int steps = 50;
    int batch = 4;
    AdamConfig adam{};
    double alpha = kDefaultAlpha;
    double lambda = kDefaultLambda;
    std::uint64_t seed = 0;
};

// Adapts `model` on test stacks with the unsupervised objective. gt_depth is
// stripped before training so it cannot be consulted.
template <typename T>
std::vector<StepLog> test_time_optimize(Model<T> &model, std::span<const TrainSample<T>> stacks, const TtoConfig &tc)
{
    std::vector<TrainSample<T>> inputs;
    inputs.reserve(stacks.size());
    for (std::size_t i = 0; i < stacks.size(); ++i) {
        if (!stacks[i].gt_aif) {
            throw Error("test_time_optimize: stack " + std::to_string(i) + " has no AiF ground truth");
        }
        inputs.push_back({stacks[i].stack, std::nullopt, std::nullopt, stacks[i].gt_aif});
    }
    TrainConfig cfg;
    cfg.mode = TrainMode::unsupervised;
    cfg.steps = tc.steps;
    cfg.batch = tc.batch;
    cfg.adam = tc.adam;
    cfg.alpha = tc.alpha;
    cfg.lambda = tc.lambda;
    cfg.augment = false;
    cfg.seed = tc.seed;
    return train<T>(model, inputs, cfg);
}

} // namespace dff

#endif
