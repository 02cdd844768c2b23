// dff: command-line front end for synthesis, training, inference and evaluation.

#include <dff/baseline.hpp>
#include <dff/io/checkpoint.hpp>
#include <dff/io/dataset.hpp>
#include <dff/io/manifest.hpp>
#include <dff/metrics.hpp>
#include <dff/train.hpp>

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

using namespace dff;

namespace
{

std::vector<double> parse_csv(const std::string &csv)
{
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        double v = 0;
        try {
            v = std::stod(item, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (used == 0 || used != item.size()) {
            throw Error("--positions: cannot parse '" + item + "' as a number");
        }
        out.push_back(v);
    }
    return out;
}

Tensor<float> clamp01(Tensor<float> t)
{
    for (auto &v : t.values()) {
        v = std::clamp(v, 0.0f, 1.0f);
    }
    return t;
}

// Largest multiple of `m` that is <= min(cap, H, W) over the dataset.
std::size_t pick_crop(const std::vector<TrainSample<float>> &data, std::size_t cap, std::size_t m)
{
    std::size_t c = cap;
    for (const auto &s : data) {
        c = std::min({c, s.stack.height(), s.stack.width()});
    }
    c -= c % m;
    if (c == 0) {
        throw Error("images smaller than the model's spatial multiple " + std::to_string(m));
    }
    return c;
}

struct ModelFlags {
    ModelConfig config;
    double lr = AdamConfig{}.lr;
    int batch = 4;

    void add(CLI::App *app, bool architecture)
    {
        if (architecture) {
            app->add_option("--levels", config.levels, "encoder/decoder levels")->capture_default_str();
            app->add_option("--base-channels", config.base_channels, "channels at the first level")
                ->capture_default_str();
            app->add_option("--stack-kernel", config.stack_kernel, "kernel extent along the stack axis")
                ->capture_default_str();
        }
        app->add_option("--lr", lr, "Adam learning rate")->capture_default_str();
        app->add_option("--batch", batch, "samples per step")->capture_default_str();
    }
};

void print_step(const StepLog &s, int every)
{
    if ((s.step + 1) % every == 0) {
        std::printf("step %d loss %.6g\n", s.step + 1, s.loss.total);
        std::fflush(stdout);
    }
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"depth from focus with attention fusion"};
    app.require_subcommand(1);

    // synth
    std::string s_aif, s_depth, s_positions, s_out;
    double s_kappa = 1.0;
    auto *synth = app.add_subcommand("synth", "render a focal stack from an AiF image and a depth map");
    synth->add_option("--scene-aif", s_aif, "AiF image (png)")->required();
    synth->add_option("--scene-depth", s_depth, "depth map (pfm)")->required();
    synth->add_option("--positions", s_positions, "comma-separated focus positions")->required();
    synth->add_option("--kappa", s_kappa, "blur radius per unit focus mismatch")->required();
    synth->add_option("--out", s_out, "output directory")->required();

    // gen-dataset
    std::uint64_t g_seed = 0;
    std::size_t g_count = 0, g_size = 0, g_frames = 0;
    double g_kappa = 1.0;
    std::string g_out;
    auto *gen = app.add_subcommand("gen-dataset", "write a procedural toy dataset");
    gen->add_option("--seed", g_seed)->required();
    gen->add_option("--count", g_count)->required();
    gen->add_option("--size", g_size, "square image size, multiple of 8")->required();
    gen->add_option("--frames", g_frames)->required();
    gen->add_option("--kappa", g_kappa)->required();
    gen->add_option("--out", g_out)->required();

    // train
    std::string t_data, t_mode, t_out;
    bool t_arbitrary = false;
    int t_steps = 0;
    std::uint64_t t_seed = 0;
    double t_alpha = kDefaultAlpha, t_lambda = kDefaultLambda;
    ModelFlags t_model;
    auto *tr = app.add_subcommand("train", "train a model from scratch");
    tr->add_option("--data", t_data, "dataset directory")->required();
    tr->add_option("--mode", t_mode)->required()->check(CLI::IsMember({"supervised", "unsupervised"}));
    tr->add_flag("--arbitrary-size", t_arbitrary, "draw the stack size per sample");
    tr->add_option("--steps", t_steps)->required();
    tr->add_option("--seed", t_seed)->required();
    tr->add_option("--alpha", t_alpha)->capture_default_str();
    tr->add_option("--lambda", t_lambda)->capture_default_str();
    tr->add_option("--out", t_out, "checkpoint path")->required();
    t_model.add(tr, true);

    // infer
    std::string i_ckpt, i_stack, i_depth, i_aif;
    auto *inf = app.add_subcommand("infer", "predict depth and AiF for one stack");
    inf->add_option("--ckpt", i_ckpt)->required();
    inf->add_option("--stack", i_stack, "stack manifest")->required();
    inf->add_option("--out-depth", i_depth, "pfm")->required();
    inf->add_option("--out-aif", i_aif, "png")->required();

    // eval
    std::string e_pred, e_gt, e_mask;
    auto *ev = app.add_subcommand("eval", "depth metrics of a prediction against ground truth");
    ev->add_option("--pred", e_pred)->required();
    ev->add_option("--gt", e_gt)->required();
    ev->add_option("--mask", e_mask, "png; nonzero = valid");

    // ttopt
    std::string o_ckpt, o_data, o_out;
    int o_steps = 0;
    std::uint64_t o_seed = 0;
    ModelFlags o_model;
    auto *tto = app.add_subcommand("ttopt", "adapt a model to test stacks using AiF only");
    tto->add_option("--ckpt", o_ckpt)->required();
    tto->add_option("--data", o_data)->required();
    tto->add_option("--steps", o_steps)->required();
    tto->add_option("--seed", o_seed)->required();
    tto->add_option("--out", o_out)->required();
    o_model.add(tto, false);

    // baseline
    std::string b_stack, b_depth;
    auto *base = app.add_subcommand("baseline", "argmax depth from focus with modified Laplacian");
    base->add_option("--stack", b_stack)->required();
    base->add_option("--out-depth", b_depth)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            Scene<float> scene;
            scene.aif = io::detail::to_rgb(io::read_png(s_aif).data);
            scene.depth = io::read_pfm(s_depth).data;
            scene.kappa = s_kappa;
            const SynthesizedStack<float> st = synth_stack(scene, FocusAxis(parse_csv(s_positions)));
            const std::string m = io::write_stack(s_out, st.stack, st.depth, st.aif, {io::PngDepth::png8, s_kappa});
            std::printf("%s\n", m.c_str());
        } else if (gen->parsed()) {
            const auto paths = io::gen_toy_dataset(g_out, g_seed, g_count, g_size, g_frames, g_kappa);
            std::printf("wrote %zu scenes to %s\n", paths.size(), g_out.c_str());
        } else if (tr->parsed()) {
            const auto data = io::load_dataset(t_data);
            t_model.config.seed = t_seed;
            Model<float> model = build_model<float>(t_model.config);
            TrainConfig cfg;
            cfg.mode = t_mode == "supervised" ? TrainMode::supervised : TrainMode::unsupervised;
            cfg.steps = t_steps;
            cfg.batch = t_model.batch;
            cfg.adam.lr = t_model.lr;
            cfg.alpha = t_alpha;
            cfg.lambda = t_lambda;
            cfg.arbitrary_size = t_arbitrary;
            cfg.seed = t_seed;
            cfg.augmentation.crop = pick_crop(data, 64, t_model.config.spatial_multiple());
            const int every = std::max(1, t_steps / 20);
            train<float>(model, data, cfg, {}, [&](const StepLog &s) { print_step(s, every); });
            io::save_checkpoint(t_out, model);
        } else if (inf->parsed()) {
            const Model<float> model = io::load_checkpoint(i_ckpt);
            const io::LoadedStack ls = io::manifest_load(i_stack);
            const Inference<float> r = infer(model, ls.stack);
            io::write_pfm(i_depth, r.depth);
            io::write_png(i_aif, clamp01(r.aif));
        } else if (ev->parsed()) {
            const Tensor<float> pred = io::read_pfm(e_pred).data, gt = io::read_pfm(e_gt).data;
            MetricReport rep;
            if (!e_mask.empty()) {
                const Tensor<float> m = io::read_png(e_mask).data;
                if (m.dim(0) != gt.dim(0) || m.dim(1) != gt.dim(1)) {
                    throw Error("eval: mask " + shape_str(m.shape()) + " does not match gt " + shape_str(gt.shape()));
                }
                std::vector<std::uint8_t> valid(gt.dim(0) * gt.dim(1));
                for (std::size_t p = 0; p < valid.size(); ++p) {
                    valid[p] = m[p * m.dim(2)] > 0.0f ? 1 : 0;
                }
                rep = compute_metrics(pred, gt, ValidityMask(gt.dim(0), gt.dim(1), std::move(valid)));
            } else {
                rep = compute_metrics(pred, gt);
            }
            std::cout << rep.to_text();
        } else if (tto->parsed()) {
            Model<float> model = io::load_checkpoint(o_ckpt);
            const auto data = io::load_dataset(o_data);
            TtoConfig tc;
            tc.steps = o_steps;
            tc.seed = o_seed;
            tc.batch = o_model.batch;
            tc.adam.lr = o_model.lr;
            const int every = std::max(1, o_steps / 20);
            for (const auto &s : test_time_optimize<float>(model, data, tc)) {
                print_step(s, every);
            }
            io::save_checkpoint(o_out, model);
        } else if (base->parsed()) {
            const io::LoadedStack ls = io::manifest_load(b_stack);
            io::write_pfm(b_depth, baseline_argmax_dff(ls.stack));
        }
    } catch (const std::exception &e) {
        std::fprintf(stderr, "dff: %s\n", e.what());
        return 1;
    }
    return 0;
}
