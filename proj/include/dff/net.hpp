// Small U-shaped 3D-convolutional network emitting the attention volume.
//
// Per encoder level: two k x k x kf convs with leaky ReLU, then 2x2 spatial
// average pooling. Bottleneck: two convs. Decoder: nearest x2 upsampling,
// skip concatenation, two convs. Head: 1x1x1 conv to one channel. The stack
// axis is never pooled, so any F >= 2 passes through unchanged.

#ifndef DFF_NET_HPP
#define DFF_NET_HPP

#include <dff/fusion.hpp>
#include <dff/ops.hpp>
#include <dff/stack.hpp>
#include <dff/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace dff
{

struct ModelConfig {
    int levels = 3;
    int base_channels = 16;
    int stack_kernel = 3;
    double leaky_slope = 0.1;
    std::uint64_t seed = 0;

    static constexpr int kSpatialKernel = 3;
    static constexpr int kInputChannels = 3;

    void validate() const
    {
        if (levels < 1) {
            throw Error("model config: levels must be >= 1");
        }
        if (base_channels < 1) {
            throw Error("model config: base_channels must be >= 1");
        }
        if (stack_kernel < 1 || stack_kernel % 2 == 0) {
            throw Error("model config: stack_kernel must be odd and positive");
        }
    }

    std::size_t spatial_multiple() const { return std::size_t{1} << levels; }
    int channels_at(int level) const { return base_channels << level; }

    bool operator==(const ModelConfig &) const = default;
};

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
};

template <typename T>
struct Model {
    ModelConfig config;
    std::vector<Parameter<T>> params; // build order

    std::size_t parameter_count() const
    {
        std::size_t n = 0;
        for (const auto &p : params) {
            n += p.value.size();
        }
        return n;
    }

    void zero_grad()
    {
        for (auto &p : params) {
            p.value.zero_grad();
        }
    }

    // Deep copy; the tape never references the copy.
    Model clone() const
    {
        Model m{config, {}};
        for (const auto &p : params) {
            m.params.push_back({p.name, p.value.clone().set_requires_grad(true)});
        }
        return m;
    }

    template <typename U>
    Model<U> cast() const
    {
        Model<U> m{config, {}};
        for (const auto &p : params) {
            m.params.push_back({p.name, p.value.template cast<U>().set_requires_grad(true)});
        }
        return m;
    }
};

namespace detail
{

struct ConvSpec {
    std::string name;
    int cin, cout, k, kf;
};

inline std::vector<ConvSpec> layer_specs(const ModelConfig &cfg)
{
    std::vector<ConvSpec> specs;
    const int k = ModelConfig::kSpatialKernel, kf = cfg.stack_kernel;
    int cin = ModelConfig::kInputChannels;
    for (int l = 0; l < cfg.levels; ++l) {
        const int c = cfg.channels_at(l);
        specs.push_back({"enc" + std::to_string(l) + ".conv0", cin, c, k, kf});
        specs.push_back({"enc" + std::to_string(l) + ".conv1", c, c, k, kf});
        cin = c;
    }
    const int cb = cfg.channels_at(cfg.levels);
    specs.push_back({"bottleneck.conv0", cin, cb, k, kf});
    specs.push_back({"bottleneck.conv1", cb, cb, k, kf});
    int below = cb;
    for (int l = cfg.levels - 1; l >= 0; --l) {
        const int c = cfg.channels_at(l);
        specs.push_back({"dec" + std::to_string(l) + ".conv0", below + c, c, k, kf});
        specs.push_back({"dec" + std::to_string(l) + ".conv1", c, c, k, kf});
        below = c;
    }
    specs.push_back({"head", below, 1, 1, 1});
    return specs;
}

} // namespace detail

// Weights uniform in +-sqrt(6 / fan_in), biases zero.
template <typename T>
Model<T> build_model(const ModelConfig &config)
{
    config.validate();
    Model<T> model{config, {}};
    std::mt19937_64 rng(config.seed);
    for (const auto &s : detail::layer_specs(config)) {
        const Shape ws{std::size_t(s.k), std::size_t(s.k), std::size_t(s.cin), std::size_t(s.cout), std::size_t(s.kf)};
        const double fan_in = static_cast<double>(s.k * s.k * s.kf * s.cin);
        const double bound = std::sqrt(6.0 / fan_in);
        Tensor<T> w(ws);
        for (auto &v : w.values()) {
            // 53-bit mantissa draw, identical across standard libraries
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            v = static_cast<T>((2.0 * u - 1.0) * bound);
        }
        model.params.push_back({s.name + ".weight", w.set_requires_grad(true)});
        model.params.push_back({s.name + ".bias", Tensor<T>(Shape{std::size_t(s.cout)}).set_requires_grad(true)});
    }
    return model;
}

// Attention volume M (H x W x 1 x F) for an H x W x 3 x F stack.
template <typename T>
Tensor<T> forward(Tape<T> &tape, const Model<T> &model, const Tensor<T> &slices)
{
    const ModelConfig &cfg = model.config;
    if (slices.rank() != 4 || slices.dim(2) != std::size_t(ModelConfig::kInputChannels)) {
        throw Error("forward: expected an H x W x 3 x F stack, got " + shape_str(slices.shape()));
    }
    if (slices.dim(3) < 2) {
        throw Error("forward: need at least 2 slices, got " + std::to_string(slices.dim(3)));
    }
    const std::size_t m = cfg.spatial_multiple();
    if (slices.dim(0) % m != 0 || slices.dim(1) % m != 0) {
        throw Error("forward: H and W must be multiples of " + std::to_string(m) + ", got "
                    + shape_str(slices.shape()));
    }
    const Activation act = Activation::leaky(cfg.leaky_slope);
    const Conv3dOptions same = Conv3dOptions::same(ModelConfig::kSpatialKernel);
    std::size_t i = 0;
    auto conv = [&](const Tensor<T> &x, bool activate) {
        const Tensor<T> &w = model.params.at(i).value;
        const Tensor<T> &b = model.params.at(i + 1).value;
        i += 2;
        Tensor<T> y = conv3d(tape, x, w, b, w.dim(0) == 1 ? Conv3dOptions{} : same);
        return activate ? activation(tape, y, act) : y;
    };

    std::vector<Tensor<T>> skips;
    Tensor<T> x = slices;
    for (int l = 0; l < cfg.levels; ++l) {
        x = conv(x, true);
        x = conv(x, true);
        skips.push_back(x);
        x = resample_spatial(tape, x, Resample::down);
    }
    x = conv(x, true);
    x = conv(x, true);
    for (int l = cfg.levels - 1; l >= 0; --l) {
        x = resample_spatial(tape, x, Resample::up);
        x = concat_channels(tape, x, skips[std::size_t(l)]);
        x = conv(x, true);
        x = conv(x, true);
    }
    return conv(x, false);
}

template <typename T>
struct Inference {
    Tensor<T> attention; // H x W x 1 x F
    Tensor<T> depth;     // H x W x 1
    Tensor<T> aif;       // H x W x 3
};

// depth = E_softplus[P], aif = E_softmax[S]
template <typename T>
Inference<T> infer(Tape<T> &tape, const Model<T> &model, const FocalStack<T> &stack)
{
    Inference<T> r;
    r.attention = forward(tape, model, stack.slices);
    r.depth = expected_depth(tape, softplus_normalize(tape, r.attention), stack.axis);
    r.aif = fuse_aif(tape, softmax_normalize(tape, r.attention), stack.slices);
    return r;
}

template <typename T>
Inference<T> infer(const Model<T> &model, const FocalStack<T> &stack)
{
    Tape<T> tape(false);
    return infer(tape, model, stack);
}

} // namespace dff

#endif
