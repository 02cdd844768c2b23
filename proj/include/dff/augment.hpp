// Training samples and their augmentation. Geometric transforms apply
// identically to slices, AiF, depth and mask; photometric transforms apply to
// slices and AiF only.

#ifndef DFF_AUGMENT_HPP
#define DFF_AUGMENT_HPP

#include <dff/losses.hpp>
#include <dff/stack.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace dff
{

template <typename T>
struct TrainSample {
    FocalStack<T> stack;
    std::optional<Tensor<T>> gt_depth; // H x W x 1
    std::optional<ValidityMask> mask;  // defaults to all-valid
    std::optional<Tensor<T>> gt_aif;   // H x W x 3

    ValidityMask effective_mask() const
    {
        return mask ? *mask : ValidityMask(stack.height(), stack.width());
    }
};

// Thin wrapper so every draw is reproducible across standard libraries.
class Rng
{
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    // integer in [0, n)
    std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n; }
    bool coin() { return uniform() < 0.5; }
    std::uint64_t next() { return engine_(); }

private:
    std::mt19937_64 engine_;
};

struct AugmentConfig {
    std::size_t crop = 64;
    double jitter = 0.1; // brightness/contrast/gamma in [1-j, 1+j]
};

struct AugmentDraw {
    bool flip_h = false; // mirror columns
    bool flip_v = false; // mirror rows
    int quarter_turns = 0;
    std::size_t crop_y = 0, crop_x = 0, crop = 0;
    double brightness = 1.0, contrast = 1.0, gamma = 1.0;

    static AugmentDraw identity(std::size_t size) { return {false, false, 0, 0, 0, size, 1.0, 1.0, 1.0}; }
};

inline AugmentDraw draw_augmentation(Rng &rng, const AugmentConfig &cfg, std::size_t height, std::size_t width)
{
    if (cfg.crop > height || cfg.crop > width || cfg.crop == 0) {
        throw Error("augment: crop " + std::to_string(cfg.crop) + " does not fit image " + std::to_string(height) + "x"
                    + std::to_string(width));
    }
    AugmentDraw d;
    d.flip_h = rng.coin();
    d.flip_v = rng.coin();
    d.quarter_turns = static_cast<int>(rng.below(4));
    d.crop = cfg.crop;
    d.crop_y = rng.below(height - cfg.crop + 1);
    d.crop_x = rng.below(width - cfg.crop + 1);
    d.brightness = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    d.contrast = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    d.gamma = rng.uniform(1.0 - cfg.jitter, 1.0 + cfg.jitter);
    return d;
}

namespace detail
{

// Crop, flips, then counter-clockwise quarter turns of an H x W x inner
// buffer. Returns the crop x crop result.
template <typename U>
std::vector<U> transform_spatial(const std::vector<U> &src, std::size_t H, std::size_t W, std::size_t inner,
                                 const AugmentDraw &d)
{
    if (d.crop_y + d.crop > H || d.crop_x + d.crop > W) {
        throw Error("augment: crop window outside image");
    }
    const std::size_t n = d.crop;
    std::vector<U> out(n * n * inner);
    const int turns = ((d.quarter_turns % 4) + 4) % 4;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            // undo the rotation: output (i, j) came from pre-rotation (y, x)
            std::size_t y = i, x = j;
            for (int t = 0; t < turns; ++t) {
                // one ccw turn maps (y, x) -> (n-1-x, y); inverse is (y, x) <- (x, n-1-y)
                const std::size_t py = x, px = n - 1 - y;
                y = py;
                x = px;
            }
            if (d.flip_v) {
                y = n - 1 - y;
            }
            if (d.flip_h) {
                x = n - 1 - x;
            }
            const std::size_t s = ((d.crop_y + y) * W + (d.crop_x + x)) * inner;
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(s), inner,
                        out.begin() + static_cast<std::ptrdiff_t>((i * n + j) * inner));
        }
    }
    return out;
}

template <typename T>
Tensor<T> transform_tensor(const Tensor<T> &t, const AugmentDraw &d)
{
    const std::size_t H = t.dim(0), W = t.dim(1), inner = t.size() / (H * W);
    std::vector<T> v(t.values().begin(), t.values().end());
    Shape s = t.shape();
    s[0] = s[1] = d.crop;
    return Tensor<T>(s, transform_spatial(v, H, W, inner, d));
}

template <typename T>
T photometric(T v, const AugmentDraw &d)
{
    double x = static_cast<double>(v) * d.brightness;
    x = (x - 0.5) * d.contrast + 0.5;
    x = std::clamp(x, 0.0, 1.0);
    x = std::pow(x, d.gamma);
    return static_cast<T>(std::clamp(x, 0.0, 1.0));
}

} // namespace detail

template <typename T>
TrainSample<T> apply_augmentation(const TrainSample<T> &s, const AugmentDraw &d)
{
    const bool photo = d.brightness != 1.0 || d.contrast != 1.0 || d.gamma != 1.0;
    auto colour = [&](const Tensor<T> &img) {
        Tensor<T> out = detail::transform_tensor(img, d);
        if (photo) {
            for (auto &v : out.values()) {
                v = detail::photometric(v, d);
            }
        }
        return out;
    };
    TrainSample<T> r;
    r.stack = FocalStack<T>(colour(s.stack.slices), s.stack.axis);
    if (s.gt_aif) {
        r.gt_aif = colour(*s.gt_aif);
    }
    if (s.gt_depth) {
        r.gt_depth = detail::transform_tensor(*s.gt_depth, d);
    }
    if (s.mask) {
        r.mask = ValidityMask(d.crop, d.crop,
                              detail::transform_spatial(s.mask->raw(), s.mask->height(), s.mask->width(), 1, d));
    }
    return r;
}

template <typename T>
TrainSample<T> augment(const TrainSample<T> &s, Rng &rng, const AugmentConfig &cfg)
{
    return apply_augmentation(s, draw_augmentation(rng, cfg, s.stack.height(), s.stack.width()));
}

} // namespace dff

#endif
