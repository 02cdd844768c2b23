// Procedural toy scenes: a textured slanted background plane plus a few
// textured rectangles at random depths, resolved with a z-test. Depths lie in
// [0, 1]; the focus axis spans [0, 1].

#ifndef DFF_TOY_HPP
#define DFF_TOY_HPP

#include <dff/augment.hpp>
#include <dff/defocus.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace dff
{

// splitmix64 finalizer; derives independent per-scene seeds
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace detail
{

// Blocky colour noise around a random base colour.
inline std::vector<double> toy_texture(Rng &rng, std::size_t size)
{
    const std::size_t cell = 1 + rng.below(2);
    const double amp = rng.uniform(0.5, 0.9);
    double base[3];
    for (double &b : base) {
        b = rng.uniform(0.25, 0.75);
    }
    const std::size_t cells = (size + cell - 1) / cell;
    std::vector<double> noise(cells * cells * 3);
    for (double &v : noise) {
        v = rng.uniform() - 0.5;
    }
    std::vector<double> tex(size * size * 3);
    for (std::size_t h = 0; h < size; ++h) {
        for (std::size_t w = 0; w < size; ++w) {
            const std::size_t c0 = ((h / cell) * cells + w / cell) * 3;
            for (std::size_t c = 0; c < 3; ++c) {
                // channels share most of the noise so the texture has luminance contrast
                const double n = 0.7 * noise[c0] + 0.3 * noise[c0 + c];
                tex[(h * size + w) * 3 + c] = std::clamp(base[c] + amp * n, 0.0, 1.0);
            }
        }
    }
    return tex;
}

} // namespace detail

template <typename T>
Scene<T> generate_toy_scene(std::uint64_t seed, std::size_t size, double kappa)
{
    if (size < 8) {
        throw Error("toy scene: size must be >= 8");
    }
    Rng rng(seed);
    Scene<T> scene;
    scene.kappa = kappa;
    scene.aif = Tensor<T>(Shape{size, size, 3});
    scene.depth = Tensor<T>(Shape{size, size, 1});

    const double d0 = rng.uniform(), d1 = rng.uniform();
    const double angle = rng.uniform(0.0, 6.283185307179586);
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double half = static_cast<double>(size - 1) / 2.0;
    const double reach = half * (std::abs(ux) + std::abs(uy));
    const std::vector<double> bg = detail::toy_texture(rng, size);
    for (std::size_t h = 0; h < size; ++h) {
        for (std::size_t w = 0; w < size; ++w) {
            const double t = reach > 0 ? ((static_cast<double>(w) - half) * ux + (static_cast<double>(h) - half) * uy) / reach : 0.0;
            scene.depth[h * size + w] = static_cast<T>(d0 + (d1 - d0) * 0.5 * (t + 1.0));
            for (std::size_t c = 0; c < 3; ++c) {
                scene.aif[(h * size + w) * 3 + c] = static_cast<T>(bg[(h * size + w) * 3 + c]);
            }
        }
    }

    const std::size_t rects = 2 + rng.below(4);
    for (std::size_t r = 0; r < rects; ++r) {
        const std::size_t rh = size / 5 + rng.below(size / 2), rw = size / 5 + rng.below(size / 2);
        const std::size_t y0 = rng.below(size - std::min(rh, size - 1)), x0 = rng.below(size - std::min(rw, size - 1));
        const double d = rng.uniform();
        const std::vector<double> tex = detail::toy_texture(rng, size);
        for (std::size_t h = y0; h < std::min(size, y0 + rh); ++h) {
            for (std::size_t w = x0; w < std::min(size, x0 + rw); ++w) {
                if (d < static_cast<double>(scene.depth[h * size + w])) {
                    scene.depth[h * size + w] = static_cast<T>(d);
                    for (std::size_t c = 0; c < 3; ++c) {
                        scene.aif[(h * size + w) * 3 + c] = static_cast<T>(tex[(h * size + w) * 3 + c]);
                    }
                }
            }
        }
    }
    return scene;
}

// In-memory toy dataset: scene i uses mix_seed(seed, i).
template <typename T>
std::vector<TrainSample<T>> generate_toy_samples(std::uint64_t seed, std::size_t count, std::size_t size,
                                                 std::size_t frames, double kappa)
{
    const FocusAxis axis = FocusAxis::linspace(0.0, 1.0, frames);
    std::vector<TrainSample<T>> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const Scene<T> scene = generate_toy_scene<T>(mix_seed(seed, i), size, kappa);
        SynthesizedStack<T> s = synth_stack(scene, axis);
        out.push_back({std::move(s.stack), s.depth, std::nullopt, s.aif});
    }
    return out;
}

} // namespace dff

#endif
