// Classical depth from focus: per-pixel argmax of a windowed
// modified-Laplacian sharpness over the stack.

#ifndef DFF_BASELINE_HPP
#define DFF_BASELINE_HPP

#include <dff/stack.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace dff
{

inline constexpr int kSharpnessWindow = 5;

// |2v - v_l - v_r| + |2v - v_u - v_d| on the channel-mean image, borders
// replicated, box-summed over a 5x5 window clipped to the image.
// Returns H*W values for slice t.
template <typename T>
std::vector<double> modified_laplacian(const FocalStack<T> &stack, std::size_t t)
{
    const std::size_t H = stack.height(), W = stack.width(), C = stack.channels(), F = stack.frames();
    std::vector<double> gray(H * W);
    for (std::size_t p = 0; p < H * W; ++p) {
        double s = 0;
        for (std::size_t c = 0; c < C; ++c) {
            s += static_cast<double>(stack.slices[(p * C + c) * F + t]);
        }
        gray[p] = s / static_cast<double>(C);
    }
    auto g = [&](std::ptrdiff_t h, std::ptrdiff_t w) {
        h = std::clamp<std::ptrdiff_t>(h, 0, static_cast<std::ptrdiff_t>(H) - 1);
        w = std::clamp<std::ptrdiff_t>(w, 0, static_cast<std::ptrdiff_t>(W) - 1);
        return gray[static_cast<std::size_t>(h) * W + static_cast<std::size_t>(w)];
    };
    std::vector<double> ml(H * W);
    for (std::ptrdiff_t h = 0; h < static_cast<std::ptrdiff_t>(H); ++h) {
        for (std::ptrdiff_t w = 0; w < static_cast<std::ptrdiff_t>(W); ++w) {
            const double v = g(h, w);
            ml[static_cast<std::size_t>(h) * W + static_cast<std::size_t>(w)]
                = std::abs(2 * v - g(h, w - 1) - g(h, w + 1)) + std::abs(2 * v - g(h - 1, w) - g(h + 1, w));
        }
    }
    const std::ptrdiff_t r = kSharpnessWindow / 2;
    std::vector<double> out(H * W, 0.0);
    for (std::ptrdiff_t h = 0; h < static_cast<std::ptrdiff_t>(H); ++h) {
        for (std::ptrdiff_t w = 0; w < static_cast<std::ptrdiff_t>(W); ++w) {
            double s = 0;
            for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, h - r); y <= std::min<std::ptrdiff_t>(H - 1, h + r); ++y) {
                for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, w - r); x <= std::min<std::ptrdiff_t>(W - 1, w + r); ++x) {
                    s += ml[static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)];
                }
            }
            out[static_cast<std::size_t>(h) * W + static_cast<std::size_t>(w)] = s;
        }
    }
    return out;
}

// Output H x W x 1 holding P[argmax_t sharpness]; ties go to the lowest t.
template <typename T>
Tensor<T> baseline_argmax_dff(const FocalStack<T> &stack)
{
    if (stack.frames() < 2) {
        throw Error("baseline_argmax_dff: need at least 2 slices");
    }
    const std::size_t HW = stack.height() * stack.width();
    std::vector<double> best = modified_laplacian(stack, 0);
    std::vector<std::size_t> idx(HW, 0);
    for (std::size_t t = 1; t < stack.frames(); ++t) {
        const std::vector<double> s = modified_laplacian(stack, t);
        for (std::size_t p = 0; p < HW; ++p) {
            if (s[p] > best[p]) {
                best[p] = s[p];
                idx[p] = t;
            }
        }
    }
    Tensor<T> out(Shape{stack.height(), stack.width(), 1});
    for (std::size_t p = 0; p < HW; ++p) {
        out[p] = static_cast<T>(stack.axis[idx[p]]);
    }
    return out;
}

} // namespace dff

#endif
