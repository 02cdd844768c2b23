// Layered defocus rendering: depth is quantized into equal-width bins, each
// bin is blurred with a binary disc of its circle-of-confusion radius, and the
// bins are over-composited back to front (larger depth value = farther).

#ifndef DFF_DEFOCUS_HPP
#define DFF_DEFOCUS_HPP

#include <dff/fusion.hpp>
#include <dff/stack.hpp>
#include <dff/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace dff
{

template <typename T>
struct Scene {
    Tensor<T> aif;   // H x W x C ground-truth all-in-focus image
    Tensor<T> depth; // H x W x 1, blur-domain units
    double kappa = 1.0; // blur radius in pixels per unit of focus mismatch
    int layers = 16;

    void validate() const
    {
        if (aif.rank() != 3 || depth.rank() != 3 || depth.dim(2) != 1) {
            throw Error("scene: expected aif H x W x C and depth H x W x 1, got " + shape_str(aif.shape()) + " and "
                        + shape_str(depth.shape()));
        }
        if (aif.empty()) {
            throw Error("scene: empty image");
        }
        if (aif.dim(0) != depth.dim(0) || aif.dim(1) != depth.dim(1)) {
            throw Error("scene: aif " + shape_str(aif.shape()) + " and depth " + shape_str(depth.shape())
                        + " differ in extent");
        }
        if (!(kappa >= 0.0)) {
            throw Error("scene: kappa must be >= 0");
        }
        if (layers < 1) {
            throw Error("scene: layers must be >= 1");
        }
        for (std::size_t i = 0; i < depth.size(); ++i) {
            if (!std::isfinite(depth[i])) {
                throw Error("scene: non-finite depth at pixel " + std::to_string(i));
            }
        }
    }
};

inline double coc_radius(double depth_value, double focus_position, double kappa)
{
    if (kappa < 0.0) {
        throw Error("coc_radius: kappa must be >= 0");
    }
    return kappa * std::abs(depth_value - focus_position);
}

struct BlurKernel {
    double radius = 0.0;
    int half = 0;              // extent is 2*half+1
    std::vector<double> taps;  // row-major (2*half+1)^2, sums to 1

    int extent() const { return 2 * half + 1; }
    double tap(int dy, int dx) const { return taps[static_cast<std::size_t>((dy + half) * extent() + (dx + half))]; }
};

// Binary disc: unit weight where the offset's distance is <= radius, then
// normalized.
inline BlurKernel disc_kernel(double radius)
{
    if (!(radius >= 0.0) || !std::isfinite(radius)) {
        throw Error("disc_kernel: radius must be finite and >= 0");
    }
    BlurKernel k;
    k.radius = radius;
    k.half = static_cast<int>(std::ceil(radius));
    const int e = k.extent();
    k.taps.assign(static_cast<std::size_t>(e * e), 0.0);
    double total = 0.0;
    for (int dy = -k.half; dy <= k.half; ++dy) {
        for (int dx = -k.half; dx <= k.half; ++dx) {
            if (std::sqrt(static_cast<double>(dy * dy + dx * dx)) <= radius) {
                k.taps[static_cast<std::size_t>((dy + k.half) * e + dx + k.half)] = 1.0;
                total += 1.0;
            }
        }
    }
    for (double &t : k.taps) {
        t /= total;
    }
    return k;
}

// Zero-padded 2D convolution of an H x W x C image with a blur kernel.
template <typename T>
Tensor<T> blur_image(const Tensor<T> &img, const BlurKernel &k)
{
    const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    if (k.half == 0) {
        return img.clone();
    }
    struct Tap {
        int dy, dx;
        T w;
    };
    std::vector<Tap> taps;
    for (int dy = -k.half; dy <= k.half; ++dy) {
        for (int dx = -k.half; dx <= k.half; ++dx) {
            const double w = k.tap(dy, dx);
            if (w != 0.0) {
                taps.push_back({dy, dx, static_cast<T>(w)});
            }
        }
    }
    Tensor<T> out(img.shape());
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            T *o = out.data() + (h * W + w) * C;
            for (const Tap &t : taps) {
                const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(h) + t.dy;
                const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(w) + t.dx;
                if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(H) || x >= static_cast<std::ptrdiff_t>(W)) {
                    continue;
                }
                const T *src = img.data() + (static_cast<std::size_t>(y) * W + static_cast<std::size_t>(x)) * C;
                for (std::size_t c = 0; c < C; ++c) {
                    o[c] += t.w * src[c];
                }
            }
        }
    }
    return out;
}

inline constexpr double kCoverageGuard = 1e-6;

// Bin index of every pixel and the bin centres, over [min D, max D].
template <typename T>
void depth_bins(const Scene<T> &scene, std::vector<int> &bin_of_pixel, std::vector<double> &centers)
{
    const std::size_t n = scene.depth.size();
    double lo = static_cast<double>(scene.depth[0]), hi = lo;
    for (std::size_t i = 1; i < n; ++i) {
        lo = std::min(lo, static_cast<double>(scene.depth[i]));
        hi = std::max(hi, static_cast<double>(scene.depth[i]));
    }
    const int L = scene.layers;
    const double width = (hi - lo) / L;
    centers.resize(static_cast<std::size_t>(L));
    for (int b = 0; b < L; ++b) {
        centers[static_cast<std::size_t>(b)] = (width > 0.0) ? lo + (b + 0.5) * width : lo;
    }
    bin_of_pixel.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        int b = 0;
        if (width > 0.0) {
            b = static_cast<int>(std::floor((static_cast<double>(scene.depth[i]) - lo) / width));
            b = std::clamp(b, 0, L - 1);
        }
        bin_of_pixel[i] = b;
    }
}

template <typename T>
Tensor<T> render_slice(const Scene<T> &scene, double focus_position)
{
    scene.validate();
    if (!std::isfinite(focus_position)) {
        throw Error("render_slice: focus position must be finite");
    }
    const std::size_t H = scene.aif.dim(0), W = scene.aif.dim(1), C = scene.aif.dim(2), HW = H * W;
    std::vector<int> bin;
    std::vector<double> centers;
    depth_bins(scene, bin, centers);

    Tensor<T> acc_color(Shape{H, W, C});
    std::vector<T> acc_alpha(HW, T{0});
    for (int b = scene.layers - 1; b >= 0; --b) {
        // premultiplied colour + coverage in one C+1 channel image
        Tensor<T> layer(Shape{H, W, C + 1});
        bool any = false;
        for (std::size_t p = 0; p < HW; ++p) {
            if (bin[p] == b) {
                any = true;
                for (std::size_t c = 0; c < C; ++c) {
                    layer[p * (C + 1) + c] = scene.aif[p * C + c];
                }
                layer[p * (C + 1) + C] = T{1};
            }
        }
        if (!any) {
            continue;
        }
        const BlurKernel k = disc_kernel(coc_radius(centers[static_cast<std::size_t>(b)], focus_position, scene.kappa));
        const Tensor<T> blurred = blur_image(layer, k);
        for (std::size_t p = 0; p < HW; ++p) {
            const T a = blurred[p * (C + 1) + C];
            for (std::size_t c = 0; c < C; ++c) {
                acc_color[p * C + c] = blurred[p * (C + 1) + c] + (T{1} - a) * acc_color[p * C + c];
            }
            acc_alpha[p] = a + (T{1} - a) * acc_alpha[p];
        }
    }
    for (std::size_t p = 0; p < HW; ++p) {
        const T a = std::max(acc_alpha[p], static_cast<T>(kCoverageGuard));
        for (std::size_t c = 0; c < C; ++c) {
            acc_color[p * C + c] /= a;
        }
    }
    return acc_color;
}

// A rendered stack with the ground truth it was rendered from.
template <typename T>
struct SynthesizedStack {
    FocalStack<T> stack;
    Tensor<T> aif;
    Tensor<T> depth;
};

template <typename T>
SynthesizedStack<T> synth_stack(const Scene<T> &scene, const FocusAxis &axis)
{
    if (axis.size() < 2) {
        throw Error("synth_stack: focus axis needs at least 2 positions");
    }
    std::vector<Tensor<T>> slices;
    slices.reserve(axis.size());
    for (double p : axis.positions()) {
        slices.push_back(render_slice(scene, p));
    }
    return {FocalStack<T>(stack_slices(slices), axis), scene.aif, scene.depth};
}

} // namespace dff

#endif
