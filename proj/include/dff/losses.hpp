// Training objectives: supervised depth L1, AiF L1, edge-aware smoothness, and
// the unsupervised combination aif_l1 + alpha * smooth.

#ifndef DFF_LOSSES_HPP
#define DFF_LOSSES_HPP

#include <dff/ops.hpp>
#include <dff/tensor.hpp>

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dff
{

inline constexpr double kDefaultAlpha = 0.002;
inline constexpr double kDefaultLambda = 10.0;

class ValidityMask
{
public:
    ValidityMask() = default;
    ValidityMask(std::size_t height, std::size_t width, bool value = true)
        : height_(height), width_(width), valid_(height * width, value ? 1 : 0)
    {
    }
    ValidityMask(std::size_t height, std::size_t width, std::vector<std::uint8_t> valid)
        : height_(height), width_(width), valid_(std::move(valid))
    {
        if (valid_.size() != height * width) {
            throw Error("validity mask: " + std::to_string(valid_.size()) + " entries for " + std::to_string(height)
                        + "x" + std::to_string(width));
        }
    }

    std::size_t height() const { return height_; }
    std::size_t width() const { return width_; }
    bool operator[](std::size_t i) const { return valid_[i] != 0; }
    bool at(std::size_t h, std::size_t w) const { return valid_[h * width_ + w] != 0; }
    void set(std::size_t h, std::size_t w, bool v) { valid_[h * width_ + w] = v ? 1 : 0; }
    std::size_t count() const
    {
        std::size_t n = 0;
        for (auto v : valid_) {
            n += v ? 1 : 0;
        }
        return n;
    }
    const std::vector<std::uint8_t> &raw() const { return valid_; }
    bool operator==(const ValidityMask &) const = default;

private:
    std::size_t height_ = 0, width_ = 0;
    std::vector<std::uint8_t> valid_;
};

struct LossReport {
    double total = 0.0;
    std::optional<double> depth_l1;
    std::optional<double> aif_l1;
    std::optional<double> smooth;
    double alpha = 0.0; // weight of `smooth` in `total`

    // depth_l1 + aif_l1 + alpha * smooth over the parts present
    double combined() const
    {
        return depth_l1.value_or(0.0) + aif_l1.value_or(0.0) + alpha * smooth.value_or(0.0);
    }
};

// mean |pred - gt| over masked pixels; pred, gt are H x W x 1
template <typename T>
Tensor<T> depth_l1_loss(Tape<T> &tape, const Tensor<T> &pred, const Tensor<T> &gt, const ValidityMask &mask)
{
    require_same_shape(pred, gt, "depth_l1_loss");
    if (pred.rank() != 3 || pred.dim(2) != 1 || mask.height() != pred.dim(0) || mask.width() != pred.dim(1)) {
        throw Error("depth_l1_loss: depth " + shape_str(pred.shape()) + " does not match mask "
                    + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
    }
    const std::size_t n = mask.count();
    if (n == 0) {
        throw Error("depth_l1_loss: empty validity mask");
    }
    T acc{0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (mask[i]) {
            acc += std::abs(pred[i] - gt[i]);
        }
    }
    const T inv = T{1} / static_cast<T>(n);
    Tensor<T> out = Tensor<T>::scalar(acc * inv);
    if (tape.any_requires_grad({&pred})) {
        tape.record(out, [pred, gt, mask, out, inv]() mutable {
            const T go = out.grad()[0] * inv;
            auto g = pred.grad_accumulator();
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (mask[i]) {
                    const T d = pred[i] - gt[i];
                    g[i] += d > T{0} ? go : (d < T{0} ? -go : T{0});
                }
            }
        });
    }
    return out;
}

// mean |pred - gt| over all pixels and channels
template <typename T>
Tensor<T> aif_l1_loss(Tape<T> &tape, const Tensor<T> &pred, const Tensor<T> &gt)
{
    require_same_shape(pred, gt, "aif_l1_loss");
    if (pred.empty()) {
        throw Error("aif_l1_loss: empty image");
    }
    T acc{0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        acc += std::abs(pred[i] - gt[i]);
    }
    const T inv = T{1} / static_cast<T>(pred.size());
    Tensor<T> out = Tensor<T>::scalar(acc * inv);
    if (tape.any_requires_grad({&pred})) {
        tape.record(out, [pred, gt, out, inv]() mutable {
            const T go = out.grad()[0] * inv;
            auto g = pred.grad_accumulator();
            for (std::size_t i = 0; i < g.size(); ++i) {
                const T d = pred[i] - gt[i];
                g[i] += d > T{0} ? go : (d < T{0} ? -go : T{0});
            }
        });
    }
    return out;
}

// Edge-aware smoothness with forward differences. x-terms cover columns
// 0..W-2, y-terms rows 0..H-2, and the two means are added:
//   mean_x( exp(-lambda/3 sum_k |dx I|) |dx D| ) + mean_y( ... )
// The image is ground truth; only depth receives gradient.
template <typename T>
Tensor<T> smoothness_loss(Tape<T> &tape, const Tensor<T> &depth, const Tensor<T> &aif_gt, T lambda)
{
    if (depth.rank() != 3 || depth.dim(2) != 1 || aif_gt.rank() != 3 || depth.dim(0) != aif_gt.dim(0)
        || depth.dim(1) != aif_gt.dim(1)) {
        throw Error("smoothness_loss: depth " + shape_str(depth.shape()) + " does not match image "
                    + shape_str(aif_gt.shape()));
    }
    if (!(lambda >= T{0})) {
        throw Error("smoothness_loss: lambda must be >= 0");
    }
    const std::size_t H = depth.dim(0), W = depth.dim(1), C = aif_gt.dim(2);
    if (H < 2 || W < 2) {
        throw Error("smoothness_loss: image must be at least 2x2, got " + shape_str(depth.shape()));
    }
    const T k = lambda / T{3};
    std::vector<T> wx(H * (W - 1)), wy((H - 1) * W);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w + 1 < W; ++w) {
            T s{0};
            for (std::size_t c = 0; c < C; ++c) {
                s += std::abs(aif_gt.at(h, w + 1, c) - aif_gt.at(h, w, c));
            }
            wx[h * (W - 1) + w] = std::exp(-k * s);
        }
    }
    for (std::size_t h = 0; h + 1 < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            T s{0};
            for (std::size_t c = 0; c < C; ++c) {
                s += std::abs(aif_gt.at(h + 1, w, c) - aif_gt.at(h, w, c));
            }
            wy[h * W + w] = std::exp(-k * s);
        }
    }
    const T nx = static_cast<T>(H * (W - 1)), ny = static_cast<T>((H - 1) * W);
    T sx{0}, sy{0};
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w + 1 < W; ++w) {
            sx += wx[h * (W - 1) + w] * std::abs(depth[h * W + w + 1] - depth[h * W + w]);
        }
    }
    for (std::size_t h = 0; h + 1 < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            sy += wy[h * W + w] * std::abs(depth[(h + 1) * W + w] - depth[h * W + w]);
        }
    }
    Tensor<T> out = Tensor<T>::scalar(sx / nx + sy / ny);
    if (tape.any_requires_grad({&depth})) {
        tape.record(out, [depth, out, wx = std::move(wx), wy = std::move(wy), H, W, nx, ny]() mutable {
            const T go = out.grad()[0];
            auto g = depth.grad_accumulator();
            auto sgn = [](T d) { return d > T{0} ? T{1} : (d < T{0} ? T{-1} : T{0}); };
            for (std::size_t h = 0; h < H; ++h) {
                for (std::size_t w = 0; w + 1 < W; ++w) {
                    const T c = go / nx * wx[h * (W - 1) + w] * sgn(depth[h * W + w + 1] - depth[h * W + w]);
                    g[h * W + w + 1] += c;
                    g[h * W + w] -= c;
                }
            }
            for (std::size_t h = 0; h + 1 < H; ++h) {
                for (std::size_t w = 0; w < W; ++w) {
                    const T c = go / ny * wy[h * W + w] * sgn(depth[(h + 1) * W + w] - depth[h * W + w]);
                    g[(h + 1) * W + w] += c;
                    g[h * W + w] -= c;
                }
            }
        });
    }
    return out;
}

template <typename T>
struct UnsupervisedLoss {
    Tensor<T> total;
    Tensor<T> aif_l1;
    Tensor<T> smooth;
    double alpha = kDefaultAlpha;

    LossReport report() const
    {
        LossReport r;
        r.total = static_cast<double>(total.item());
        r.aif_l1 = static_cast<double>(aif_l1.item());
        r.smooth = static_cast<double>(smooth.item());
        r.alpha = alpha;
        return r;
    }
};

// total = aif_l1(pred_aif, gt_aif) + alpha * smoothness(pred_depth, gt_aif)
template <typename T>
UnsupervisedLoss<T> unsupervised_loss(Tape<T> &tape, const Tensor<T> &pred_aif, const Tensor<T> &gt_aif,
                                      const Tensor<T> &pred_depth, T alpha = static_cast<T>(kDefaultAlpha),
                                      T lambda = static_cast<T>(kDefaultLambda))
{
    if (!(alpha >= T{0})) {
        throw Error("unsupervised_loss: alpha must be >= 0");
    }
    UnsupervisedLoss<T> r;
    r.alpha = static_cast<double>(alpha);
    r.aif_l1 = aif_l1_loss(tape, pred_aif, gt_aif);
    r.smooth = smoothness_loss(tape, pred_depth, gt_aif, lambda);
    r.total = weighted_sum(tape, {r.aif_l1, r.smooth}, {T{1}, alpha});
    return r;
}

} // namespace dff

#endif
