// Differentiable primitives: elementwise arithmetic, reductions, activations,
// 3D convolution, spatial resampling and channel concatenation.
//
// Every op takes the tape first and records itself only when one of its
// inputs requires grad.

#ifndef DFF_OPS_HPP
#define DFF_OPS_HPP

#include <dff/tensor.hpp>

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>

namespace dff
{

namespace detail
{

// ln(1 + e^x) without overflow; above 30 the correction e^-x is below
// double epsilon relative to x.
template <typename T>
T softplus(T x)
{
    if (x > T{30}) {
        return x;
    }
    if (x < T{-30}) {
        return std::exp(x);
    }
    return std::log1p(std::exp(x));
}

// log(softplus(x)) without underflow for very negative x
template <typename T>
T log_softplus(T x)
{
    if (x < T{-30}) {
        return x - std::exp(x) / T{2};
    }
    return std::log(softplus(x));
}

template <typename T>
T sigmoid(T x)
{
    if (x >= T{0}) {
        return T{1} / (T{1} + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> unary(Tape<T> &tape, const Tensor<T> &x, Fwd fwd, Deriv deriv)
{
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = fwd(x[i]);
    }
    if (tape.any_requires_grad({&x})) {
        tape.record(out, [x, out, deriv]() mutable {
            auto gx = x.grad_accumulator();
            auto go = out.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx[i] += go[i] * deriv(x[i], out[i]);
            }
        });
    }
    return out;
}

} // namespace detail

template <typename T>
Tensor<T> add(Tape<T> &tape, const Tensor<T> &a, const Tensor<T> &b)
{
    require_same_shape(a, b, "add");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] + b[i];
    }
    if (tape.any_requires_grad({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            auto go = out.grad();
            for (const Tensor<T> *t : {&a, &b}) {
                if (t->requires_grad()) {
                    auto g = t->grad_accumulator();
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        g[i] += go[i];
                    }
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> sub(Tape<T> &tape, const Tensor<T> &a, const Tensor<T> &b)
{
    require_same_shape(a, b, "sub");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] - b[i];
    }
    if (tape.any_requires_grad({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            auto go = out.grad();
            if (a.requires_grad()) {
                auto g = a.grad_accumulator();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += go[i];
                }
            }
            if (b.requires_grad()) {
                auto g = b.grad_accumulator();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] -= go[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mul(Tape<T> &tape, const Tensor<T> &a, const Tensor<T> &b)
{
    require_same_shape(a, b, "mul");
    Tensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out[i] = a[i] * b[i];
    }
    if (tape.any_requires_grad({&a, &b})) {
        tape.record(out, [a, b, out]() mutable {
            auto go = out.grad();
            if (a.requires_grad()) {
                auto g = a.grad_accumulator();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += go[i] * b[i];
                }
            }
            if (b.requires_grad()) {
                auto g = b.grad_accumulator();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += go[i] * a[i];
                }
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> scale(Tape<T> &tape, const Tensor<T> &x, T factor)
{
    return detail::unary(
        tape, x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

// d|x|/dx is taken as 0 at x == 0
template <typename T>
Tensor<T> abs(Tape<T> &tape, const Tensor<T> &x)
{
    return detail::unary(
        tape, x, [](T v) { return std::abs(v); }, [](T v, T) { return v > T{0} ? T{1} : (v < T{0} ? T{-1} : T{0}); });
}

template <typename T>
Tensor<T> exp(Tape<T> &tape, const Tensor<T> &x)
{
    return detail::unary(
        tape, x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> sum(Tape<T> &tape, const Tensor<T> &x)
{
    T s{0};
    for (T v : x.values()) {
        s += v;
    }
    Tensor<T> out = Tensor<T>::scalar(s);
    if (tape.any_requires_grad({&x})) {
        tape.record(out, [x, out]() mutable {
            const T go = out.grad()[0];
            for (T &g : x.grad_accumulator()) {
                g += go;
            }
        });
    }
    return out;
}

template <typename T>
Tensor<T> mean(Tape<T> &tape, const Tensor<T> &x)
{
    if (x.empty()) {
        throw Error("mean: empty tensor");
    }
    return scale(tape, sum(tape, x), T{1} / static_cast<T>(x.size()));
}

// Linear combination of scalars: sum_i coeff_i * x_i.
template <typename T>
Tensor<T> weighted_sum(Tape<T> &tape, const std::vector<Tensor<T>> &terms, const std::vector<T> &coeffs)
{
    if (terms.size() != coeffs.size()) {
        throw Error("weighted_sum: " + std::to_string(terms.size()) + " terms but " + std::to_string(coeffs.size())
                    + " coefficients");
    }
    T s{0};
    bool grad = false;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        s += coeffs[i] * terms[i].item();
        grad = grad || terms[i].requires_grad();
    }
    Tensor<T> out = Tensor<T>::scalar(s);
    if (grad && tape.recording()) {
        tape.record(out, [terms, coeffs, out]() mutable {
            const T go = out.grad()[0];
            for (std::size_t i = 0; i < terms.size(); ++i) {
                if (terms[i].requires_grad()) {
                    terms[i].grad_accumulator()[0] += coeffs[i] * go;
                }
            }
        });
    }
    return out;
}

enum class ActivationKind { relu, leaky_relu, softplus };

struct Activation {
    ActivationKind kind = ActivationKind::relu;
    double slope = 0.1; // leaky_relu only

    static Activation relu() { return {ActivationKind::relu, 0.0}; }
    static Activation leaky(double slope = 0.1) { return {ActivationKind::leaky_relu, slope}; }
    static Activation softplus() { return {ActivationKind::softplus, 0.0}; }
};

template <typename T>
Tensor<T> activation(Tape<T> &tape, const Tensor<T> &x, Activation act)
{
    switch (act.kind) {
    case ActivationKind::relu:
        return detail::unary(
            tape, x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v, T) { return v > T{0} ? T{1} : T{0}; });
    case ActivationKind::leaky_relu: {
        const T s = static_cast<T>(act.slope);
        return detail::unary(
            tape, x, [s](T v) { return v > T{0} ? v : s * v; }, [s](T v, T) { return v > T{0} ? T{1} : s; });
    }
    case ActivationKind::softplus:
        return detail::unary(
            tape, x, [](T v) { return detail::softplus(v); }, [](T v, T) { return detail::sigmoid(v); });
    }
    throw Error("activation: unknown kind");
}

struct Conv3dOptions {
    std::size_t spatial_stride = 1;
    std::size_t pad_h = 0;
    std::size_t pad_w = 0;

    // same-size output for an odd k x k kernel at stride 1
    static Conv3dOptions same(std::size_t k) { return {1, k / 2, k / 2}; }
};

// input   H x W x Cin x F
// weights k x k x Cin x Cout x kf   (k, kf odd)
// bias    Cout
// output  Ho x Wo x Cout x F; the stack axis is zero-padded by kf/2 on both
//         sides and never strided, so F is preserved.
template <typename T>
Tensor<T> conv3d(Tape<T> &tape, const Tensor<T> &input, const Tensor<T> &weights, const Tensor<T> &bias,
                 Conv3dOptions opt = {})
{
    if (input.rank() != 4 || weights.rank() != 5 || bias.rank() != 1) {
        throw Error("conv3d: expected input rank 4, weights rank 5, bias rank 1; got input " + shape_str(input.shape())
                    + ", weights " + shape_str(weights.shape()) + ", bias " + shape_str(bias.shape()));
    }
    const std::size_t H = input.dim(0), W = input.dim(1), Cin = input.dim(2), F = input.dim(3);
    const std::size_t kh = weights.dim(0), kw = weights.dim(1), Cout = weights.dim(3), kf = weights.dim(4);
    if (kh != kw || kh % 2 == 0 || kf % 2 == 0) {
        throw Error("conv3d: kernel extents must be odd and square, got weights " + shape_str(weights.shape()));
    }
    if (weights.dim(2) != Cin || bias.dim(0) != Cout) {
        throw Error("conv3d: shape mismatch between input " + shape_str(input.shape()) + " and weights "
                    + shape_str(weights.shape()) + " / bias " + shape_str(bias.shape()));
    }
    if (opt.spatial_stride == 0) {
        throw Error("conv3d: stride must be positive");
    }
    const std::size_t k = kh;
    if (H + 2 * opt.pad_h < k || W + 2 * opt.pad_w < k) {
        throw Error("conv3d: kernel " + shape_str(weights.shape()) + " larger than padded input "
                    + shape_str(input.shape()));
    }
    const std::size_t s = opt.spatial_stride;
    const std::size_t Ho = (H + 2 * opt.pad_h - k) / s + 1;
    const std::size_t Wo = (W + 2 * opt.pad_w - k) / s + 1;
    const std::size_t pf = kf / 2;
    const std::size_t rows = Ho * Wo * F;
    const std::size_t chunk = kf * Cin; // one (dh, dw) tap: contiguous (df, c) block
    const std::size_t cols_n = k * k * chunk;
    // zero-padded channel-last copy: Hp x Wp x Fp x Cin
    const std::size_t Hp = H + 2 * opt.pad_h, Wp = W + 2 * opt.pad_w, Fp = F + 2 * pf;

    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    std::vector<T> xp(Hp * Wp * Fp * Cin, T{0});
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t w = 0; w < W; ++w) {
            const T *src = input.data() + (h * W + w) * Cin * F;
            T *dst = xp.data() + ((h + opt.pad_h) * Wp + (w + opt.pad_w)) * Fp * Cin + pf * Cin;
            for (std::size_t c = 0; c < Cin; ++c) {
                for (std::size_t f = 0; f < F; ++f) {
                    dst[f * Cin + c] = src[c * F + f];
                }
            }
        }
    }

    // im2col: row (ho, wo, f), column (dh, dw, df, c)
    auto cols = std::make_shared<Mat>(rows, cols_n);
    for (std::size_t ho = 0; ho < Ho; ++ho) {
        for (std::size_t wo = 0; wo < Wo; ++wo) {
            for (std::size_t f = 0; f < F; ++f) {
                T *row = cols->data() + ((ho * Wo + wo) * F + f) * cols_n;
                for (std::size_t dh = 0; dh < k; ++dh) {
                    for (std::size_t dw = 0; dw < k; ++dw) {
                        const T *src = xp.data() + ((ho * s + dh) * Wp + (wo * s + dw)) * Fp * Cin + f * Cin;
                        std::copy_n(src, chunk, row + (dh * k + dw) * chunk);
                    }
                }
            }
        }
    }

    // weights k x k x Cin x Cout x kf  ->  (dh, dw, df, c) x Cout
    Mat wm(cols_n, Cout);
    for (std::size_t dh = 0; dh < k; ++dh) {
        for (std::size_t dw = 0; dw < k; ++dw) {
            for (std::size_t c = 0; c < Cin; ++c) {
                for (std::size_t o = 0; o < Cout; ++o) {
                    for (std::size_t df = 0; df < kf; ++df) {
                        wm(((dh * k + dw) * kf + df) * Cin + c, o)
                            = weights.data()[(((dh * k + dw) * Cin + c) * Cout + o) * kf + df];
                    }
                }
            }
        }
    }

    Mat y(rows, Cout);
    y.noalias() = *cols * wm;
    Tensor<T> out(Shape{Ho, Wo, Cout, F});
    for (std::size_t p = 0; p < Ho * Wo; ++p) {
        for (std::size_t f = 0; f < F; ++f) {
            for (std::size_t o = 0; o < Cout; ++o) {
                out.data()[(p * Cout + o) * F + f] = y(p * F + f, o) + bias[o];
            }
        }
    }

    if (tape.any_requires_grad({&input, &weights, &bias})) {
        tape.record(out, [input, weights, bias, out, cols, wm = std::move(wm), H, W, Cin, F, k, kf, s, Ho, Wo, Cout,
                          rows, chunk, cols_n, Wp, Fp, Hp, pf, opt]() mutable {
            Mat g(rows, Cout);
            auto go = out.grad();
            for (std::size_t p = 0; p < Ho * Wo; ++p) {
                for (std::size_t f = 0; f < F; ++f) {
                    for (std::size_t o = 0; o < Cout; ++o) {
                        g(p * F + f, o) = go[(p * Cout + o) * F + f];
                    }
                }
            }
            if (bias.requires_grad()) {
                auto gb = bias.grad_accumulator();
                for (std::size_t o = 0; o < Cout; ++o) {
                    gb[o] += g.col(static_cast<Eigen::Index>(o)).sum();
                }
            }
            if (weights.requires_grad()) {
                Mat gwm(cols_n, Cout);
                gwm.noalias() = cols->transpose() * g;
                auto gw = weights.grad_accumulator();
                for (std::size_t dh = 0; dh < k; ++dh) {
                    for (std::size_t dw = 0; dw < k; ++dw) {
                        for (std::size_t c = 0; c < Cin; ++c) {
                            for (std::size_t o = 0; o < Cout; ++o) {
                                for (std::size_t df = 0; df < kf; ++df) {
                                    gw[(((dh * k + dw) * Cin + c) * Cout + o) * kf + df]
                                        += gwm(((dh * k + dw) * kf + df) * Cin + c, o);
                                }
                            }
                        }
                    }
                }
            }
            if (input.requires_grad()) {
                Mat dcols(rows, cols_n);
                dcols.noalias() = g * wm.transpose();
                std::vector<T> gxp(Hp * Wp * Fp * Cin, T{0});
                for (std::size_t ho = 0; ho < Ho; ++ho) {
                    for (std::size_t wo = 0; wo < Wo; ++wo) {
                        for (std::size_t f = 0; f < F; ++f) {
                            const T *row = dcols.data() + ((ho * Wo + wo) * F + f) * cols_n;
                            for (std::size_t dh = 0; dh < k; ++dh) {
                                for (std::size_t dw = 0; dw < k; ++dw) {
                                    T *dst = gxp.data() + ((ho * s + dh) * Wp + (wo * s + dw)) * Fp * Cin + f * Cin;
                                    const T *src = row + (dh * k + dw) * chunk;
                                    for (std::size_t i = 0; i < chunk; ++i) {
                                        dst[i] += src[i];
                                    }
                                }
                            }
                        }
                    }
                }
                auto gx = input.grad_accumulator();
                for (std::size_t h = 0; h < H; ++h) {
                    for (std::size_t w = 0; w < W; ++w) {
                        T *dst = gx.data() + (h * W + w) * Cin * F;
                        const T *src = gxp.data() + ((h + opt.pad_h) * Wp + (w + opt.pad_w)) * Fp * Cin + pf * Cin;
                        for (std::size_t c = 0; c < Cin; ++c) {
                            for (std::size_t f = 0; f < F; ++f) {
                                dst[c * F + f] += src[f * Cin + c];
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

enum class Resample { down, up };

// down: 2x2 average over H, W (both must be even). up: nearest-neighbour x2.
// Channel and stack axes are untouched. Works on rank 3 and rank 4 tensors.
template <typename T>
Tensor<T> resample_spatial(Tape<T> &tape, const Tensor<T> &x, Resample dir)
{
    if (x.rank() < 3) {
        throw Error("resample_spatial: expected rank >= 3, got " + shape_str(x.shape()));
    }
    const std::size_t H = x.dim(0), W = x.dim(1);
    const std::size_t inner = x.size() / (H * W);
    Shape oshape = x.shape();
    if (dir == Resample::down) {
        if (H % 2 != 0 || W % 2 != 0) {
            throw Error("resample_spatial: downsampling needs even H and W, got " + shape_str(x.shape()));
        }
        oshape[0] = H / 2;
        oshape[1] = W / 2;
    } else {
        oshape[0] = H * 2;
        oshape[1] = W * 2;
    }
    Tensor<T> out(oshape);
    const std::size_t Ho = oshape[0], Wo = oshape[1];
    if (dir == Resample::down) {
        for (std::size_t h = 0; h < Ho; ++h) {
            for (std::size_t w = 0; w < Wo; ++w) {
                T *o = out.data() + (h * Wo + w) * inner;
                const T *a = x.data() + ((2 * h) * W + 2 * w) * inner;
                const T *b = a + inner;
                const T *c = a + W * inner;
                const T *d = c + inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    o[i] = (a[i] + b[i] + c[i] + d[i]) * T{0.25};
                }
            }
        }
    } else {
        for (std::size_t h = 0; h < Ho; ++h) {
            for (std::size_t w = 0; w < Wo; ++w) {
                std::copy_n(x.data() + ((h / 2) * W + w / 2) * inner, inner, out.data() + (h * Wo + w) * inner);
            }
        }
    }
    if (tape.any_requires_grad({&x})) {
        tape.record(out, [x, out, dir, H, W, Ho, Wo, inner]() mutable {
            auto gx = x.grad_accumulator();
            auto go = out.grad();
            if (dir == Resample::down) {
                for (std::size_t h = 0; h < Ho; ++h) {
                    for (std::size_t w = 0; w < Wo; ++w) {
                        const T *o = go.data() + (h * Wo + w) * inner;
                        T *a = gx.data() + ((2 * h) * W + 2 * w) * inner;
                        T *b = a + inner;
                        T *c = a + W * inner;
                        T *d = c + inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                            const T q = o[i] * T{0.25};
                            a[i] += q;
                            b[i] += q;
                            c[i] += q;
                            d[i] += q;
                        }
                    }
                }
            } else {
                for (std::size_t h = 0; h < Ho; ++h) {
                    for (std::size_t w = 0; w < Wo; ++w) {
                        const T *o = go.data() + (h * Wo + w) * inner;
                        T *dst = gx.data() + ((h / 2) * W + w / 2) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                            dst[i] += o[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Concatenate two H x W x C x F tensors along C.
template <typename T>
Tensor<T> concat_channels(Tape<T> &tape, const Tensor<T> &a, const Tensor<T> &b)
{
    if (a.rank() != 4 || b.rank() != 4 || a.dim(0) != b.dim(0) || a.dim(1) != b.dim(1) || a.dim(3) != b.dim(3)) {
        throw Error("concat_channels: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t HW = a.dim(0) * a.dim(1), F = a.dim(3);
    const std::size_t ca = a.dim(2) * F, cb = b.dim(2) * F;
    Tensor<T> out(Shape{a.dim(0), a.dim(1), a.dim(2) + b.dim(2), F});
    for (std::size_t p = 0; p < HW; ++p) {
        std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
        std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
    }
    if (tape.any_requires_grad({&a, &b})) {
        tape.record(out, [a, b, out, HW, ca, cb]() mutable {
            auto go = out.grad();
            if (a.requires_grad()) {
                auto g = a.grad_accumulator();
                for (std::size_t p = 0; p < HW; ++p) {
                    for (std::size_t i = 0; i < ca; ++i) {
                        g[p * ca + i] += go[p * (ca + cb) + i];
                    }
                }
            }
            if (b.requires_grad()) {
                auto g = b.grad_accumulator();
                for (std::size_t p = 0; p < HW; ++p) {
                    for (std::size_t i = 0; i < cb; ++i) {
                        g[p * cb + i] += go[p * (ca + cb) + ca + i];
                    }
                }
            }
        });
    }
    return out;
}

} // namespace dff

#endif
