// Attention fusion: one score volume M (H x W x 1 x F) is normalized twice.
// Softplus normalization feeds an expectation over focus positions (depth);
// softmax normalization feeds an expectation over slice colours (all-in-focus
// image). Nothing after M is learnable.

#ifndef DFF_FUSION_HPP
#define DFF_FUSION_HPP

#include <dff/ops.hpp>
#include <dff/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

namespace dff
{

// Per-slice focus positions, broadcast over pixels. Linear blur-domain units.
class FocusAxis
{
public:
    FocusAxis() = default;

    explicit FocusAxis(std::vector<double> positions) : positions_(std::move(positions))
    {
        if (positions_.size() < 2) {
            throw Error("focus axis: need at least 2 positions, got " + std::to_string(positions_.size()));
        }
        for (std::size_t i = 0; i < positions_.size(); ++i) {
            if (!std::isfinite(positions_[i])) {
                throw Error("focus axis: position " + std::to_string(i) + " is not finite");
            }
            if (i > 0 && !(positions_[i] > positions_[i - 1])) {
                throw Error("focus axis: positions must increase strictly, violated at index " + std::to_string(i));
            }
        }
    }

    // n evenly spaced positions over [lo, hi]
    static FocusAxis linspace(double lo, double hi, std::size_t n)
    {
        if (n < 2) {
            throw Error("focus axis: need at least 2 positions, got " + std::to_string(n));
        }
        std::vector<double> p(n);
        for (std::size_t i = 0; i < n; ++i) {
            p[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
        }
        p.back() = hi;
        return FocusAxis(std::move(p));
    }

    std::size_t size() const { return positions_.size(); }
    double operator[](std::size_t i) const { return positions_[i]; }
    const std::vector<double> &positions() const { return positions_; }
    double min() const { return positions_.front(); }
    double max() const { return positions_.back(); }

    FocusAxis subset(const std::vector<std::size_t> &indices) const
    {
        std::vector<double> p;
        p.reserve(indices.size());
        for (std::size_t i : indices) {
            p.push_back(positions_.at(i));
        }
        return FocusAxis(std::move(p));
    }

    bool operator==(const FocusAxis &) const = default;

private:
    std::vector<double> positions_;
};

namespace detail
{

template <typename T>
void require_volume(const Tensor<T> &m, const char *what)
{
    if (m.rank() != 4 || m.dim(2) != 1) {
        throw Error(std::string(what) + ": expected an H x W x 1 x F volume, got " + shape_str(m.shape()));
    }
}

template <typename T>
void require_finite(const Tensor<T> &m, const char *what)
{
    for (std::size_t i = 0; i < m.size(); ++i) {
        if (!std::isfinite(m[i])) {
            throw Error(std::string(what) + ": non-finite score at flat index " + std::to_string(i));
        }
    }
}

} // namespace detail

inline constexpr double kSoftplusNormEps = 1e-12;

// w_t = softplus(m_t) / sum_n softplus(m_n), denominator guarded by eps
template <typename T>
Tensor<T> softplus_normalize(Tape<T> &tape, const Tensor<T> &m)
{
    detail::require_volume(m, "softplus_normalize");
    detail::require_finite(m, "softplus_normalize");
    const std::size_t F = m.dim(3), pixels = m.size() / F;
    Tensor<T> out(m.shape());
    // Ratios are taken against the largest softplus value of each pixel, so
    // the denominator is >= 1 and eps only guards it; an absolute eps would
    // swamp the sum once every score sits below about -28.
    std::vector<T> lmax(pixels), denom(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
        const T *mp = m.data() + p * F;
        T *op = out.data() + p * F;
        T lm = -std::numeric_limits<T>::infinity();
        for (std::size_t t = 0; t < F; ++t) {
            op[t] = detail::log_softplus(mp[t]);
            lm = std::max(lm, op[t]);
        }
        T s{0};
        for (std::size_t t = 0; t < F; ++t) {
            op[t] = std::exp(op[t] - lm);
            s += op[t];
        }
        s += static_cast<T>(kSoftplusNormEps);
        for (std::size_t t = 0; t < F; ++t) {
            op[t] /= s;
        }
        lmax[p] = lm;
        denom[p] = s;
    }
    if (tape.any_requires_grad({&m})) {
        tape.record(out, [m, out, lmax = std::move(lmax), denom = std::move(denom), F, pixels]() mutable {
            auto gm = m.grad_accumulator();
            auto go = out.grad();
            for (std::size_t p = 0; p < pixels; ++p) {
                // dw_t/dm_u = sigmoid(m_u) / (M S) * (delta_tu - w_t), M the max softplus
                T dot{0};
                for (std::size_t t = 0; t < F; ++t) {
                    dot += go[p * F + t] * out[p * F + t];
                }
                for (std::size_t u = 0; u < F; ++u) {
                    const T x = m[p * F + u];
                    const T coef = std::exp(-detail::softplus(-x) - lmax[p]) / denom[p]; // log sigmoid(x) = -softplus(-x)
                    gm[p * F + u] += coef * (go[p * F + u] - dot);
                }
            }
        });
    }
    return out;
}

// w_t = exp(tau m_t) / sum_n exp(tau m_n), evaluated with the per-pixel max
// subtracted.
template <typename T>
Tensor<T> softmax_normalize(Tape<T> &tape, const Tensor<T> &m, T temperature = T{1})
{
    detail::require_volume(m, "softmax_normalize");
    if (!(temperature > T{0})) {
        throw Error("softmax_normalize: temperature must be positive, got " + std::to_string(temperature));
    }
    detail::require_finite(m, "softmax_normalize");
    const std::size_t F = m.dim(3), pixels = m.size() / F;
    Tensor<T> out(m.shape());
    for (std::size_t p = 0; p < pixels; ++p) {
        const T *mp = m.data() + p * F;
        T *op = out.data() + p * F;
        const T mx = *std::max_element(mp, mp + F);
        T s{0};
        for (std::size_t t = 0; t < F; ++t) {
            op[t] = std::exp(temperature * (mp[t] - mx));
            s += op[t];
        }
        for (std::size_t t = 0; t < F; ++t) {
            op[t] /= s;
        }
    }
    if (tape.any_requires_grad({&m})) {
        tape.record(out, [m, out, temperature, F, pixels]() mutable {
            auto gm = m.grad_accumulator();
            auto go = out.grad();
            for (std::size_t p = 0; p < pixels; ++p) {
                T dot{0};
                for (std::size_t t = 0; t < F; ++t) {
                    dot += go[p * F + t] * out[p * F + t];
                }
                for (std::size_t u = 0; u < F; ++u) {
                    gm[p * F + u] += temperature * out[p * F + u] * (go[p * F + u] - dot);
                }
            }
        });
    }
    return out;
}

// D(i,j) = sum_t w(i,j,t) P_t  ->  H x W x 1
template <typename T>
Tensor<T> expected_depth(Tape<T> &tape, const Tensor<T> &w, const FocusAxis &axis)
{
    detail::require_volume(w, "expected_depth");
    const std::size_t F = w.dim(3), pixels = w.size() / F;
    if (F != axis.size()) {
        throw Error("expected_depth: weight volume has " + std::to_string(F) + " frames but focus axis has "
                    + std::to_string(axis.size()));
    }
    std::vector<T> pos(axis.positions().begin(), axis.positions().end());
    Tensor<T> out(Shape{w.dim(0), w.dim(1), 1});
    // Normalized weights (sum 1 up to rounding and the eps guard) can land
    // just past the axis ends; snap those back. Larger excursions
    // (unnormalized w) are left alone, so the map stays linear in w and the
    // backward below is exact.
    const T lo = pos.front(), hi = pos.back();
    const T slack = (std::numeric_limits<T>::epsilon() * T{64} + static_cast<T>(2 * kSoftplusNormEps))
                    * std::max({T{1}, std::abs(lo), std::abs(hi)});
    for (std::size_t p = 0; p < pixels; ++p) {
        T d{0};
        for (std::size_t t = 0; t < F; ++t) {
            d += w[p * F + t] * pos[t];
        }
        if (d < lo && d > lo - slack) {
            d = lo;
        } else if (d > hi && d < hi + slack) {
            d = hi;
        }
        out[p] = d;
    }
    if (tape.any_requires_grad({&w})) {
        tape.record(out, [w, out, pos = std::move(pos), F, pixels]() mutable {
            auto gw = w.grad_accumulator();
            auto go = out.grad();
            for (std::size_t p = 0; p < pixels; ++p) {
                for (std::size_t t = 0; t < F; ++t) {
                    gw[p * F + t] += go[p] * pos[t];
                }
            }
        });
    }
    return out;
}

// I(i,j,k) = sum_t w(i,j,t) S(i,j,k,t)  ->  H x W x C
template <typename T>
Tensor<T> fuse_aif(Tape<T> &tape, const Tensor<T> &w, const Tensor<T> &slices)
{
    detail::require_volume(w, "fuse_aif");
    if (slices.rank() != 4 || slices.dim(0) != w.dim(0) || slices.dim(1) != w.dim(1) || slices.dim(3) != w.dim(3)) {
        throw Error("fuse_aif: weights " + shape_str(w.shape()) + " do not match stack " + shape_str(slices.shape()));
    }
    const std::size_t C = slices.dim(2), F = slices.dim(3), pixels = w.size() / F;
    Tensor<T> out(Shape{w.dim(0), w.dim(1), C});
    for (std::size_t p = 0; p < pixels; ++p) {
        const T *wp = w.data() + p * F;
        for (std::size_t c = 0; c < C; ++c) {
            const T *sp = slices.data() + (p * C + c) * F;
            T acc{0};
            for (std::size_t t = 0; t < F; ++t) {
                acc += wp[t] * sp[t];
            }
            out[p * C + c] = acc;
        }
    }
    if (tape.any_requires_grad({&w, &slices})) {
        tape.record(out, [w, slices, out, C, F, pixels]() mutable {
            auto go = out.grad();
            if (w.requires_grad()) {
                auto gw = w.grad_accumulator();
                for (std::size_t p = 0; p < pixels; ++p) {
                    for (std::size_t c = 0; c < C; ++c) {
                        const T g = go[p * C + c];
                        for (std::size_t t = 0; t < F; ++t) {
                            gw[p * F + t] += g * slices[(p * C + c) * F + t];
                        }
                    }
                }
            }
            if (slices.requires_grad()) {
                auto gs = slices.grad_accumulator();
                for (std::size_t p = 0; p < pixels; ++p) {
                    for (std::size_t c = 0; c < C; ++c) {
                        const T g = go[p * C + c];
                        for (std::size_t t = 0; t < F; ++t) {
                            gs[(p * C + c) * F + t] += g * w[p * F + t];
                        }
                    }
                }
            }
        });
    }
    return out;
}

// Non-recording conveniences.
template <typename T>
Tensor<T> softplus_normalize(const Tensor<T> &m)
{
    Tape<T> tape(false);
    return softplus_normalize(tape, m);
}

template <typename T>
Tensor<T> softmax_normalize(const Tensor<T> &m, T temperature = T{1})
{
    Tape<T> tape(false);
    return softmax_normalize(tape, m, temperature);
}

template <typename T>
Tensor<T> expected_depth(const Tensor<T> &w, const FocusAxis &axis)
{
    Tape<T> tape(false);
    return expected_depth(tape, w, axis);
}

template <typename T>
Tensor<T> fuse_aif(const Tensor<T> &w, const Tensor<T> &slices)
{
    Tape<T> tape(false);
    return fuse_aif(tape, w, slices);
}

} // namespace dff

#endif
