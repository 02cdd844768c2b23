// Depth evaluation metrics.
//
// Bumpiness is 100 x the mean Frobenius norm of the discrete Hessian of the
// signed error map, taken over pixels whose full 3x3 neighbourhood is valid.
// Ratio and log metrics only use pixels with gt > 0, and clamp pred to 1e-8.
// delta_k counts max(pred/gt, gt/pred) < 1.25^k (strict).

#ifndef DFF_METRICS_HPP
#define DFF_METRICS_HPP

#include <dff/losses.hpp>
#include <dff/tensor.hpp>

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace dff
{

struct MetricReport {
    double mae = 0, mse = 0, rmse = 0, log_rms = 0, abs_rel = 0, sqr_rel = 0, bumpiness = 0;
    double delta1 = 0, delta2 = 0, delta3 = 0;
    std::size_t valid_pixel_count = 0;

    // one `name value` pair per line
    std::string to_text() const
    {
        std::ostringstream os;
        auto line = [&os](const char *name, double v) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%.9g", v);
            os << name << ' ' << buf << '\n';
        };
        line("mae", mae);
        line("mse", mse);
        line("rmse", rmse);
        line("log_rms", log_rms);
        line("abs_rel", abs_rel);
        line("sqr_rel", sqr_rel);
        line("bumpiness", bumpiness);
        line("delta1", delta1);
        line("delta2", delta2);
        line("delta3", delta3);
        os << "valid_pixel_count " << valid_pixel_count << '\n';
        return os.str();
    }
};

inline constexpr double kDeltaBase = 1.25;
inline constexpr double kPredFloor = 1e-8;

template <typename T>
MetricReport compute_metrics(const Tensor<T> &pred, const Tensor<T> &gt, const ValidityMask &mask)
{
    require_same_shape(pred, gt, "compute_metrics");
    if (pred.rank() != 3 || pred.dim(2) != 1 || mask.height() != pred.dim(0) || mask.width() != pred.dim(1)) {
        throw Error("compute_metrics: depth " + shape_str(pred.shape()) + " does not match mask "
                    + std::to_string(mask.height()) + "x" + std::to_string(mask.width()));
    }
    const std::size_t H = pred.dim(0), W = pred.dim(1), n = H * W;

    MetricReport r;
    std::size_t n_all = 0, n_pos = 0, d1 = 0, d2 = 0, d3 = 0;
    double s_abs = 0, s_sq = 0, s_log = 0, s_rel = 0, s_sqrel = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i]) {
            continue;
        }
        const double p = static_cast<double>(pred[i]), g = static_cast<double>(gt[i]);
        const double e = p - g;
        ++n_all;
        s_abs += std::abs(e);
        s_sq += e * e;
        if (g > 0.0) {
            const double pc = std::max(p, kPredFloor);
            ++n_pos;
            const double dl = std::log(pc) - std::log(g);
            s_log += dl * dl;
            s_rel += std::abs(e) / g;
            s_sqrel += e * e / g;
            const double ratio = std::max(pc / g, g / pc);
            d1 += ratio < kDeltaBase ? 1 : 0;
            d2 += ratio < kDeltaBase * kDeltaBase ? 1 : 0;
            d3 += ratio < kDeltaBase * kDeltaBase * kDeltaBase ? 1 : 0;
        }
    }
    if (n_all == 0) {
        throw Error("compute_metrics: empty validity mask");
    }
    r.valid_pixel_count = n_all;
    r.mae = s_abs / static_cast<double>(n_all);
    r.mse = s_sq / static_cast<double>(n_all);
    r.rmse = std::sqrt(r.mse);
    if (n_pos > 0) {
        const double np = static_cast<double>(n_pos);
        r.log_rms = std::sqrt(s_log / np);
        r.abs_rel = s_rel / np;
        r.sqr_rel = s_sqrel / np;
        r.delta1 = static_cast<double>(d1) / np;
        r.delta2 = static_cast<double>(d2) / np;
        r.delta3 = static_cast<double>(d3) / np;
    }

    double s_bump = 0;
    std::size_t n_bump = 0;
    auto e = [&](std::size_t h, std::size_t w) {
        return static_cast<double>(pred[h * W + w]) - static_cast<double>(gt[h * W + w]);
    };
    for (std::size_t h = 1; h + 1 < H; ++h) {
        for (std::size_t w = 1; w + 1 < W; ++w) {
            bool ok = true;
            for (std::size_t y = h - 1; y <= h + 1 && ok; ++y) {
                for (std::size_t x = w - 1; x <= w + 1; ++x) {
                    ok = ok && mask.at(y, x);
                }
            }
            if (!ok) {
                continue;
            }
            const double dxx = e(h, w + 1) - 2.0 * e(h, w) + e(h, w - 1);
            const double dyy = e(h + 1, w) - 2.0 * e(h, w) + e(h - 1, w);
            const double dxy = (e(h + 1, w + 1) - e(h + 1, w - 1) - e(h - 1, w + 1) + e(h - 1, w - 1)) / 4.0;
            s_bump += std::sqrt(dxx * dxx + dyy * dyy + 2.0 * dxy * dxy);
            ++n_bump;
        }
    }
    r.bumpiness = n_bump > 0 ? 100.0 * s_bump / static_cast<double>(n_bump) : 0.0;
    return r;
}

template <typename T>
MetricReport compute_metrics(const Tensor<T> &pred, const Tensor<T> &gt)
{
    return compute_metrics(pred, gt, ValidityMask(pred.dim(0), pred.dim(1)));
}

} // namespace dff

#endif
