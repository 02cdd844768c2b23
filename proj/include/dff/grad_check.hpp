// Central-difference gradient checking.

#ifndef DFF_GRAD_CHECK_HPP
#define DFF_GRAD_CHECK_HPP

#include <dff/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

namespace dff
{

template <typename T>
using ScalarFn = std::function<Tensor<T>(Tape<T> &, const Tensor<T> &)>;

struct GradCheckResult {
    double max_relative_error = 0.0; // over coordinates not flagged as kinks
    std::size_t worst_index = 0;
    std::optional<std::size_t> non_finite_index; // first coordinate whose f was not finite
    std::vector<std::size_t> kinks;               // one-sided slopes disagree: not differentiable here
    std::size_t checked = 0;                      // coordinates compared

    bool ok(double tol) const { return !non_finite_index && max_relative_error < tol; }
};

inline double relative_error(double a, double b)
{
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

// Compares the tape gradient of `f` at `point` with central differences of
// the given step. A coordinate is a kink when its forward and backward
// one-sided slopes differ by more than `kink_tol` relative to the larger of
// the two. A crossed kink biases the central estimate by about half that gap,
// so a tight kink_tol bounds the error it can leak into the comparison.
template <typename T>
GradCheckResult grad_check(const ScalarFn<T> &f, const Tensor<T> &point, T step, double kink_tol = 1e-2)
{
    if (!(step > T{0})) {
        throw Error("grad_check: step must be positive");
    }
    GradCheckResult res;
    Tensor<T> x = point.clone();
    x.set_requires_grad(true);
    std::vector<T> analytic;
    T f0;
    {
        Tape<T> tape;
        Tensor<T> y = f(tape, x);
        f0 = y.item();
        if (!std::isfinite(static_cast<double>(f0))) {
            res.non_finite_index = 0;
            res.max_relative_error = INFINITY;
            return res;
        }
        tape.backward(y);
        analytic.assign(x.grad().begin(), x.grad().end());
    }
    auto eval = [&](std::size_t i, T v) {
        Tensor<T> xe = point.clone();
        xe[i] = v;
        Tape<T> tape(false);
        return f(tape, xe).item();
    };
    for (std::size_t i = 0; i < point.size(); ++i) {
        const T fp = eval(i, point[i] + step), fm = eval(i, point[i] - step);
        if (!std::isfinite(static_cast<double>(fp)) || !std::isfinite(static_cast<double>(fm))
            || !std::isfinite(static_cast<double>(analytic[i]))) {
            res.non_finite_index = i;
            res.max_relative_error = INFINITY;
            return res;
        }
        const double right = static_cast<double>(fp - f0) / static_cast<double>(step);
        const double left = static_cast<double>(f0 - fm) / static_cast<double>(step);
        if (std::abs(right - left) > kink_tol * std::max({std::abs(right), std::abs(left), 1e-12})) {
            res.kinks.push_back(i);
            continue;
        }
        const double numeric = static_cast<double>(fp - fm) / (2.0 * static_cast<double>(step));
        ++res.checked;
        const double e = relative_error(static_cast<double>(analytic[i]), numeric);
        if (e > res.max_relative_error) {
            res.max_relative_error = e;
            res.worst_index = i;
        }
    }
    return res;
}

} // namespace dff

#endif
