#ifndef DFF_ADAM_HPP
#define DFF_ADAM_HPP

#include <dff/net.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

namespace dff
{

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Moments are kept in double regardless of the parameter precision.
struct OptimState {
    AdamConfig config;
    std::vector<std::vector<double>> m, v;
    std::uint64_t step = 0;

    OptimState() = default;
    explicit OptimState(AdamConfig cfg) : config(cfg) {}
};

// Bias-corrected Adam. Parameters without a gradient accumulator are treated
// as having zero gradient. A non-finite gradient anywhere rejects the whole
// step before any parameter changes.
template <typename T>
void adam_step(OptimState &state, Model<T> &model)
{
    for (const auto &p : model.params) {
        for (T g : p.value.grad()) {
            if (!std::isfinite(g)) {
                throw Error("adam_step: non-finite gradient in parameter " + p.name);
            }
        }
    }
    if (state.m.empty()) {
        for (const auto &p : model.params) {
            state.m.emplace_back(p.value.size(), 0.0);
            state.v.emplace_back(p.value.size(), 0.0);
        }
    }
    if (state.m.size() != model.params.size()) {
        throw Error("adam_step: optimizer state was built for a different model");
    }
    ++state.step;
    const AdamConfig &c = state.config;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < model.params.size(); ++i) {
        Tensor<T> &w = model.params[i].value;
        auto g = w.grad();
        auto &m = state.m[i];
        auto &v = state.v[i];
        if (m.size() != w.size()) {
            throw Error("adam_step: moment shape mismatch for " + model.params[i].name);
        }
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g.empty() ? 0.0 : static_cast<double>(g[j]);
            m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
            v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
            const double mhat = m[j] / bc1, vhat = v[j] / bc2;
            w[j] = static_cast<T>(static_cast<double>(w[j]) - c.lr * mhat / (std::sqrt(vhat) + c.eps));
        }
    }
}

} // namespace dff

#endif
