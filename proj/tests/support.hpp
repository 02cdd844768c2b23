// Shared helpers for the unit tests.
#pragma once

#include <dff/tensor.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>

namespace testing_support
{

template <typename T>
dff::Tensor<T> random_tensor(std::mt19937_64 &rng, dff::Shape shape, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> u(lo, hi);
    dff::Tensor<T> t(std::move(shape));
    for (auto &v : t.values()) {
        v = static_cast<T>(u(rng));
    }
    return t;
}

// Fresh, empty directory under the system temp dir.
inline std::string scratch_dir(const std::string &name)
{
    namespace fs = std::filesystem;
    const fs::path p = fs::temp_directory_path() / ("dff_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p.string();
}

} // namespace testing_support
