// On-disk toy datasets: one scene_XXXX/ directory per scene, each holding a
// manifest, png8 slices, aif.png and depth.pfm.

#ifndef DFF_IO_DATASET_HPP
#define DFF_IO_DATASET_HPP

#include <dff/io/manifest.hpp>
#include <dff/toy.hpp>

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

namespace dff::io
{

inline std::string scene_dir_name(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%04zu", i);
    return buf;
}

// Returns the manifest paths in scene order.
inline std::vector<std::string> gen_toy_dataset(const std::string &out, std::uint64_t seed, std::size_t count,
                                                std::size_t size, std::size_t frames, double kappa)
{
    if (size == 0 || size % 8 != 0) {
        throw Error("gen_toy_dataset: size must be a positive multiple of 8, got " + std::to_string(size));
    }
    if (frames < 2) {
        throw Error("gen_toy_dataset: need at least 2 frames, got " + std::to_string(frames));
    }
    namespace fs = std::filesystem;
    fs::create_directories(out);
    const FocusAxis axis = FocusAxis::linspace(0.0, 1.0, frames);
    std::vector<std::string> manifests;
    for (std::size_t i = 0; i < count; ++i) {
        const Scene<float> scene = generate_toy_scene<float>(mix_seed(seed, i), size, kappa);
        const SynthesizedStack<float> s = synth_stack(scene, axis);
        manifests.push_back(write_stack((fs::path(out) / scene_dir_name(i)).string(), s.stack, s.depth, s.aif,
                                        {PngDepth::png8, kappa}));
    }
    return manifests;
}

// Every immediate subdirectory holding a manifest.json, in sorted name order.
inline std::vector<std::string> dataset_manifests(const std::string &dir)
{
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw Error("dataset: not a directory: " + dir);
    }
    std::vector<std::string> paths;
    for (const auto &e : fs::directory_iterator(dir)) {
        const fs::path m = e.path() / "manifest.json";
        if (e.is_directory() && fs::exists(m)) {
            paths.push_back(m.string());
        }
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty()) {
        throw Error("dataset: no */manifest.json under " + dir);
    }
    return paths;
}

inline std::vector<TrainSample<float>> load_dataset(const std::string &dir)
{
    std::vector<TrainSample<float>> out;
    for (const auto &m : dataset_manifests(dir)) {
        out.push_back(manifest_load(m).sample());
    }
    return out;
}

} // namespace dff::io

#endif
