// Stack manifests: a JSON file beside its images.
//
//   {
//     "version": 1,
//     "slices": [{"file": "slice_00.png", "focus_position": 0.0}, ...],
//     "gt_depth": "depth.pfm",   (optional)
//     "gt_aif": "aif.png",       (optional)
//     "kappa": 2.0               (optional)
//   }
//
// File names are relative to the manifest's directory.

#ifndef DFF_IO_MANIFEST_HPP
#define DFF_IO_MANIFEST_HPP

#include <dff/augment.hpp>
#include <dff/io/pfm.hpp>
#include <dff/io/png.hpp>
#include <dff/stack.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace dff::io
{

inline constexpr int kManifestVersion = 1;

struct SliceEntry {
    std::string file;
    double focus_position = 0.0;
    bool operator==(const SliceEntry &) const = default;
};

struct StackManifest {
    int version = kManifestVersion;
    std::vector<SliceEntry> slices;
    std::optional<std::string> gt_depth;
    std::optional<std::string> gt_aif;
    std::optional<double> kappa;
    bool operator==(const StackManifest &) const = default;
};

struct LoadedStack {
    StackManifest manifest;
    FocalStack<float> stack;
    std::optional<Tensor<float>> gt_depth; // H x W x 1
    std::optional<Tensor<float>> gt_aif;   // H x W x 3

    TrainSample<float> sample() const { return {stack, gt_depth, std::nullopt, gt_aif}; }
};

inline nlohmann::ordered_json manifest_to_json(const StackManifest &m)
{
    nlohmann::ordered_json j;
    j["version"] = m.version;
    j["slices"] = nlohmann::ordered_json::array();
    for (const auto &s : m.slices) {
        j["slices"].push_back({{"file", s.file}, {"focus_position", s.focus_position}});
    }
    if (m.gt_depth) {
        j["gt_depth"] = *m.gt_depth;
    }
    if (m.gt_aif) {
        j["gt_aif"] = *m.gt_aif;
    }
    if (m.kappa) {
        j["kappa"] = *m.kappa;
    }
    return j;
}

inline void validate_manifest(const StackManifest &m, const std::string &path)
{
    if (m.version != kManifestVersion) {
        throw Error("manifest " + path + ": unsupported version " + std::to_string(m.version));
    }
    if (m.slices.size() < 2) {
        throw Error("manifest " + path + ": need at least 2 slices, got " + std::to_string(m.slices.size()));
    }
    for (std::size_t i = 1; i < m.slices.size(); ++i) {
        if (!(m.slices[i].focus_position > m.slices[i - 1].focus_position)) {
            throw Error("manifest " + path + ": focus positions must increase strictly; slice " + std::to_string(i)
                        + " (" + std::to_string(m.slices[i].focus_position) + ") does not exceed slice "
                        + std::to_string(i - 1) + " (" + std::to_string(m.slices[i - 1].focus_position) + ")");
        }
    }
}

inline StackManifest parse_manifest(const std::string &text, const std::string &path = "<memory>")
{
    StackManifest m;
    try {
        const auto j = nlohmann::json::parse(text);
        m.version = j.at("version").get<int>();
        for (const auto &s : j.at("slices")) {
            m.slices.push_back({s.at("file").get<std::string>(), s.at("focus_position").get<double>()});
        }
        if (j.contains("gt_depth")) {
            m.gt_depth = j["gt_depth"].get<std::string>();
        }
        if (j.contains("gt_aif")) {
            m.gt_aif = j["gt_aif"].get<std::string>();
        }
        if (j.contains("kappa")) {
            m.kappa = j["kappa"].get<double>();
        }
    } catch (const nlohmann::json::exception &e) {
        throw Error("manifest " + path + ": malformed JSON: " + e.what());
    }
    validate_manifest(m, path);
    return m;
}

inline void manifest_save(const std::string &path, const StackManifest &m)
{
    validate_manifest(m, path);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("manifest: cannot write " + path);
    }
    out << manifest_to_json(m).dump(2) << '\n';
}

namespace detail
{

inline Tensor<float> load_colour(const std::filesystem::path &p)
{
    if (p.extension() == ".pfm") {
        return read_pfm(p.string()).data;
    }
    return read_png(p.string()).data;
}

inline Tensor<float> to_rgb(const Tensor<float> &img)
{
    if (img.dim(2) == 3) {
        return img;
    }
    Tensor<float> out(Shape{img.dim(0), img.dim(1), 3});
    for (std::size_t p = 0; p < img.dim(0) * img.dim(1); ++p) {
        for (std::size_t c = 0; c < 3; ++c) {
            out[p * 3 + c] = img[p * img.dim(2)];
        }
    }
    return out;
}

} // namespace detail

inline LoadedStack manifest_load(const std::string &path)
{
    namespace fs = std::filesystem;
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("manifest: missing file " + path);
    }
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    LoadedStack r;
    r.manifest = parse_manifest(text, path);
    const fs::path dir = fs::path(path).parent_path();
    auto resolve = [&](const std::string &f) {
        const fs::path p = dir / f;
        if (!fs::exists(p)) {
            throw Error("manifest " + path + ": missing file " + p.string());
        }
        return p;
    };
    std::vector<Tensor<float>> images;
    std::vector<double> positions;
    for (std::size_t i = 0; i < r.manifest.slices.size(); ++i) {
        const auto &s = r.manifest.slices[i];
        Tensor<float> img = detail::to_rgb(detail::load_colour(resolve(s.file)));
        if (!images.empty() && (img.dim(0) != images[0].dim(0) || img.dim(1) != images[0].dim(1))) {
            throw Error("manifest " + path + ": size mismatch, slice " + std::to_string(i) + " is "
                        + std::to_string(img.dim(1)) + "x" + std::to_string(img.dim(0)) + " but slice 0 is "
                        + std::to_string(images[0].dim(1)) + "x" + std::to_string(images[0].dim(0)));
        }
        images.push_back(std::move(img));
        positions.push_back(s.focus_position);
    }
    r.stack = FocalStack<float>(stack_slices(images), FocusAxis(positions));
    const std::size_t H = r.stack.height(), W = r.stack.width();
    if (r.manifest.gt_depth) {
        Tensor<float> d = read_pfm(resolve(*r.manifest.gt_depth).string()).data;
        if (d.dim(0) != H || d.dim(1) != W || d.dim(2) != 1) {
            throw Error("manifest " + path + ": size mismatch, gt_depth is " + shape_str(d.shape()) + " for a "
                        + std::to_string(W) + "x" + std::to_string(H) + " stack");
        }
        r.gt_depth = std::move(d);
    }
    if (r.manifest.gt_aif) {
        Tensor<float> a = detail::to_rgb(detail::load_colour(resolve(*r.manifest.gt_aif)));
        if (a.dim(0) != H || a.dim(1) != W) {
            throw Error("manifest " + path + ": size mismatch, gt_aif is " + shape_str(a.shape()) + " for a "
                        + std::to_string(W) + "x" + std::to_string(H) + " stack");
        }
        r.gt_aif = std::move(a);
    }
    return r;
}

struct StackWriteOptions {
    PngDepth colour = PngDepth::png8;
    std::optional<double> kappa;
};

// Writes slice_XX.png (+ depth.pfm, aif.png when given) and manifest.json into
// `dir`. Returns the manifest path.
inline std::string write_stack(const std::string &dir, const FocalStack<float> &stack,
                               const std::optional<Tensor<float>> &gt_depth,
                               const std::optional<Tensor<float>> &gt_aif, const StackWriteOptions &opt = {})
{
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    StackManifest m;
    m.kappa = opt.kappa;
    for (std::size_t t = 0; t < stack.frames(); ++t) {
        char name[32];
        std::snprintf(name, sizeof name, "slice_%02zu.png", t);
        write_png((fs::path(dir) / name).string(), stack.slice(t), opt.colour);
        m.slices.push_back({name, stack.axis[t]});
    }
    if (gt_depth) {
        write_pfm((fs::path(dir) / "depth.pfm").string(), *gt_depth);
        m.gt_depth = "depth.pfm";
    }
    if (gt_aif) {
        write_png((fs::path(dir) / "aif.png").string(), *gt_aif, opt.colour);
        m.gt_aif = "aif.png";
    }
    const std::string path = (fs::path(dir) / "manifest.json").string();
    manifest_save(path, m);
    return path;
}

} // namespace dff::io

#endif
