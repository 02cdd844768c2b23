// Binary model checkpoints.
//
//   "DFFCKPT\0"                       magic (8 bytes)
//   u32 version (=1)
//   i32 levels, i32 base_channels, i32 stack_kernel, f64 leaky_slope, u64 seed
//   u32 parameter count
//   per parameter, in build order: u32 rank, u32 dims[rank], f32 values[]
//
// All integers and floats little-endian.

#ifndef DFF_IO_CHECKPOINT_HPP
#define DFF_IO_CHECKPOINT_HPP

#include <dff/io/pfm.hpp>
#include <dff/net.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

namespace dff::io
{

inline constexpr char kCheckpointMagic[8] = {'D', 'F', 'F', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail
{

struct Writer {
    std::vector<unsigned char> out;

    template <typename U>
    void put(U v)
    {
        std::uint64_t bits = 0;
        if constexpr (sizeof(U) == 8) {
            bits = std::bit_cast<std::uint64_t>(v);
        } else {
            bits = std::bit_cast<std::uint32_t>(v);
        }
        for (std::size_t b = 0; b < sizeof(U); ++b) {
            out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
        }
    }
};

struct Reader {
    const std::vector<unsigned char> &in;
    const std::string &name;
    std::size_t pos = 0;

    Error fail(const std::string &what) const
    {
        return Error("checkpoint: " + name + ": " + what + " at byte " + std::to_string(pos));
    }

    template <typename U>
    U get()
    {
        if (in.size() - pos < sizeof(U)) {
            throw fail("truncated");
        }
        std::uint64_t bits = 0;
        for (std::size_t b = 0; b < sizeof(U); ++b) {
            bits |= static_cast<std::uint64_t>(in[pos + b]) << (8 * b);
        }
        pos += sizeof(U);
        if constexpr (sizeof(U) == 8) {
            return std::bit_cast<U>(bits);
        } else {
            return std::bit_cast<U>(static_cast<std::uint32_t>(bits));
        }
    }
};

} // namespace detail

inline std::vector<unsigned char> encode_checkpoint(const Model<float> &model)
{
    detail::Writer w;
    w.out.assign(kCheckpointMagic, kCheckpointMagic + 8);
    w.put(kCheckpointVersion);
    const ModelConfig &c = model.config;
    w.put(static_cast<std::int32_t>(c.levels));
    w.put(static_cast<std::int32_t>(c.base_channels));
    w.put(static_cast<std::int32_t>(c.stack_kernel));
    w.put(c.leaky_slope);
    w.put(c.seed);
    w.put(static_cast<std::uint32_t>(model.params.size()));
    for (const auto &p : model.params) {
        w.put(static_cast<std::uint32_t>(p.value.rank()));
        for (std::size_t d : p.value.shape()) {
            w.put(static_cast<std::uint32_t>(d));
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            w.put(p.value[i]);
        }
    }
    return w.out;
}

inline Model<float> decode_checkpoint(const std::vector<unsigned char> &bytes, const std::string &name = "<memory>")
{
    detail::Reader r{bytes, name};
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
        throw r.fail("bad magic");
    }
    r.pos = 8;
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw r.fail("unsupported version " + std::to_string(version));
    }
    ModelConfig c;
    c.levels = r.get<std::int32_t>();
    c.base_channels = r.get<std::int32_t>();
    c.stack_kernel = r.get<std::int32_t>();
    c.leaky_slope = r.get<double>();
    c.seed = r.get<std::uint64_t>();
    try {
        c.validate();
    } catch (const Error &e) {
        throw r.fail(e.what());
    }
    // shapes come from the config; the file must agree with them
    Model<float> model = build_model<float>(c);
    const auto count = r.get<std::uint32_t>();
    if (count != model.params.size()) {
        throw r.fail("expected " + std::to_string(model.params.size()) + " parameters, found " + std::to_string(count));
    }
    for (auto &p : model.params) {
        const auto rank = r.get<std::uint32_t>();
        Shape shape(rank);
        for (auto &d : shape) {
            d = r.get<std::uint32_t>();
        }
        if (shape != p.value.shape()) {
            throw r.fail("parameter " + p.name + " has shape " + shape_str(shape) + ", config implies "
                         + shape_str(p.value.shape()));
        }
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            p.value[i] = r.get<float>();
        }
    }
    if (r.pos != bytes.size()) {
        throw r.fail("trailing data");
    }
    return model;
}

inline void save_checkpoint(const std::string &path, const Model<float> &model)
{
    write_file(path, encode_checkpoint(model));
}

inline Model<float> load_checkpoint(const std::string &path)
{
    return decode_checkpoint(read_file(path), path);
}

} // namespace dff::io

#endif
