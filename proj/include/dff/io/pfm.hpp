// Portable float map. Header "PF" (3 channels) or "Pf" (1 channel), then
// width, height and a scale whose sign gives the byte order (negative =
// little-endian). Rows are stored bottom-up.

#ifndef DFF_IO_PFM_HPP
#define DFF_IO_PFM_HPP

#include <dff/tensor.hpp>

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

namespace dff::io
{

struct PfmImage {
    Tensor<float> data; // H x W x C, top row first
    double scale = -1.0;
};

namespace detail
{

inline std::uint32_t bswap32(std::uint32_t v)
{
    return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
}

inline bool host_little_endian()
{
    return std::endian::native == std::endian::little;
}

} // namespace detail

inline PfmImage decode_pfm(const std::vector<unsigned char> &bytes, const std::string &name = "<memory>")
{
    std::size_t pos = 0;
    auto fail = [&](const std::string &what) -> Error {
        return Error("pfm: " + name + ": " + what + " at byte " + std::to_string(pos));
    };
    auto skip_ws = [&] {
        while (pos < bytes.size() && std::isspace(bytes[pos])) {
            ++pos;
        }
    };
    auto token = [&]() {
        skip_ws();
        const std::size_t start = pos;
        while (pos < bytes.size() && !std::isspace(bytes[pos])) {
            ++pos;
        }
        if (start == pos) {
            throw fail("unexpected end of header");
        }
        return std::string(bytes.begin() + static_cast<std::ptrdiff_t>(start), bytes.begin() + static_cast<std::ptrdiff_t>(pos));
    };

    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != 'F' && bytes[1] != 'f')) {
        throw fail("bad magic (expected PF or Pf)");
    }
    const std::size_t channels = bytes[1] == 'F' ? 3 : 1;
    pos = 2;
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw fail("bad magic (expected PF or Pf)");
    }
    auto parse_dim = [&](const char *what) {
        const std::size_t at = pos;
        const std::string t = token();
        std::size_t used = 0;
        long long v = 0;
        try {
            v = std::stoll(t, &used);
        } catch (const std::exception &) {
            used = 0;
        }
        if (used != t.size() || v <= 0) {
            pos = at;
            skip_ws();
            throw fail(std::string("invalid ") + what + " '" + t + "'");
        }
        return static_cast<std::size_t>(v);
    };
    const std::size_t width = parse_dim("width");
    const std::size_t height = parse_dim("height");
    const std::size_t scale_at = pos;
    const std::string st = token();
    double scale = 0;
    std::size_t used = 0;
    try {
        scale = std::stod(st, &used);
    } catch (const std::exception &) {
        used = 0;
    }
    if (used != st.size() || scale == 0.0 || !std::isfinite(scale)) {
        pos = scale_at;
        skip_ws();
        throw fail("invalid scale '" + st + "'");
    }
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw fail("missing whitespace after scale");
    }
    ++pos; // exactly one whitespace byte before the raster

    const std::size_t count = width * height * channels;
    if (bytes.size() - pos < count * 4) {
        const std::size_t header_end = pos;
        pos = bytes.size();
        throw Error("pfm: " + name + ": truncated raster at byte " + std::to_string(pos) + ", expected "
                    + std::to_string(header_end + count * 4) + " bytes");
    }
    const bool file_little = scale < 0;
    const bool swap = file_little != detail::host_little_endian();
    PfmImage img;
    img.scale = scale;
    img.data = Tensor<float>(Shape{height, width, channels});
    for (std::size_t r = 0; r < height; ++r) {
        const std::size_t dst_row = height - 1 - r;
        for (std::size_t i = 0; i < width * channels; ++i) {
            std::uint32_t u;
            std::memcpy(&u, bytes.data() + pos + (r * width * channels + i) * 4, 4);
            if (swap) {
                u = detail::bswap32(u);
            }
            img.data[dst_row * width * channels + i] = std::bit_cast<float>(u);
        }
    }
    return img;
}

inline std::vector<unsigned char> read_file(const std::string &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error("cannot open " + path);
    }
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string &path, const std::vector<unsigned char> &bytes)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot write " + path);
    }
    out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw Error("write failed: " + path);
    }
}

inline PfmImage read_pfm(const std::string &path)
{
    return decode_pfm(read_file(path), path);
}

// Always written little-endian (scale -1).
inline std::vector<unsigned char> encode_pfm(const Tensor<float> &img)
{
    if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3)) {
        throw Error("pfm: expected H x W x 1 or H x W x 3, got " + shape_str(img.shape()));
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        if (!std::isfinite(img[i])) {
            throw Error("pfm: non-finite value at flat index " + std::to_string(i));
        }
    }
    const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    const std::string header = std::string(C == 3 ? "PF" : "Pf") + "\n" + std::to_string(W) + " " + std::to_string(H)
                               + "\n-1.0\n";
    std::vector<unsigned char> out(header.begin(), header.end());
    out.reserve(header.size() + img.size() * 4);
    for (std::size_t r = 0; r < H; ++r) {
        const std::size_t src_row = H - 1 - r;
        for (std::size_t i = 0; i < W * C; ++i) {
            const std::uint32_t u = std::bit_cast<std::uint32_t>(img[src_row * W * C + i]);
            for (int b = 0; b < 4; ++b) {
                out.push_back(static_cast<unsigned char>((u >> (8 * b)) & 0xFFu));
            }
        }
    }
    return out;
}

inline void write_pfm(const std::string &path, const Tensor<float> &img)
{
    write_file(path, encode_pfm(img));
}

} // namespace dff::io

#endif
