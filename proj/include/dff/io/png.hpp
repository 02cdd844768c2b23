// PNG through libpng. Reads 8/16-bit grey or colour (alpha dropped, palette
// expanded) into [0,1] floats; writes 8 or 16 bit, rounding half up.

#ifndef DFF_IO_PNG_HPP
#define DFF_IO_PNG_HPP

#include <dff/tensor.hpp>

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

namespace dff::io
{

enum class PngDepth { png8 = 8, png16 = 16 };

struct PngImage {
    Tensor<float> data; // H x W x C (C = 1 or 3)
    PngDepth depth = PngDepth::png8;
};

namespace detail
{

struct FileCloser {
    void operator()(std::FILE *f) const
    {
        if (f) {
            std::fclose(f);
        }
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_error_to_longjmp(png_structp png, png_const_charp msg)
{
    auto *buf = static_cast<std::string *>(png_get_error_ptr(png));
    if (buf) {
        *buf = msg;
    }
    png_longjmp(png, 1);
}

inline void png_warning_ignore(png_structp, png_const_charp) {}

} // namespace detail

inline PngImage read_png(const std::string &path)
{
    detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
    if (!fp) {
        throw Error("png: cannot open " + path);
    }
    unsigned char sig[8] = {};
    if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
        throw Error("png: " + path + ": bad signature at byte 0");
    }
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_to_longjmp,
                                             detail::png_warning_ignore);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("png: out of memory");
    }
    PngImage img;
    std::vector<png_bytep> row_ptrs;
    std::vector<unsigned char> raster;
    if (setjmp(png_jmpbuf(png))) {
        const long at = std::ftell(fp.get());
        png_destroy_read_struct(&png, &info, nullptr);
        throw Error("png: " + path + ": " + err + " (near byte " + std::to_string(at) + ")");
    }
    png_init_io(png, fp.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    int bits = png_get_bit_depth(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) {
        png_set_palette_to_rgb(png);
        bits = 8;
    }
    if (color == PNG_COLOR_TYPE_GRAY && bits < 8) {
        png_set_expand_gray_1_2_4_to_8(png);
        bits = 8;
    }
    if (color & PNG_COLOR_MASK_ALPHA) {
        png_set_strip_alpha(png);
    }
    if (png_get_valid(png, info, PNG_INFO_tRNS)) {
        png_set_tRNS_to_alpha(png);
        png_set_strip_alpha(png);
    }
    png_read_update_info(png, info);
    const std::size_t W = png_get_image_width(png, info), H = png_get_image_height(png, info);
    const std::size_t C = png_get_channels(png, info);
    const std::size_t rowbytes = png_get_rowbytes(png, info);
    raster.resize(rowbytes * H);
    row_ptrs.resize(H);
    for (std::size_t r = 0; r < H; ++r) {
        row_ptrs[r] = raster.data() + r * rowbytes;
    }
    png_read_image(png, row_ptrs.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    if (C != 1 && C != 3) {
        throw Error("png: " + path + ": unsupported channel count " + std::to_string(C));
    }
    img.depth = bits == 16 ? PngDepth::png16 : PngDepth::png8;
    img.data = Tensor<float>(Shape{H, W, C});
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t i = 0; i < W * C; ++i) {
            float v;
            if (bits == 16) {
                const unsigned hi = row_ptrs[r][2 * i], lo = row_ptrs[r][2 * i + 1];
                v = static_cast<float>((hi << 8) | lo) / 65535.0f;
            } else {
                v = static_cast<float>(row_ptrs[r][i]) / 255.0f;
            }
            img.data[r * W * C + i] = v;
        }
    }
    return img;
}

// Quantized level for v in [0,1]: floor(v * max + 0.5).
inline unsigned quantize_level(double v, unsigned max_level)
{
    return static_cast<unsigned>(std::floor(v * max_level + 0.5));
}

template <typename T>
void write_png(const std::string &path, const Tensor<T> &img, PngDepth depth = PngDepth::png8)
{
    if (img.rank() != 3 || (img.dim(2) != 1 && img.dim(2) != 3)) {
        throw Error("png: expected H x W x 1 or H x W x 3, got " + shape_str(img.shape()));
    }
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double v = static_cast<double>(img[i]);
        if (!std::isfinite(v) || v < 0.0 || v > 1.0) {
            throw Error("png: value " + std::to_string(v) + " at flat index " + std::to_string(i)
                        + " outside [0, 1]");
        }
    }
    const std::size_t H = img.dim(0), W = img.dim(1), C = img.dim(2);
    const int bits = static_cast<int>(depth);
    const unsigned maxv = bits == 16 ? 65535u : 255u;
    const std::size_t bpc = bits / 8;
    std::vector<unsigned char> raster(H * W * C * bpc);
    for (std::size_t i = 0; i < H * W * C; ++i) {
        const unsigned q = quantize_level(static_cast<double>(img[i]), maxv);
        if (bpc == 2) {
            raster[2 * i] = static_cast<unsigned char>(q >> 8);
            raster[2 * i + 1] = static_cast<unsigned char>(q & 0xFFu);
        } else {
            raster[i] = static_cast<unsigned char>(q);
        }
    }

    detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
    if (!fp) {
        throw Error("png: cannot write " + path);
    }
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, detail::png_error_to_longjmp,
                                              detail::png_warning_ignore);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: out of memory");
    }
    std::vector<png_bytep> rows(H);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("png: " + path + ": " + err);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(W), static_cast<png_uint_32>(H), bits,
                 C == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::size_t r = 0; r < H; ++r) {
        rows[r] = raster.data() + r * W * C * bpc;
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

} // namespace dff::io

#endif
