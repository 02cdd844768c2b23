#ifndef DFF_STACK_HPP
#define DFF_STACK_HPP

#include <dff/fusion.hpp>
#include <dff/tensor.hpp>

#include <string>
#include <vector>

namespace dff
{

// F registered RGB slices (H x W x 3 x F, values in [0,1]) and their focus
// positions.
template <typename T>
struct FocalStack {
    Tensor<T> slices;
    FocusAxis axis;

    FocalStack() = default;
    FocalStack(Tensor<T> s, FocusAxis a) : slices(std::move(s)), axis(std::move(a))
    {
        if (slices.rank() != 4) {
            throw Error("focal stack: slices must be H x W x C x F, got " + shape_str(slices.shape()));
        }
        if (slices.dim(3) != axis.size()) {
            throw Error("focal stack: " + std::to_string(slices.dim(3)) + " slices but " + std::to_string(axis.size())
                        + " focus positions");
        }
    }

    std::size_t height() const { return slices.dim(0); }
    std::size_t width() const { return slices.dim(1); }
    std::size_t channels() const { return slices.dim(2); }
    std::size_t frames() const { return slices.dim(3); }

    // slice t as an H x W x C image
    Tensor<T> slice(std::size_t t) const
    {
        const std::size_t C = channels(), F = frames();
        Tensor<T> out(Shape{height(), width(), C});
        for (std::size_t p = 0; p < height() * width() * C; ++p) {
            out[p] = slices[p * F + t];
        }
        return out;
    }

    // keeps the listed frames, in the given order
    FocalStack subset(const std::vector<std::size_t> &frames_kept) const
    {
        const std::size_t n = frames_kept.size(), F = frames(), HWC = height() * width() * channels();
        Tensor<T> s(Shape{height(), width(), channels(), n});
        for (std::size_t p = 0; p < HWC; ++p) {
            for (std::size_t j = 0; j < n; ++j) {
                s[p * n + j] = slices[p * F + frames_kept[j]];
            }
        }
        return FocalStack(std::move(s), axis.subset(frames_kept));
    }

    template <typename U>
    FocalStack<U> cast() const
    {
        return FocalStack<U>(slices.template cast<U>(), axis);
    }
};

// Stack an ordered list of H x W x C images into H x W x C x F.
template <typename T>
Tensor<T> stack_slices(const std::vector<Tensor<T>> &images)
{
    if (images.empty()) {
        throw Error("stack_slices: no images");
    }
    const Shape &s0 = images.front().shape();
    if (s0.size() != 3) {
        throw Error("stack_slices: expected H x W x C images, got " + shape_str(s0));
    }
    const std::size_t F = images.size(), HWC = shape_size(s0);
    Tensor<T> out(Shape{s0[0], s0[1], s0[2], F});
    for (std::size_t t = 0; t < F; ++t) {
        if (images[t].shape() != s0) {
            throw Error("stack_slices: slice " + std::to_string(t) + " has shape " + shape_str(images[t].shape())
                        + ", expected " + shape_str(s0));
        }
        for (std::size_t p = 0; p < HWC; ++p) {
            out[p * F + t] = images[t][p];
        }
    }
    return out;
}

} // namespace dff

#endif
