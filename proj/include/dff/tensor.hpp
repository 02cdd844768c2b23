// Shaped arrays and the reverse-mode tape used by every differentiable piece
// of the library.
//
// Axis convention for image data is H x W x C x F (height, width, channels,
// frames), stored row-major so the last axis varies fastest.

#ifndef DFF_TENSOR_HPP
#define DFF_TENSOR_HPP

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dff
{

class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape &shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape &shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        os << (i ? "x" : "") << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail
{

template <typename T>
struct Storage {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty when absent
    bool requires_grad = false;
    bool leaf = true;
};

} // namespace detail

// Handle to a shared buffer. Copying a Tensor aliases it; use clone() for a
// deep copy. The tape references storage through these handles.
template <typename T>
class Tensor
{
public:
    using value_type = T;

    Tensor() : s_(std::make_shared<detail::Storage<T>>()) {}

    explicit Tensor(Shape shape, T fill = T{0}) : Tensor()
    {
        s_->value.assign(shape_size(shape), fill);
        s_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : Tensor()
    {
        if (shape_size(shape) != values.size()) {
            throw Error("tensor: shape " + shape_str(shape) + " holds " + std::to_string(shape_size(shape))
                        + " values, got " + std::to_string(values.size()));
        }
        s_->shape = std::move(shape);
        s_->value = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    const Shape &shape() const { return s_->shape; }
    std::size_t rank() const { return s_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return s_->shape.at(axis); }
    std::size_t size() const { return s_->value.size(); }
    bool empty() const { return s_->value.empty(); }

    std::span<T> values() { return s_->value; }
    std::span<const T> values() const { return s_->value; }
    T *data() { return s_->value.data(); }
    const T *data() const { return s_->value.data(); }

    T &operator[](std::size_t i) { return s_->value[i]; }
    const T &operator[](std::size_t i) const { return s_->value[i]; }

    // rank-3 (H x W x C) and rank-4 (H x W x C x F) element access
    T &at(std::size_t h, std::size_t w, std::size_t c)
    {
        return s_->value[(h * s_->shape[1] + w) * s_->shape[2] + c];
    }
    const T &at(std::size_t h, std::size_t w, std::size_t c) const
    {
        return s_->value[(h * s_->shape[1] + w) * s_->shape[2] + c];
    }
    T &at(std::size_t h, std::size_t w, std::size_t c, std::size_t f)
    {
        return s_->value[((h * s_->shape[1] + w) * s_->shape[2] + c) * s_->shape[3] + f];
    }
    const T &at(std::size_t h, std::size_t w, std::size_t c, std::size_t f) const
    {
        return s_->value[((h * s_->shape[1] + w) * s_->shape[2] + c) * s_->shape[3] + f];
    }

    T item() const
    {
        if (size() != 1) {
            throw Error("tensor: item() on " + shape_str(shape()));
        }
        return s_->value[0];
    }

    bool requires_grad() const { return s_->requires_grad; }
    Tensor &set_requires_grad(bool on = true)
    {
        s_->requires_grad = on;
        return *this;
    }
    bool is_leaf() const { return s_->leaf; }

    bool has_grad() const { return !s_->grad.empty(); }
    std::span<const T> grad() const { return s_->grad; }

    // Allocates a zero accumulator on first use. Const because the gradient
    // lives in the shared storage, not in the handle.
    std::span<T> grad_accumulator() const
    {
        if (s_->grad.empty()) {
            s_->grad.assign(s_->value.size(), T{0});
        }
        return s_->grad;
    }
    void zero_grad()
    {
        if (!s_->grad.empty()) {
            std::fill(s_->grad.begin(), s_->grad.end(), T{0});
        }
    }
    void clear_grad() { s_->grad.clear(); }

    // Deep copy of the values; the copy is a fresh leaf without grad.
    Tensor clone() const { return Tensor(shape(), s_->value); }

    template <typename U>
    Tensor<U> cast() const
    {
        return Tensor<U>(shape(), std::vector<U>(s_->value.begin(), s_->value.end()));
    }

    bool aliases(const Tensor &other) const { return s_ == other.s_; }

private:
    template <typename>
    friend class Tape;

    std::shared_ptr<detail::Storage<T>> s_;
};

// Ordered record of differentiable operations. Replay runs in exact reverse
// recording order and visits each entry once.
template <typename T>
class Tape
{
public:
    Tape() = default;
    // A non-recording tape turns every op into plain evaluation.
    explicit Tape(bool recording) : recording_(recording) {}
    Tape(const Tape &) = delete;
    Tape &operator=(const Tape &) = delete;
    Tape(Tape &&) = default;
    Tape &operator=(Tape &&) = default;

    bool recording() const { return recording_; }

    bool any_requires_grad(std::initializer_list<const Tensor<T> *> inputs) const
    {
        return recording_ && std::any_of(inputs.begin(), inputs.end(), [](const Tensor<T> *t) { return t->requires_grad(); });
    }

    // Marks `output` as a non-leaf produced by `backward_fn`. The closure reads
    // output.grad() and accumulates into the inputs that require grad.
    void record(Tensor<T> output, std::function<void()> backward_fn)
    {
        if (!recording_) {
            return;
        }
        output.s_->requires_grad = true;
        output.s_->leaf = false;
        entries_.push_back({std::move(output), std::move(backward_fn)});
    }

    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // Intermediate gradients are reset on every call; leaf gradients
    // accumulate across calls until reset by the caller.
    void backward(Tensor<T> loss)
    {
        if (loss.size() != 1) {
            throw Error("backward: loss must have exactly one element, got shape " + shape_str(loss.shape()));
        }
        if (!loss.requires_grad()) {
            throw Error("backward: loss does not depend on any tensor that requires grad");
        }
        for (auto &e : entries_) {
            auto g = e.output.grad_accumulator();
            std::fill(g.begin(), g.end(), T{0});
        }
        loss.grad_accumulator()[0] += T{1};
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            it->backward();
        }
    }

private:
    struct Entry {
        Tensor<T> output;
        std::function<void()> backward;
    };
    std::vector<Entry> entries_;
    bool recording_ = true;
};

template <typename T>
void require_same_shape(const Tensor<T> &a, const Tensor<T> &b, const char *what)
{
    if (a.shape() != b.shape()) {
        throw Error(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

} // namespace dff

#endif
