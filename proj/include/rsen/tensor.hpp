#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace rsen {

/// NCHW extents of a rank-4 tensor.
struct Shape {
    std::size_t n = 0;
    std::size_t c = 0;
    std::size_t h = 0;
    std::size_t w = 0;

    [[nodiscard]] constexpr std::size_t numel() const noexcept { return n * c * h * w; }
    [[nodiscard]] constexpr std::size_t plane() const noexcept { return h * w; }

    friend constexpr bool operator==(const Shape&, const Shape&) = default;

    [[nodiscard]] std::string str() const {
        return "(" + std::to_string(n) + ", " + std::to_string(c) + ", " + std::to_string(h) + ", " +
               std::to_string(w) + ")";
    }
};

/// Dense row-major NCHW tensor with value semantics.
///
/// `T` is the precision: `float` for training and inference, `double` for
/// gradient verification.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.numel(), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
        if (data_.size() != shape_.numel()) {
            throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                                 " does not match dims " + shape_.str());
        }
    }

    static Tensor zeros(Shape shape) { return Tensor(shape, T{0}); }
    static Tensor ones(Shape shape) { return Tensor(shape, T{1}); }
    static Tensor full(Shape shape, T v) { return Tensor(shape, v); }

    [[nodiscard]] const Shape& shape() const noexcept { return shape_; }
    [[nodiscard]] std::size_t numel() const noexcept { return data_.size(); }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    [[nodiscard]] std::span<T> data() noexcept { return data_; }
    [[nodiscard]] std::span<const T> data() const noexcept { return data_; }
    [[nodiscard]] const std::vector<T>& vec() const noexcept { return data_; }

    [[nodiscard]] std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
    }

    T& operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) noexcept {
        return data_[offset(n, c, y, x)];
    }
    T operator()(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const noexcept {
        return data_[offset(n, c, y, x)];
    }

    T& operator[](std::size_t i) noexcept { return data_[i]; }
    T operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Pointer to the (n, c) plane.
    T* plane(std::size_t n, std::size_t c) noexcept { return data_.data() + offset(n, c, 0, 0); }
    const T* plane(std::size_t n, std::size_t c) const noexcept { return data_.data() + offset(n, c, 0, 0); }

    template <typename U>
    [[nodiscard]] Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
    }

    [[nodiscard]] T sum() const noexcept {
        T acc{0};
        for (T v : data_) acc += v;
        return acc;
    }

    /// Single element of a 1x1x1x1 tensor.
    [[nodiscard]] T item() const {
        if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_.str());
        return data_[0];
    }

    void fill(T v) noexcept { std::fill(data_.begin(), data_.end(), v); }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

private:
    Shape shape_{};
    std::vector<T> data_;
};

/// Largest |a - b| over all elements; dims must agree.
template <typename T>
[[nodiscard]] T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.shape() != b.shape()) throw DimensionError("max_abs_diff: " + a.shape().str() + " vs " + b.shape().str());
    T m{0};
    for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace rsen
