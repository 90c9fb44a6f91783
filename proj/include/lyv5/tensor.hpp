#pragma once

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lyv5 {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

using Shape = std::vector<std::size_t>;

inline constexpr std::size_t kMaxRank = 5;

inline std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ')';
    return os.str();
}

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

template <std::floating_point T>
constexpr DType dtype_of()
{
    return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

// Dense row-major tensor. Copies are shallow handles over the same buffers;
// ops never write into their inputs, so sharing is safe. `clone()` deep-copies.
template <std::floating_point T>
class Tensor {
public:
    using value_type = T;

    Tensor() : Tensor(Shape{}) {}

    explicit Tensor(Shape shape, T fill = T(0))
        : shape_(std::move(shape))
    {
        check_shape(shape_);
        data_ = std::make_shared<std::vector<T>>(lyv5::numel(shape_), fill);
    }

    Tensor(Shape shape, std::vector<T> values)
        : shape_(std::move(shape))
    {
        check_shape(shape_);
        if (values.size() != lyv5::numel(shape_))
            throw ShapeError("tensor data length " + std::to_string(values.size())
                             + " does not match shape " + to_string(shape_));
        data_ = std::make_shared<std::vector<T>>(std::move(values));
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng)
    {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (auto& v : *t.data_) v = static_cast<T>(dist(rng));
        return t;
    }

    static Tensor normal(Shape shape, T mean, T stddev, std::mt19937_64& rng)
    {
        Tensor t(std::move(shape));
        std::normal_distribution<double> dist(mean, stddev);
        for (auto& v : *t.data_) v = static_cast<T>(dist(rng));
        return t;
    }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t numel() const noexcept { return data_->size(); }

    std::span<const T> data() const noexcept { return {data_->data(), data_->size()}; }
    // Writable view for freshly built outputs and optimizer updates.
    std::span<T> data_mut() noexcept { return {data_->data(), data_->size()}; }
    T operator[](std::size_t i) const { return (*data_)[i]; }
    T item() const
    {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
        return (*data_)[0];
    }

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool on)
    {
        requires_grad_ = on;
        if (on && !grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
    }

    bool has_grad() const noexcept { return static_cast<bool>(grad_); }
    std::span<const T> grad() const
    {
        if (!grad_) throw Error("tensor has no gradient buffer");
        return {grad_->data(), grad_->size()};
    }
    std::span<T> grad_mut()
    {
        if (!grad_) grad_ = std::make_shared<std::vector<T>>(numel(), T(0));
        return {grad_->data(), grad_->size()};
    }
    void zero_grad()
    {
        if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
    }
    void drop_grad() noexcept { grad_.reset(); }

    Tensor clone() const
    {
        Tensor t(shape_, *data_);
        t.requires_grad_ = requires_grad_;
        if (grad_) t.grad_ = std::make_shared<std::vector<T>>(*grad_);
        return t;
    }

    // Same data buffer viewed under a new shape (no copy, no grad).
    Tensor view(Shape shape) const
    {
        if (lyv5::numel(shape) != numel())
            throw ShapeError("cannot view " + to_string(shape_) + " as " + to_string(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = data_;
        return t;
    }

    bool shares_data_with(const Tensor& other) const noexcept { return data_ == other.data_; }

    template <std::floating_point U>
    Tensor<U> cast() const
    {
        std::vector<U> out(numel());
        std::transform(data_->begin(), data_->end(), out.begin(), [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

private:
    static void check_shape(const Shape& shape)
    {
        if (shape.size() > kMaxRank)
            throw ShapeError("rank " + std::to_string(shape.size()) + " exceeds maximum of 5");
        for (auto e : shape)
            if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape));
    }

    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
    std::shared_ptr<std::vector<T>> grad_;
    bool requires_grad_ = false;
};

} // namespace lyv5
