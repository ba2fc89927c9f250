#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "angiodit/numerics/memory.hpp"

namespace angiodit {

// Scalar type of every tensor. 32-bit by default; the finite-difference
// verification build defines ANGIODIT_REAL_DOUBLE.
#if defined(ANGIODIT_REAL_DOUBLE)
using Real = double;
#else
using Real = float;
#endif

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of 32-bit reals.
class Tensor {
public:
    using Storage = std::vector<Real, TrackingAllocator<Real>>;

    Tensor() = default;
    explicit Tensor(Shape shape, Real fill = 0.0f);
    Tensor(Shape shape, std::span<const Real> values);
    Tensor(Shape shape, std::initializer_list<Real> values);

    static Tensor scalar(Real value) { return Tensor({1}, value); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t dim(std::size_t axis) const;
    std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const noexcept { return data_.empty(); }

    Real* data() noexcept { return data_.data(); }
    const Real* data() const noexcept { return data_.data(); }
    std::span<Real> values() noexcept { return {data_.data(), data_.size()}; }
    std::span<const Real> values() const noexcept { return {data_.data(), data_.size()}; }

    Real& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    Real operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // The single element of a one-element tensor.
    Real item() const;

    Tensor reshaped(Shape shape) const;
    void reshape(Shape shape);
    void fill(Real value);

    bool same_shape(const Tensor& other) const noexcept { return shape_ == other.shape_; }

private:
    Shape shape_;
    Storage data_;
};

bool all_finite(const Tensor& t);
Real max_abs_diff(const Tensor& a, const Tensor& b);
double sum_squares(const Tensor& t);

// Throws ShapeError naming `what` unless shapes are identical.
void require_same_shape(const Tensor& a, const Tensor& b, const char* what);

}  // namespace angiodit
