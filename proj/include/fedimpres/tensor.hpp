#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fedimpres {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. Plain value type.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    const std::vector<double>& values() const noexcept { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& at(std::size_t r, std::size_t c) { return data_[r * shape_.back() + c]; }
    double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
    double item() const;

    // Same data, new shape with equal element count.
    Tensor reshaped(Shape shape) const;
    // Rows [begin, end) along the leading dimension.
    Tensor slice_rows(std::size_t begin, std::size_t end) const;

    bool all_finite() const noexcept;
    double squared_norm() const noexcept;

    // Element-wise bit comparison (distinguishes -0.0 from 0.0).
    bool bitwise_equal(const Tensor& other) const noexcept;
    friend bool operator==(const Tensor& a, const Tensor& b) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

using TensorList = std::vector<Tensor>;

// Gather rows of `src` along the leading dimension.
Tensor gather_rows(const Tensor& src, std::span<const std::size_t> rows);

bool same_shapes(const TensorList& a, const TensorList& b);
double max_abs_diff(const Tensor& a, const Tensor& b);

} // namespace fedimpres
