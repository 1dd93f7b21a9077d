#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace gradbench {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles. Value semantics; the element count
/// always equals the product of the shape.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> values);

    static Tensor scalar(double value) { return Tensor({1}, {value}); }
    static Tensor like(const Tensor& other, double fill = 0.0) { return Tensor(other.shape_, fill); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }
    double* raw() { return data_.data(); }
    const double* raw() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access, bounds checked.
    double& at(std::initializer_list<std::size_t> index);
    double at(std::initializer_list<std::size_t> index) const;

    // Single-element value; throws unless size() == 1.
    double item() const;

    Tensor reshaped(Shape shape) const;
    void fill(double value);
    bool all_finite() const;

    // Element-wise equality of shape and values (exact comparison).
    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    std::size_t flat_index(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace gradbench
