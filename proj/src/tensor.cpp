#include "gradbench/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "gradbench/errors.hpp"

namespace gradbench {

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

namespace {

void check_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor dimensions must be positive, got " + shape_string(shape));
    }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
    check_shape(shape_);
    if (data_.size() != shape_numel(shape_)) {
        throw ShapeError("tensor of shape " + shape_string(shape_) + " needs " + std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(data_.size()));
    }
}

std::size_t Tensor::flat_index(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
        throw ShapeError("index rank " + std::to_string(index.size()) + " does not match tensor " + shape_string(shape_));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= shape_[axis]) throw ShapeError("index out of range for tensor " + shape_string(shape_));
        flat = flat * shape_[axis] + i;
        ++axis;
    }
    return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return data_[flat_index(index)]; }

double Tensor::at(std::initializer_list<std::size_t> index) const { return data_[flat_index(index)]; }

double Tensor::item() const {
    if (data_.size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != data_.size()) {
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace gradbench
