#include "fsos/tensor.hpp"

#include <cstring>
#include <sstream>

#include "fsos/error.hpp"

namespace fsos {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : shape_(std::move(shape)), values_(std::move(values)), requires_grad_(requires_grad) {
    if (shape_.empty()) throw ShapeError("tensor: empty shape (use {1} for scalars)");
    for (auto d : shape_) {
        if (d == 0) throw ShapeError("tensor: zero dimension in shape " + shape_string(shape_));
    }
    if (shape_size(shape_) != values_.size()) {
        throw ShapeError("tensor: shape " + shape_string(shape_) + " needs " +
                         std::to_string(shape_size(shape_)) + " values, got " +
                         std::to_string(values_.size()));
    }
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return filled(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::filled(Shape shape, double value, bool requires_grad) {
    auto n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return Tensor({1}, {value}, requires_grad); }

Tensor Tensor::vector(std::initializer_list<double> values) {
    return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values) {
    return Tensor({rows, cols}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = zeros({n, n});
    for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
        throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape_));
    }
    return shape_[axis];
}

double Tensor::at(std::size_t row, std::size_t col) const {
    if (rank() != 2) throw ShapeError("tensor: at(row, col) needs a matrix, got " + shape_string(shape_));
    return values_[row * shape_[1] + col];
}

double Tensor::item() const {
    if (values_.size() != 1) throw ShapeError("tensor: item() on non-scalar " + shape_string(shape_));
    return values_[0];
}

std::span<const double> Tensor::grad() const {
    if (!grad_) throw AutodiffError("tensor: gradient not populated");
    return *grad_;
}

void Tensor::accumulate_grad(std::span<const double> delta) {
    if (delta.size() != values_.size()) {
        throw ShapeError("tensor: gradient length " + std::to_string(delta.size()) + " != " +
                         std::to_string(values_.size()));
    }
    if (!grad_) {
        grad_.emplace(delta.begin(), delta.end());
        return;
    }
    for (std::size_t i = 0; i < delta.size(); ++i) (*grad_)[i] += delta[i];
}

void Tensor::zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), 0.0);
}

Tensor Tensor::rows(std::size_t begin, std::size_t count) const {
    const std::size_t n = shape_[0];
    if (count == 0 || begin + count > n) {
        throw ShapeError("tensor: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") out of range for shape " + shape_string(shape_));
    }
    const std::size_t stride = values_.size() / n;
    Shape shape = shape_;
    shape[0] = count;
    return Tensor(std::move(shape),
                  std::vector<double>(values_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                      values_.begin() + static_cast<std::ptrdiff_t>((begin + count) * stride)));
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

}  // namespace fsos
