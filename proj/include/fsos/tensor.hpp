#pragma once

#include <cstddef>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fsos {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major array of doubles with an optional gradient buffer.
//
// Scalars use shape {1}. A tensor flagged `requires_grad` receives gradient
// contributions when it is registered on a Tape with Tape::param and a
// backward pass reaches it.
class Tensor {
public:
    Tensor() : shape_{1}, values_(1, 0.0) {}
    Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor filled(Shape shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values);
    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static Tensor identity(std::size_t n);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t size() const noexcept { return values_.size(); }

    std::span<const double> values() const noexcept { return values_; }
    std::span<double> values() noexcept { return values_; }
    const std::vector<double>& data() const noexcept { return values_; }

    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double at(std::size_t row, std::size_t col) const;
    double item() const;

    bool requires_grad() const noexcept { return requires_grad_; }
    void set_requires_grad(bool flag) noexcept { requires_grad_ = flag; }

    bool has_grad() const noexcept { return grad_.has_value(); }
    std::span<const double> grad() const;
    // Adds `delta` into the gradient buffer, allocating it on first use.
    void accumulate_grad(std::span<const double> delta);
    void zero_grad();
    void clear_grad() noexcept { grad_.reset(); }

    // Copy of rows [begin, begin + count) of a rank >= 1 tensor.
    Tensor rows(std::size_t begin, std::size_t count) const;

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.values_ == b.values_;
    }

private:
    Shape shape_;
    std::vector<double> values_;
    bool requires_grad_ = false;
    std::optional<std::vector<double>> grad_;
};

// Bitwise comparison of values (distinguishes -0.0 from 0.0 and compares NaN payloads).
bool bit_identical(const Tensor& a, const Tensor& b);

}  // namespace fsos
