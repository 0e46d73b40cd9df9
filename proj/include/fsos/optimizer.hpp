#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsos/tensor.hpp"

namespace fsos {

enum class OptimizerKind { sgd, adam };

OptimizerKind parse_optimizer_kind(const std::string& name);
std::string to_string(OptimizerKind kind);

// First-order optimizer over a fixed, ordered list of parameters.
//
// Adam uses beta1 = 0.9, beta2 = 0.999, eps = 1e-8 with bias correction.
// Moment buffers are bound to the parameter order and shapes seen on the
// first step; a later step with a different layout is an error.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, double learning_rate);

    // Applies one update to every parameter and clears its gradient, so the
    // next step requires a fresh backward pass. Throws if any parameter has
    // no gradient.
    void step(std::span<Tensor* const> params);

    OptimizerKind kind() const noexcept { return kind_; }
    double learning_rate() const noexcept { return lr_; }
    std::uint64_t steps() const noexcept { return steps_; }

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

private:
    OptimizerKind kind_;
    double lr_;
    std::uint64_t steps_ = 0;
    std::vector<Shape> shapes_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace fsos
