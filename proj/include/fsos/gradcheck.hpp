#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fsos/tape.hpp"

namespace fsos {

// Builds a scalar loss on `tape` from the registered parameters. Must be
// deterministic: it is re-run at every finite-difference probe.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> params)>;

struct GradientCheckEntry {
    std::string name;
    double max_relative_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradientCheckReport {
    std::vector<GradientCheckEntry> entries;
    double tolerance = 0.0;
    bool passed = true;

    double max_error() const;
    std::string summary() const;
};

// Compares backward() against central differences for every parameter
// element. Relative error is |a - n| / max(|a|, |n|, floor); the floor keeps
// elements whose true derivative is zero from being judged on roundoff alone.
GradientCheckReport gradient_check(const LossBuilder& builder, std::vector<Tensor> point,
                                   double tolerance, std::vector<std::string> names = {},
                                   double step = 1e-5, double floor = 1e-3);

}  // namespace fsos
