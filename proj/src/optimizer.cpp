#include "fsos/optimizer.hpp"

#include <cmath>

#include "fsos/error.hpp"

namespace fsos {

OptimizerKind parse_optimizer_kind(const std::string& name) {
    if (name == "sgd") return OptimizerKind::sgd;
    if (name == "adam") return OptimizerKind::adam;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd or adam)");
}

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

Optimizer::Optimizer(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("optimizer: learning rate must be finite and >= 0");
    }
}

void Optimizer::step(std::span<Tensor* const> params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i]->has_grad()) {
            throw AutodiffError("optimizer: parameter " + std::to_string(i) + " " +
                                shape_string(params[i]->shape()) + " has no gradient");
        }
    }
    if (kind_ == OptimizerKind::adam) {
        if (shapes_.empty()) {
            for (auto* p : params) {
                shapes_.push_back(p->shape());
                m_.emplace_back(p->size(), 0.0);
                v_.emplace_back(p->size(), 0.0);
            }
        }
        if (shapes_.size() != params.size()) {
            throw AutodiffError("optimizer: parameter count changed from " + std::to_string(shapes_.size()) +
                                " to " + std::to_string(params.size()));
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (shapes_[i] != params[i]->shape()) {
                throw AutodiffError("optimizer: parameter " + std::to_string(i) + " changed shape");
            }
        }
    }

    ++steps_;
    const double t = static_cast<double>(steps_);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        auto values = p.values();
        auto grad = p.grad();
        if (kind_ == OptimizerKind::sgd) {
            if (lr_ != 0.0) {
                for (std::size_t j = 0; j < values.size(); ++j) values[j] -= lr_ * grad[j];
            }
        } else {
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < values.size(); ++j) {
                m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                if (lr_ != 0.0) values[j] -= lr_ * mhat / (std::sqrt(vhat) + epsilon);
            }
        }
        p.clear_grad();
    }
}

}  // namespace fsos
