#include "fsos/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fsos {

namespace {

double evaluate(const LossBuilder& builder, std::vector<Tensor>& point) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (auto& t : point) vars.push_back(tape.constant(t));
    return tape.item(builder(tape, vars));
}

}  // namespace

double GradientCheckReport::max_error() const {
    double worst = 0.0;
    for (const auto& e : entries) worst = std::max(worst, e.max_relative_error);
    return worst;
}

std::string GradientCheckReport::summary() const {
    std::ostringstream os;
    os << (passed ? "pass" : "FAIL") << " (tol " << tolerance << ")";
    for (const auto& e : entries) {
        os << "\n  " << e.name << ": max rel err " << e.max_relative_error << " at [" << e.worst_index
           << "] analytic " << e.analytic << " numeric " << e.numeric;
    }
    return os.str();
}

GradientCheckReport gradient_check(const LossBuilder& builder, std::vector<Tensor> point, double tolerance,
                                   std::vector<std::string> names, double step, double floor) {
    for (auto& t : point) {
        t.set_requires_grad(true);
        t.clear_grad();
    }
    {
        Tape tape;
        std::vector<Var> vars;
        for (auto& t : point) vars.push_back(tape.param(t));
        tape.backward(builder(tape, vars));
    }

    GradientCheckReport report;
    report.tolerance = tolerance;
    for (std::size_t p = 0; p < point.size(); ++p) {
        GradientCheckEntry entry;
        entry.name = p < names.size() ? names[p] : "param" + std::to_string(p);
        const std::vector<double> analytic = point[p].has_grad()
                                                 ? std::vector<double>(point[p].grad().begin(), point[p].grad().end())
                                                 : std::vector<double>(point[p].size(), 0.0);
        for (std::size_t i = 0; i < point[p].size(); ++i) {
            const double saved = point[p][i];
            point[p][i] = saved + step;
            const double up = evaluate(builder, point);
            point[p][i] = saved - step;
            const double down = evaluate(builder, point);
            point[p][i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic[i];
            const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
            if (err > entry.max_relative_error || i == 0) {
                entry.max_relative_error = std::max(entry.max_relative_error, err);
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        if (entry.max_relative_error > tolerance) report.passed = false;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace fsos
