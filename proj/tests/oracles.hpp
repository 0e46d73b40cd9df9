#pragma once

// Brute-force reference implementations the library is checked against.
// They share no code with the library beyond the record and tape types.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "fsos/metrics.hpp"
#include "fsos/tape.hpp"

namespace oracle {

using fsos::Label;
using fsos::PredictionRecord;

// Mann-Whitney by enumerating every (known, unknown) pair.
inline double auroc_pairs(const std::vector<PredictionRecord>& records) {
    double wins = 0.0;
    double pairs = 0.0;
    for (const auto& a : records) {
        if (!a.truth.is_known()) continue;
        for (const auto& b : records) {
            if (b.truth.is_known()) continue;
            pairs += 1.0;
            if (a.score > b.score) wins += 1.0;
            else if (a.score == b.score) wins += 0.5;
        }
    }
    return wins / pairs;
}

// Confusion dictionary keyed by (truth, predicted).
struct Confusion {
    std::map<std::pair<Label, Label>, std::size_t> cells;

    explicit Confusion(const std::vector<PredictionRecord>& records) {
        for (const auto& r : records) ++cells[{r.truth, r.predicted}];
    }

    std::set<Label> known_classes() const {
        std::set<Label> out;
        for (const auto& [key, count] : cells) {
            if (key.first.is_known()) out.insert(key.first);
            if (key.second.is_known()) out.insert(key.second);
        }
        return out;
    }

    double f1_open() const {
        double tp = 0, fp = 0, fn = 0;
        for (Label c : known_classes()) {
            for (const auto& [key, count] : cells) {
                const auto [truth, pred] = key;
                if (truth == c && pred == c) tp += count;
                if (pred == c && truth != c) fp += count;
                if (truth == c && pred != c) fn += count;
            }
        }
        if (tp == 0) return 0.0;
        const double p = tp / (tp + fp), r = tp / (tp + fn);
        return 2 * p * r / (p + r);
    }

    double aks() const {
        double right = 0, total = 0;
        for (const auto& [key, count] : cells) {
            if (!key.first.is_known()) continue;
            total += count;
            if (key.second == key.first) right += count;
        }
        return right / total;
    }

    double aus() const {
        double right = 0, total = 0;
        for (const auto& [key, count] : cells) {
            if (key.first.is_known()) continue;
            total += count;
            if (key.second.is_unknown()) right += count;
        }
        return right / total;
    }
};

// Random open-set records: n known classes, sizes in [2, 200], at least one
// known and one unknown truth, scores on a coarse grid so ties occur.
inline std::vector<PredictionRecord> random_records(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const int n = std::uniform_int_distribution<int>(1, 8)(rng);
    const std::size_t size = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    std::uniform_int_distribution<int> label(-1, n - 1);
    std::uniform_int_distribution<int> grid(0, 20);
    std::vector<PredictionRecord> out(size);
    for (std::size_t i = 0; i < size; ++i) {
        int truth = label(rng);
        if (i == 0) truth = 0;
        if (i == 1) truth = -1;
        out[i] = {truth < 0 ? Label::unknown() : Label(truth), label(rng) < 0 ? Label::unknown() : Label(label(rng)),
                  grid(rng) / 20.0};
    }
    return out;
}

using Builder = std::function<fsos::Var(fsos::Tape&, const std::vector<fsos::Var>&)>;

// Central difference of the loss w.r.t. element i of point[p].
inline double central_difference(const Builder& build, std::vector<fsos::Tensor> point, std::size_t p, std::size_t i,
                                 double h = 1e-5) {
    auto eval = [&] {
        fsos::Tape tape;
        std::vector<fsos::Var> vars;
        for (auto& t : point) vars.push_back(tape.constant(t));
        return tape.item(build(tape, vars));
    };
    const double saved = point[p][i];
    point[p][i] = saved + h;
    const double up = eval();
    point[p][i] = saved - h;
    const double down = eval();
    return (up - down) / (2 * h);
}

// Worst relative error |a - n| / max(|a|, |n|, floor) over every element.
inline double worst_gradient_error(const Builder& build, std::vector<fsos::Tensor> point, double floor = 1e-3) {
    for (auto& t : point) {
        t.set_requires_grad(true);
        t.clear_grad();
    }
    {
        fsos::Tape tape;
        std::vector<fsos::Var> vars;
        for (auto& t : point) vars.push_back(tape.param(t));
        tape.backward(build(tape, vars));
    }
    double worst = 0.0;
    for (std::size_t p = 0; p < point.size(); ++p) {
        for (std::size_t i = 0; i < point[p].size(); ++i) {
            const double a = point[p].has_grad() ? point[p].grad()[i] : 0.0;
            const double n = central_difference(build, point, p, i);
            worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor}));
        }
    }
    return worst;
}

}  // namespace oracle
