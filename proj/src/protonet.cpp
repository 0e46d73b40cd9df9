#include "fsos/protonet.hpp"

#include <algorithm>
#include <limits>

#include "fsos/error.hpp"

namespace fsos {

std::vector<Prototype> prototypes(std::span<const Tensor> groups, std::span<const std::int32_t> class_ids) {
    if (!class_ids.empty() && class_ids.size() != groups.size()) {
        throw ShapeError("prototypes: " + std::to_string(class_ids.size()) + " class ids for " +
                         std::to_string(groups.size()) + " groups");
    }
    std::vector<Prototype> out;
    out.reserve(groups.size());
    std::size_t dim = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        const Tensor& emb = groups[g];
        if (emb.rank() != 2) throw ShapeError("prototypes: group " + std::to_string(g) + " must be [k, D], got " + shape_string(emb.shape()));
        if (g == 0) dim = emb.dim(1);
        if (emb.dim(1) != dim) throw ShapeError("prototypes: group " + std::to_string(g) + " has dim " + std::to_string(emb.dim(1)) + ", expected " + std::to_string(dim));
        Tape tape;
        Prototype p;
        p.class_id = class_ids.empty() ? static_cast<std::int32_t>(g) : class_ids[g];
        p.vector = tape.tensor(tape.mean_rows(tape.constant(emb))).data();
        p.k = emb.dim(0);
        out.push_back(std::move(p));
    }
    return out;
}

Tensor prototype_matrix(const Tensor& support, std::size_t n, std::size_t k) {
    Tape tape;
    return tape.tensor(prototypes_on_tape(tape, tape.constant(support), n, k));
}

Tensor prototype_matrix(std::span<const Prototype> protos) {
    if (protos.empty()) throw ShapeError("prototype_matrix: no prototypes");
    const std::size_t d = protos[0].vector.size();
    std::vector<double> values;
    values.reserve(protos.size() * d);
    for (const auto& p : protos) {
        if (p.vector.size() != d) throw ShapeError("prototype_matrix: mixed prototype dims");
        values.insert(values.end(), p.vector.begin(), p.vector.end());
    }
    return Tensor({protos.size(), d}, std::move(values));
}

Var prototypes_on_tape(Tape& tape, Var support, std::size_t n, std::size_t k) {
    const auto& s = tape.shape(support);
    if (n == 0 || k == 0) throw ShapeError("prototypes: n and k must be positive");
    if (s.size() != 2 || s[0] != n * k) {
        throw ShapeError("prototypes: support " + shape_string(s) + " is not [" + std::to_string(n * k) + ", D]");
    }
    std::vector<Var> rows;
    rows.reserve(n);
    for (std::size_t c = 0; c < n; ++c) rows.push_back(tape.mean_rows(tape.slice_rows(support, c * k, k)));
    return tape.concat_rows(rows);
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("squared_distance: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = a[i] - b[i];
        s += diff * diff;
    }
    return s;
}

std::vector<double> closed_logits(std::span<const double> query, const Tensor& prototypes) {
    if (prototypes.rank() != 2 || prototypes.dim(0) == 0) throw ShapeError("closed_logits: prototypes must be [n, D]");
    const std::size_t n = prototypes.dim(0), d = prototypes.dim(1);
    if (query.size() != d) {
        throw ShapeError("closed_logits: query dim " + std::to_string(query.size()) + " vs prototype dim " + std::to_string(d));
    }
    std::vector<double> out(n);
    for (std::size_t c = 0; c < n; ++c) out[c] = -squared_distance(query, prototypes.values().subspan(c * d, d));
    return out;
}

Tensor closed_logits(const Tensor& queries, const Tensor& prototypes) {
    if (queries.rank() != 2) throw ShapeError("closed_logits: queries must be [m, D], got " + shape_string(queries.shape()));
    const std::size_t m = queries.dim(0), d = queries.dim(1);
    if (prototypes.rank() != 2) throw ShapeError("closed_logits: prototypes must be [n, D]");
    const std::size_t n = prototypes.dim(0);
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const auto row = closed_logits(queries.values().subspan(i * d, d), prototypes);
        std::copy(row.begin(), row.end(), out.values().begin() + static_cast<std::ptrdiff_t>(i * n));
    }
    return out;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ShapeError("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

Var protonet_episode_loss(Tape& tape, Var support, Var queries, std::size_t n, std::size_t k, std::size_t q) {
    if (n < 2) throw ConfigError("protonet loss: needs at least 2 classes, got " + std::to_string(n));
    const auto& qs = tape.shape(queries);
    if (qs.size() != 2 || qs[0] != n * q) {
        throw ShapeError("protonet loss: queries " + shape_string(qs) + " are not [" + std::to_string(n * q) + ", D]");
    }
    Var protos = prototypes_on_tape(tape, support, n, k);
    Var logits = tape.neg(tape.squared_distance(queries, protos));
    std::vector<double> labels(n * q);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<double>(i / q);
    return tape.softmax_xent(logits, tape.constant({n * q}, std::move(labels)));
}

double threshold_score(std::span<const double> query, const Tensor& prototypes) {
    const auto logits = closed_logits(query, prototypes);
    double best = std::numeric_limits<double>::infinity();
    for (double l : logits) best = std::min(best, -l);
    return best;
}

ThresholdBaseline calibrate_threshold(std::span<const double> known_scores, std::span<const double> unknown_scores) {
    if (known_scores.empty()) throw DataError("calibrate_threshold: no known-query scores");
    if (unknown_scores.empty()) throw DataError("calibrate_threshold: no unknown-query scores");

    std::vector<double> known(known_scores.begin(), known_scores.end());
    std::vector<double> unknown(unknown_scores.begin(), unknown_scores.end());
    std::sort(known.begin(), known.end());
    std::sort(unknown.begin(), unknown.end());

    std::vector<double> pooled(known);
    pooled.insert(pooled.end(), unknown.begin(), unknown.end());
    std::sort(pooled.begin(), pooled.end());
    pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

    auto balanced = [&](double tau) {
        const auto accepted = std::upper_bound(known.begin(), known.end(), tau) - known.begin();
        const auto rejected = unknown.end() - std::upper_bound(unknown.begin(), unknown.end(), tau);
        return 0.5 * (static_cast<double>(accepted) / static_cast<double>(known.size()) +
                      static_cast<double>(rejected) / static_cast<double>(unknown.size()));
    };

    if (pooled.size() == 1) return {pooled[0], balanced(pooled[0])};
    ThresholdBaseline best{0.0, -1.0};
    for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
        const double tau = 0.5 * (pooled[i] + pooled[i + 1]);
        const double b = balanced(tau);
        if (b > best.balanced_accuracy) best = {tau, b};
    }
    return best;
}

Tensor ProtoNetClassifier::logits(const Tensor& support, const Tensor& queries, std::size_t n, std::size_t k) const {
    return closed_logits(queries, prototype_matrix(support, n, k));
}

}  // namespace fsos
