#include "fsos/metabce.hpp"

#include <algorithm>
#include <cmath>

#include "fsos/error.hpp"
#include "fsos/protonet.hpp"

namespace fsos {

std::string to_string(MbceVariant variant) { return variant == MbceVariant::branch ? "branch" : "mainC"; }

MbceVariant parse_mbce_variant(const std::string& name) {
    if (name == "branch") return MbceVariant::branch;
    if (name == "mainC" || name == "mainc") return MbceVariant::mainC;
    throw ConfigError("unknown Meta-BCE variant '" + name + "' (expected branch or mainC)");
}

TrainableGroups MetaBceHead::groups() const noexcept {
    TrainableGroups g;
    if (variant == MbceVariant::branch) g.branch = true;
    else g.projection = true;
    return g;
}

double mbce_prob_known(double distance, double t) {
    const double z = -(distance + t);
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double mbce_prob_known(const MetaBceHead& head, std::span<const double> query, std::span<const double> prototype) {
    return mbce_prob_known(squared_distance(query, prototype), head.offset());
}

std::vector<double> mbce_class_probs(const MetaBceHead& head, std::span<const double> query, const Tensor& prototypes) {
    auto logits = closed_logits(query, prototypes);
    for (auto& l : logits) l = mbce_prob_known(-l, head.offset());
    return logits;
}

double prob_unknown(std::span<const double> class_probs) {
    if (class_probs.empty()) throw ShapeError("prob_unknown: no classes");
    return 1.0 - *std::max_element(class_probs.begin(), class_probs.end());
}

double mbce_prob_unknown(const MetaBceHead& head, std::span<const double> query, const Tensor& prototypes) {
    if (prototypes.rank() != 2 || prototypes.dim(0) == 0) throw ShapeError("mbce_prob_unknown: empty prototype list");
    return prob_unknown(mbce_class_probs(head, query, prototypes));
}

Tensor episode_targets(std::size_t n, std::size_t q) {
    Tensor y = Tensor::zeros({n * q, n});
    for (std::size_t i = 0; i < n * q; ++i) y[i * n + i / q] = 1.0;
    return y;
}

Var mbce_episode_loss(Tape& tape, Var support, Var queries, Var t, std::size_t n, std::size_t k, std::size_t q) {
    if (n == 0) throw ConfigError("mbce loss: episode has no classes");
    if (q == 0) throw ConfigError("mbce loss: empty query set");
    const auto& qs = tape.shape(queries);
    if (qs.size() != 2 || qs[0] != n * q) {
        throw ShapeError("mbce loss: queries " + shape_string(qs) + " are not [" + std::to_string(n * q) + ", D]");
    }
    if (tape.shape(t) != Shape{1}) throw ShapeError("mbce loss: t must be a scalar");
    Var protos = prototypes_on_tape(tape, support, n, k);
    Var logits = tape.neg(tape.add(tape.squared_distance(queries, protos), t));
    return tape.bce(logits, tape.constant(episode_targets(n, q)));
}

}  // namespace fsos
