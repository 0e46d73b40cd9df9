#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsos/tape.hpp"
#include "fsos/tensor.hpp"

namespace fsos {

struct Prototype {
    std::int32_t class_id = 0;
    std::vector<double> vector;
    std::size_t k = 0;
};

// One prototype per group; each group is a [k, D] tensor of embeddings of
// one class. Class ids are assigned in group order unless given.
std::vector<Prototype> prototypes(std::span<const Tensor> groups, std::span<const std::int32_t> class_ids = {});

// Prototypes of a class-major [n*k, D] support block, as an [n, D] matrix.
Tensor prototype_matrix(const Tensor& support, std::size_t n, std::size_t k);
Tensor prototype_matrix(std::span<const Prototype> protos);

// Same computation on a tape; `support` is [n*k, D], result [n, D].
Var prototypes_on_tape(Tape& tape, Var support, std::size_t n, std::size_t k);

double squared_distance(std::span<const double> a, std::span<const double> b);

// logit_c = -|query - prototype_c|^2
std::vector<double> closed_logits(std::span<const double> query, const Tensor& prototypes);
// Row-wise logits for a [m, D] query block, [m, n].
Tensor closed_logits(const Tensor& queries, const Tensor& prototypes);

// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

// Mean softmax cross-entropy of the closed-set logits. `queries` is
// class-major [n*q, D]. Requires n >= 2.
Var protonet_episode_loss(Tape& tape, Var support, Var queries, std::size_t n, std::size_t k, std::size_t q);

// min_c |query - prototype_c|^2; larger means more likely unknown.
double threshold_score(std::span<const double> query, const Tensor& prototypes);

struct ThresholdBaseline {
    double tau = 0.0;
    double balanced_accuracy = 0.0;

    bool accepts(double score) const noexcept { return score <= tau; }
};

// Picks tau among the midpoints of the sorted unique pooled scores to
// maximize the mean of the known-acceptance and unknown-rejection rates.
// The first (lowest) maximizer wins.
ThresholdBaseline calibrate_threshold(std::span<const double> known_scores, std::span<const double> unknown_scores);

// Closed-set method plugged under the open-set gate. ProtoNet is the
// built-in one; anything producing [queries, n] logits from the episode's
// main-branch embeddings can stand in.
class ClosedSetClassifier {
public:
    virtual ~ClosedSetClassifier() = default;
    virtual std::string name() const = 0;
    // support: class-major [n*k, D]; queries: [m, D]. Returns [m, n].
    virtual Tensor logits(const Tensor& support, const Tensor& queries, std::size_t n, std::size_t k) const = 0;
};

class ProtoNetClassifier final : public ClosedSetClassifier {
public:
    std::string name() const override { return "protonet"; }
    Tensor logits(const Tensor& support, const Tensor& queries, std::size_t n, std::size_t k) const override;
};

}  // namespace fsos
