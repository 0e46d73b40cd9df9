#pragma once

#include <span>
#include <string>
#include <vector>

#include "fsos/backbone.hpp"
#include "fsos/tape.hpp"
#include "fsos/tensor.hpp"

namespace fsos {

enum class MbceVariant {
    branch,  // separate last block f_phi'
    mainC,   // projection h_chi on top of the main embedding
};

std::string to_string(MbceVariant variant);
MbceVariant parse_mbce_variant(const std::string& name);

struct MetaBceHead {
    MbceVariant variant = MbceVariant::branch;
    Tensor t = Tensor::scalar(0.0);

    EmbeddingRoute route() const noexcept {
        return variant == MbceVariant::branch ? EmbeddingRoute::branch : EmbeddingRoute::projected;
    }
    // Backbone groups this head trains.
    TrainableGroups groups() const noexcept;
    double offset() const { return t.item(); }
};

// sigma(-(d + t))
double mbce_prob_known(double distance, double t);
double mbce_prob_known(const MetaBceHead& head, std::span<const double> query, std::span<const double> prototype);

// Per-class known probabilities of one query against [n, D] prototypes
// (both in the head's feature space).
std::vector<double> mbce_class_probs(const MetaBceHead& head, std::span<const double> query, const Tensor& prototypes);

// 1 - max_c p_c
double prob_unknown(std::span<const double> class_probs);
// Unknown iff p_U > 0.5; p_U = 0.5 stays known.
inline bool decide_unknown(double p_unknown) noexcept { return p_unknown > 0.5; }

double mbce_prob_unknown(const MetaBceHead& head, std::span<const double> query, const Tensor& prototypes);

// Mean BCE over every (query, class) pair with target 1 iff the query belongs
// to the class. `support` is class-major [n*k, D], `queries` class-major
// [n*q, D], `t` the scalar offset.
Var mbce_episode_loss(Tape& tape, Var support, Var queries, Var t, std::size_t n, std::size_t k, std::size_t q);

// One-hot [n*q, n] targets for class-major queries.
Tensor episode_targets(std::size_t n, std::size_t q);

}  // namespace fsos
