#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsos/tape.hpp"
#include "fsos/tensor.hpp"

namespace fsos {

// Layer widths of g_theta, input first: {D, D} is one dense layer, {D, m, D}
// two layers with a ReLU in between. Only non-final layers carry a bias.
struct TransferArchitecture {
    std::vector<std::size_t> dims;

    static TransferArchitecture one_layer(std::size_t embed_dim) { return {{embed_dim, embed_dim}}; }
    static TransferArchitecture two_layers(std::size_t embed_dim, std::size_t middle) {
        return {{embed_dim, middle, embed_dim}};
    }
    // The four reference variants: one layer, then two layers with the middle
    // width scaled from {100, 500, 1000} out of a 1600-wide embedding.
    static std::vector<TransferArchitecture> reference_menu(std::size_t embed_dim);
    static std::size_t scaled_middle(std::size_t embed_dim, std::size_t reference_middle);

    std::size_t layers() const noexcept { return dims.empty() ? 0 : dims.size() - 1; }
    std::string describe() const;  // "1 layer" / "2 layers, middle dim 20"
    std::string key() const;       // "64-20-64"
    static TransferArchitecture parse(const std::string& key);
    void validate(std::size_t embed_dim) const;

    friend bool operator==(const TransferArchitecture&, const TransferArchitecture&) = default;
};

struct TransferModule {
    TransferArchitecture arch;
    std::vector<Tensor> weights;  // layer i: [dims[i], dims[i+1]]
    std::vector<Tensor> biases;   // layers except the last: [dims[i+1]]

    std::vector<Tensor*> parameters();
};

// A single square layer starts as the identity (w_c = prototype); deeper
// variants use uniform +-1/sqrt(fan_in) from a seeded generator.
TransferModule init_transfer(const TransferArchitecture& arch, std::uint64_t seed);

// Weight generation for [n, D] prototypes on a tape. With `trainable` the
// module's tensors are registered as parameters.
Var generate_weights(Tape& tape, TransferModule& g, Var prototypes, bool trainable);
Var generate_weights(Tape& tape, const TransferModule& g, Var prototypes);

std::vector<double> generate_weight(const TransferModule& g, std::span<const double> prototype);
Tensor generate_weights(const TransferModule& g, const Tensor& prototypes);

// sigma(w . f)
double ocml_prob_known(std::span<const double> weight, std::span<const double> query);
// Per-class probabilities from [n, D] generated weights.
std::vector<double> ocml_class_probs(const Tensor& weights, std::span<const double> query);
double ocml_prob_unknown(const TransferModule& g, const Tensor& prototypes, std::span<const double> query);

// Mean BCE of sigma(w_c . f(x_i)) over every (query, class) pair. `weights`
// is [n, D] (generated from the support prototypes), `queries` class-major
// [n*q, D] main-branch embeddings.
Var ocml_episode_loss(Tape& tape, Var weights, Var queries, std::size_t n, std::size_t q);

}  // namespace fsos
