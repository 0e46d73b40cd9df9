#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "fsos/data.hpp"
#include "fsos/tensor.hpp"

namespace fsos {

struct EpisodeConfig {
    std::size_t n = 5;          // known classes
    std::size_t k = 5;          // shots per known class
    std::size_t q = 15;         // queries per class
    std::size_t n_unknown = 5;  // unknown classes

    void validate() const;
    friend bool operator==(const EpisodeConfig&, const EpisodeConfig&) = default;
};

using ExampleRef = std::pair<std::int32_t, std::size_t>;  // (dataset class id, example index)

struct Episode {
    EpisodeConfig config;
    std::vector<std::int32_t> known_classes;    // episode label c is known_classes[c]
    std::vector<std::int32_t> unknown_classes;
    std::vector<ExampleRef> support;            // class-major, n*k
    std::vector<ExampleRef> query_known;        // class-major, n*q
    std::vector<ExampleRef> query_unknown;      // class-major, n_unknown*q

    // Episode label of a dataset class, or -1 if the class is not a known class.
    std::int32_t relabel(std::int32_t dataset_class) const;
};

// Draws classes without replacement from the split part, then examples
// without replacement within each class. Deterministic in `seed`.
Episode sample_episode(const Dataset& dataset, SplitPart part, const EpisodeConfig& config, std::uint64_t seed);

// Stateless 64-bit mixer used to derive per-episode seeds.
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

struct EpisodeBatches {
    Tensor support;  // [n*k, ...input]
    Tensor queries;  // [(n + n_unknown)*q, ...input], known queries first
};
EpisodeBatches episode_batches(const Dataset& dataset, const Episode& episode);

}  // namespace fsos
