#include "fsos/episodes.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "fsos/error.hpp"

namespace fsos {

void EpisodeConfig::validate() const {
    if (n == 0) throw ConfigError("episode: n must be >= 1");
    if (k == 0) throw ConfigError("episode: k must be >= 1");
    if (q == 0) throw ConfigError("episode: q must be >= 1");
}

std::int32_t Episode::relabel(std::int32_t dataset_class) const {
    for (std::size_t c = 0; c < known_classes.size(); ++c) {
        if (known_classes[c] == dataset_class) return static_cast<std::int32_t>(c);
    }
    return -1;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) { return splitmix64(splitmix64(seed) ^ index); }

namespace {

// First `count` entries of a seeded partial Fisher-Yates shuffle of `pool`.
template <class T>
std::vector<T> draw(std::vector<T> pool, std::size_t count, std::mt19937_64& rng) {
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(count);
    return pool;
}

}  // namespace

Episode sample_episode(const Dataset& dataset, SplitPart part, const EpisodeConfig& config, std::uint64_t seed) {
    config.validate();
    const auto& classes = dataset.split().part(part);
    const std::size_t need = config.n + config.n_unknown;
    if (classes.size() < need) {
        throw DataError("episode: split '" + to_string(part) + "' has " + std::to_string(classes.size()) +
                        " classes, need n + n_unknown = " + std::to_string(need));
    }

    std::mt19937_64 rng(seed);
    Episode ep;
    ep.config = config;
    const auto chosen = draw(classes, need, rng);
    ep.known_classes.assign(chosen.begin(), chosen.begin() + static_cast<std::ptrdiff_t>(config.n));
    ep.unknown_classes.assign(chosen.begin() + static_cast<std::ptrdiff_t>(config.n), chosen.end());

    auto take = [&](std::int32_t cls, std::size_t count) {
        const std::size_t have = dataset.examples_in(cls);
        if (have < count) {
            throw DataError("episode: class " + std::to_string(cls) + " has " + std::to_string(have) +
                            " examples, need " + std::to_string(count));
        }
        std::vector<std::size_t> idx(have);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        return draw(std::move(idx), count, rng);
    };

    ep.support.reserve(config.n * config.k);
    ep.query_known.reserve(config.n * config.q);
    for (auto cls : ep.known_classes) {
        const auto idx = take(cls, config.k + config.q);
        for (std::size_t i = 0; i < config.k; ++i) ep.support.emplace_back(cls, idx[i]);
        for (std::size_t i = config.k; i < idx.size(); ++i) ep.query_known.emplace_back(cls, idx[i]);
    }
    ep.query_unknown.reserve(config.n_unknown * config.q);
    for (auto cls : ep.unknown_classes) {
        for (auto i : take(cls, config.q)) ep.query_unknown.emplace_back(cls, i);
    }
    return ep;
}

EpisodeBatches episode_batches(const Dataset& dataset, const Episode& episode) {
    std::vector<ExampleRef> queries(episode.query_known);
    queries.insert(queries.end(), episode.query_unknown.begin(), episode.query_unknown.end());
    return {dataset.batch(episode.support), dataset.batch(queries)};
}

}  // namespace fsos
