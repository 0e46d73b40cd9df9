#pragma once

#include "fsos/data.hpp"
#include "fsos/training.hpp"

namespace fixture {

// 30 well-separated classes split 20/4/6, shared by the training tests.
inline const fsos::Dataset& benchmark() {
    static const fsos::Dataset d = [] {
        fsos::SyntheticSpec s;
        s.num_classes = 30;
        s.examples_per_class = 30;
        s.dim = 16;
        s.input = fsos::InputShape::vector(16);
        s.seed = 3;
        return fsos::generate_synthetic(s);
    }();
    return d;
}

inline fsos::Schedule quick_schedule(fsos::Method method, std::size_t episodes) {
    fsos::Schedule s = fsos::default_schedule(method);
    s.episodes = episodes;
    s.shape = {3, 3, 5, 0};
    s.validate_every = 50;
    s.validation_episodes = 5;
    return s;
}

inline const fsos::Model& protonet() {
    static const fsos::Model m =
        fsos::run_meta_training(fsos::Method::protonet, benchmark(), quick_schedule(fsos::Method::protonet, 300)).model;
    return m;
}

}  // namespace fixture
