#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "fsos/checkpoint.hpp"
#include "fsos/data.hpp"
#include "fsos/episodes.hpp"
#include "fsos/optimizer.hpp"

namespace fsos {

struct Schedule {
    std::size_t episodes = 2000;
    OptimizerKind optimizer = OptimizerKind::adam;
    double learning_rate = 1e-3;
    // Learning rate of the Meta-BCE offset t; unset means learning_rate.
    std::optional<double> offset_learning_rate;
    EpisodeConfig shape{5, 5, 15, 0};
    std::size_t validate_every = 100;  // 0 keeps the final parameters
    std::size_t validation_episodes = 40;
    std::uint64_t seed = 1;

    void validate() const;
};

struct TrainingOptions {
    // Architecture for methods that build a fresh backbone; an empty block
    // list means "derive the default from the dataset's input shape".
    std::optional<BackboneSpec> backbone;
    std::optional<TransferArchitecture> ocml_arch;  // default: one layer
    // OCML joint mode adds the closed-set cross-entropy to its loss so the
    // shared backbone keeps serving the closed-set classifier.
    bool joint_closed_set_loss = true;
};

struct ValidationPoint {
    std::size_t episode = 0;  // number of training episodes seen
    double loss = 0.0;
};

struct TrainingResult {
    Model model;
    std::vector<double> loss_curve;  // one entry per training episode
    std::vector<ValidationPoint> validation;
    std::size_t best_episode = 0;
};

// Tuned defaults per method: Adam at 1e-3 for the closed-set backbone, 1e-4
// for the heads (so they stay close to their initialization and transfer to
// novel classes), with the Meta-BCE offset t at 0.1.
Schedule default_schedule(Method method);

// Default backbone for a dataset: dense trunk for vector inputs, conv blocks
// for image inputs.
BackboneSpec default_backbone_spec(const InputShape& input);

// Episodic meta-training on the train split with periodic validation on the
// val split; returns the parameters with the lowest mean validation loss.
// Augmentation methods (mbce, mbce-c, ocml-frozen) require `base` and never
// modify its trunk or head.
TrainingResult run_meta_training(Method method, const Dataset& dataset, const Schedule& schedule,
                                 const TrainingOptions& options = {}, const Model* base = nullptr);

}  // namespace fsos
