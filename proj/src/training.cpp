#include "fsos/training.hpp"

#include <cmath>
#include <limits>

#include "fsos/error.hpp"
#include "fsos/protonet.hpp"

namespace fsos {

void Schedule::validate() const {
    if (episodes == 0) throw ConfigError("schedule: episodes must be >= 1");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("schedule: learning rate must be finite and >= 0");
    shape.validate();
    if (validate_every > 0 && validation_episodes == 0) throw ConfigError("schedule: validation needs at least one episode");
    if (offset_learning_rate && (!(*offset_learning_rate >= 0.0) || !std::isfinite(*offset_learning_rate))) {
        throw ConfigError("schedule: offset learning rate must be finite and >= 0");
    }
}

Schedule default_schedule(Method method) {
    Schedule s;
    if (method == Method::protonet) return s;
    s.learning_rate = 1e-4;
    if (method == Method::mbce || method == Method::mbce_c) s.offset_learning_rate = 0.1;
    return s;
}

BackboneSpec default_backbone_spec(const InputShape& input) {
    if (input.kind == InputShape::Kind::vector) return BackboneSpec::desk_vector(input.dims[0]);
    return BackboneSpec::desk_image(input.dims[0], input.dims[1], input.dims[2]);
}

namespace {

constexpr std::uint64_t kValidationSalt = 0x76616c6964617465ULL;

// Episode inputs as one batch: support first, then known queries.
Tensor training_batch(const Dataset& dataset, const Episode& ep) {
    std::vector<ExampleRef> refs(ep.support);
    refs.insert(refs.end(), ep.query_known.begin(), ep.query_known.end());
    return dataset.batch(refs);
}

class Objective {
public:
    Objective(Method method, Model& model, bool joint_closed_set_loss)
        : method_(method), model_(model), joint_ce_(joint_closed_set_loss) {}

    std::vector<Tensor*> parameters() {
        auto& bb = model_.backbone;
        switch (method_) {
            case Method::protonet: return bb.parameters(TrainableGroups::main());
            case Method::mbce:
            case Method::mbce_c: {
                auto p = bb.parameters(model_.mbce->groups());
                p.push_back(&model_.mbce->t);
                return p;
            }
            case Method::ocml_frozen: return model_.ocml->parameters();
            case Method::ocml_joint: {
                auto p = bb.parameters(TrainableGroups::main());
                for (auto* t : model_.ocml->parameters()) p.push_back(t);
                return p;
            }
        }
        return {};
    }

    Var loss(Tape& tape, const Tensor& batch, const EpisodeConfig& shape, bool train) {
        const std::size_t n = shape.n, k = shape.k, q = shape.q;
        auto& bb = model_.backbone;
        auto split = [&](Var emb) { return std::pair{tape.slice_rows(emb, 0, n * k), tape.slice_rows(emb, n * k, n * q)}; };
        auto reg = [&](Tensor& t) {
            if (!train) return tape.constant(t);
            t.set_requires_grad(true);
            return tape.param(t);
        };
        const Var x = tape.constant(batch);

        switch (method_) {
            case Method::protonet: {
                auto [s, qv] = split(bb.forward(tape, x, EmbeddingRoute::main, train ? TrainableGroups::main() : TrainableGroups::none()));
                return protonet_episode_loss(tape, s, qv, n, k, q);
            }
            case Method::mbce:
            case Method::mbce_c: {
                auto& head = *model_.mbce;
                auto [s, qv] = split(bb.forward(tape, x, head.route(), train ? head.groups() : TrainableGroups::none()));
                return mbce_episode_loss(tape, s, qv, reg(head.t), n, k, q);
            }
            case Method::ocml_frozen:
            case Method::ocml_joint: {
                const bool joint = method_ == Method::ocml_joint;
                auto groups = joint && train ? TrainableGroups::main() : TrainableGroups::none();
                auto [s, qv] = split(bb.forward(tape, x, EmbeddingRoute::main, groups));
                Var w = generate_weights(tape, *model_.ocml, prototypes_on_tape(tape, s, n, k), train);
                Var l = ocml_episode_loss(tape, w, qv, n, q);
                if (joint && joint_ce_ && n >= 2) l = tape.add(l, protonet_episode_loss(tape, s, qv, n, k, q));
                return l;
            }
        }
        throw ConfigError("training: unhandled method");
    }

private:
    Method method_;
    Model& model_;
    bool joint_ce_;
};

Model initial_model(Method method, const Dataset& dataset, const Schedule& schedule, const TrainingOptions& options,
                    const Model* base) {
    if (needs_base_backbone(method) && base == nullptr) {
        throw ConfigError("training: method " + to_string(method) + " augments an existing backbone; supply a base checkpoint");
    }
    const BackboneSpec spec = options.backbone ? *options.backbone : default_backbone_spec(dataset.input());
    Backbone backbone = base ? base->backbone : init_backbone(spec, schedule.seed);
    if (backbone.spec().input != dataset.input()) {
        throw ConfigError("training: backbone input " + backbone.spec().input.describe() + " does not match dataset input " +
                          dataset.input().describe());
    }
    Model model{method, std::move(backbone), std::nullopt, std::nullopt};
    auto& params = model.backbone.params();
    switch (method) {
        case Method::protonet: break;
        case Method::mbce:
            // f_phi' starts as the trained closed-set head.
            params.branch = params.head;
            model.mbce = MetaBceHead{MbceVariant::branch, Tensor::scalar(0.0)};
            break;
        case Method::mbce_c:
            params.projection.reset();
            model.backbone.ensure_projection();
            model.mbce = MetaBceHead{MbceVariant::mainC, Tensor::scalar(0.0)};
            break;
        case Method::ocml_frozen:
        case Method::ocml_joint: {
            const auto arch = options.ocml_arch ? *options.ocml_arch : TransferArchitecture::one_layer(model.backbone.embed_dim());
            arch.validate(model.backbone.embed_dim());
            model.ocml = init_transfer(arch, splitmix64(schedule.seed ^ 0x6f636d6cULL));
            break;
        }
    }
    return model;
}

}  // namespace

TrainingResult run_meta_training(Method method, const Dataset& dataset, const Schedule& schedule,
                                 const TrainingOptions& options, const Model* base) {
    schedule.validate();
    if (method == Method::protonet && schedule.shape.n < 2) throw ConfigError("training: protonet needs n >= 2");

    EpisodeConfig shape = schedule.shape;
    shape.n_unknown = 0;

    TrainingResult result{initial_model(method, dataset, schedule, options, base), {}, {}, 0};
    Model& model = result.model;
    Objective objective(method, model, options.joint_closed_set_loss);
    Optimizer optimizer(schedule.optimizer, schedule.learning_rate);
    auto params = objective.parameters();
    std::vector<Tensor*> offset_params;
    if (model.mbce) {
        params.pop_back();
        offset_params.push_back(&model.mbce->t);
    }
    Optimizer offset_optimizer(schedule.optimizer, schedule.offset_learning_rate.value_or(schedule.learning_rate));

    std::vector<Tensor> val_batches;
    if (schedule.validate_every > 0) {
        for (std::size_t j = 0; j < schedule.validation_episodes; ++j) {
            const auto ep = sample_episode(dataset, SplitPart::val, shape, derive_seed(schedule.seed ^ kValidationSalt, j));
            val_batches.push_back(training_batch(dataset, ep));
        }
    }
    auto validation_loss = [&] {
        double total = 0.0;
        for (const auto& b : val_batches) {
            Tape tape;
            total += tape.item(objective.loss(tape, b, shape, false));
        }
        return total / static_cast<double>(val_batches.size());
    };

    std::optional<Model> best;
    double best_loss = std::numeric_limits<double>::infinity();
    result.loss_curve.reserve(schedule.episodes);
    for (std::size_t i = 0; i < schedule.episodes; ++i) {
        const auto ep = sample_episode(dataset, SplitPart::train, shape, derive_seed(schedule.seed, i));
        Tape tape;
        Var loss = objective.loss(tape, training_batch(dataset, ep), shape, true);
        const double value = tape.item(loss);
        if (!std::isfinite(value)) throw AutodiffError("training: loss became non-finite at episode " + std::to_string(i));
        tape.backward(loss);
        optimizer.step(params);
        if (!offset_params.empty()) offset_optimizer.step(offset_params);
        result.loss_curve.push_back(value);

        const bool last = i + 1 == schedule.episodes;
        if (schedule.validate_every > 0 && ((i + 1) % schedule.validate_every == 0 || last)) {
            const double v = validation_loss();
            result.validation.push_back({i + 1, v});
            if (v < best_loss) {
                best_loss = v;
                best = model;
                result.best_episode = i + 1;
            }
        }
    }
    if (best) {
        result.model = std::move(*best);
    } else {
        result.best_episode = schedule.episodes;
    }
    for (auto* p : Objective(method, result.model, options.joint_closed_set_loss).parameters()) {
        p->set_requires_grad(false);
        p->clear_grad();
    }
    return result;
}

}  // namespace fsos
