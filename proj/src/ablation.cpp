#include "fsos/ablation.hpp"

#include <memory>
#include <sstream>

#include "fsos/error.hpp"

namespace fsos {

std::string to_string(AblationGrid grid) {
    switch (grid) {
        case AblationGrid::gtheta: return "gtheta";
        case AblationGrid::kshot: return "kshot";
        case AblationGrid::nway: return "nway";
        case AblationGrid::mbce_variant: return "mbce_variant";
    }
    return "?";
}

AblationGrid parse_ablation_grid(const std::string& name) {
    for (auto g : {AblationGrid::gtheta, AblationGrid::kshot, AblationGrid::nway, AblationGrid::mbce_variant}) {
        if (to_string(g) == name) return g;
    }
    throw ConfigError("unknown ablation grid '" + name + "' (expected gtheta, kshot, nway or mbce_variant)");
}

void AblationConfig::validate() const {
    if (values.empty()) throw ConfigError("ablation: empty grid");
    for (auto v : values) {
        if (v == 0) throw ConfigError("ablation: grid values must be >= 1");
    }
    if (task != "openset" && task != "oneclass") throw ConfigError("ablation: task must be openset or oneclass, got '" + task + "'");
    if (grid == AblationGrid::nway && task == "oneclass") throw ConfigError("ablation: the nway grid needs task=openset");
    if ((grid == AblationGrid::kshot || grid == AblationGrid::nway) && heads.empty()) throw ConfigError("ablation: no heads listed");
    for (const auto& h : heads) {
        if (h != "mbce" && h != "mbce-c" && h != "ocml" && h != "threshold") {
            throw ConfigError("ablation: unknown head '" + h + "' (expected mbce, mbce-c, ocml or threshold)");
        }
    }
    if (ocml_method != Method::ocml_frozen && ocml_method != Method::ocml_joint) {
        throw ConfigError("ablation: ocml method must be ocml-frozen or ocml-joint");
    }
    head_schedule.validate();
    eval.shape.validate();
    if (eval.episodes == 0) throw ConfigError("ablation: eval episodes must be >= 1");
}

std::map<std::string, std::string> AblationResult::curves() const {
    std::map<std::string, std::string> out;
    for (std::size_t m = 0; m < metric_names.size(); ++m) {
        std::ostringstream os;
        os.precision(17);
        os << "series," << grid_axis << ",mean,ci\n";
        for (const auto& r : rows) os << r.series << ',' << r.grid_value << ',' << r.metrics[m].mean << ',' << r.metrics[m].ci << '\n';
        out[metric_names[m]] = os.str();
    }
    return out;
}

namespace {

// A trained head ready to evaluate: its gate and the backbone it runs on.
struct TrainedHead {
    std::string series;
    Model model;
    std::unique_ptr<OpenSetGate> gate;  // null for threshold (calibrated per grid point)
};

TrainedHead train_head(const std::string& head, const AblationConfig& config, const Dataset& dataset, const Model& base,
                       const TrainingOptions& options) {
    if (head == "threshold") return {head, base, nullptr};
    Method method = head == "mbce" ? Method::mbce : head == "mbce-c" ? Method::mbce_c : config.ocml_method;
    auto trained = run_meta_training(method, dataset, config.head_schedule, options, &base);
    TrainedHead out{head, std::move(trained.model), nullptr};
    if (out.model.mbce) out.gate = std::make_unique<MetaBceGate>(*out.model.mbce);
    else out.gate = std::make_unique<OcmlGate>(*out.model.ocml);
    return out;
}

EvaluationReport evaluate_point(const TrainedHead& head, const AblationConfig& config, const Dataset& dataset,
                                const EvaluationConfig& eval) {
    std::unique_ptr<OpenSetGate> threshold;
    const OpenSetGate* gate = head.gate.get();
    if (!gate) {
        threshold = std::make_unique<ThresholdGate>(
            calibrate_threshold(head.model.backbone, dataset, eval.shape, config.calibration_episodes, eval.seed));
        gate = threshold.get();
    }
    if (config.task == "oneclass") return evaluate_oneclass(*gate, head.model.backbone, dataset, eval);
    return evaluate_openset(ProtoNetClassifier{}, *gate, head.model.backbone, dataset, eval);
}

}  // namespace

AblationResult run_ablation(const AblationConfig& config, const Dataset& dataset, const Model* base,
                            const TrainingOptions& options) {
    config.validate();
    Model backbone_model = base ? *base : run_meta_training(Method::protonet, dataset, config.base_schedule, options).model;

    AblationResult result{config.grid, config.task, config.grid == AblationGrid::nway ? "n" : "k", {}, {}};

    std::vector<TrainedHead> heads;
    switch (config.grid) {
        case AblationGrid::gtheta:
            for (const auto& arch : TransferArchitecture::reference_menu(backbone_model.backbone.embed_dim())) {
                TrainingOptions o = options;
                o.ocml_arch = arch;
                auto h = train_head("ocml", config, dataset, backbone_model, o);
                h.series = arch.key();
                heads.push_back(std::move(h));
            }
            break;
        case AblationGrid::mbce_variant:
            heads.push_back(train_head("mbce", config, dataset, backbone_model, options));
            heads.push_back(train_head("mbce-c", config, dataset, backbone_model, options));
            heads[0].series = "Meta-BCE";
            heads[1].series = "Meta-BCE_C";
            break;
        case AblationGrid::kshot:
        case AblationGrid::nway:
            for (const auto& h : config.heads) heads.push_back(train_head(h, config, dataset, backbone_model, options));
            break;
    }

    for (const auto& head : heads) {
        for (auto v : config.values) {
            EvaluationConfig eval = config.eval;
            if (config.task == "oneclass") {
                eval.shape.n = 1;
                eval.shape.n_unknown = 1;
            }
            if (config.grid == AblationGrid::nway) {
                eval.shape.n = v;
                eval.shape.n_unknown = v;
            } else {
                eval.shape.k = v;
            }
            const auto report = evaluate_point(head, config, dataset, eval);
            if (result.metric_names.empty()) result.metric_names = report.metric_names;
            result.rows.push_back({head.series, v, report.summary});
        }
    }
    return result;
}

}  // namespace fsos
