#pragma once

#include <map>
#include <string>
#include <vector>

#include "fsos/checkpoint.hpp"
#include "fsos/evaluation.hpp"
#include "fsos/training.hpp"

namespace fsos {

enum class AblationGrid { gtheta, kshot, nway, mbce_variant };

std::string to_string(AblationGrid grid);
AblationGrid parse_ablation_grid(const std::string& name);

struct AblationConfig {
    AblationGrid grid = AblationGrid::kshot;
    std::string task = "openset";           // "openset" or "oneclass"
    std::vector<std::size_t> values;        // k for gtheta/kshot/mbce_variant, n for nway
    std::vector<std::string> heads{"mbce", "ocml", "threshold"};  // kshot / nway
    Method ocml_method = Method::ocml_frozen;
    Schedule base_schedule;                 // closed-set backbone, when no base is supplied
    Schedule head_schedule;                 // every head
    EvaluationConfig eval;                  // shape.k / shape.n replaced per grid point
    std::size_t calibration_episodes = 100;

    void validate() const;
};

struct AblationRow {
    std::string series;       // architecture, head or variant
    std::size_t grid_value;   // k or n
    std::vector<MetricSummary> metrics;
};

struct AblationResult {
    AblationGrid grid;
    std::string task;
    std::string grid_axis;  // "k" or "n"
    std::vector<std::string> metric_names;
    std::vector<AblationRow> rows;

    // One CSV per metric: series,<axis>,mean,ci.
    std::map<std::string, std::string> curves() const;
};

AblationResult run_ablation(const AblationConfig& config, const Dataset& dataset, const Model* base = nullptr,
                            const TrainingOptions& options = {});

}  // namespace fsos
