#pragma once

#include <span>
#include <string>
#include <vector>

#include "fsos/evaluation.hpp"

namespace fsos {

struct ComparisonTable {
    std::vector<std::string> labels;  // one per report
    std::vector<std::string> metric_names;
    std::vector<std::vector<MetricSummary>> rows;

    // Fixed-width text; rate metrics as percentages, scores with three decimals.
    std::string to_text() const;
    // label,<metric>_mean,<metric>_ci,...
    std::string to_csv() const;
};

// Merges reports that share task, episode shape and metric set. A mismatch is
// reported with the names of the differing fields.
ComparisonTable merge_reports(std::span<const EvaluationReport> reports, std::vector<std::string> labels = {});

// "77.38 +- 0.42" for rate metrics, "0.620 +- 0.004" for scores.
std::string format_metric(const std::string& name, const MetricSummary& value);

}  // namespace fsos
