#include "fsos/report.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "fsos/error.hpp"

namespace fsos {

namespace {

bool is_rate(const std::string& name) {
    return name == "accuracy" || name == "aks" || name == "aus" || name == "na" || name == "aks_junior";
}

std::string header_of(const std::string& name) {
    if (name == "accuracy") return "Accuracy (%)";
    if (name == "aks") return "AKS (%)";
    if (name == "aus") return "AUS (%)";
    if (name == "na") return "NA (%)";
    if (name == "aks_junior") return "AKS-J (%)";
    if (name == "f1_open") return "F1-open";
    if (name == "f1") return "F1";
    if (name == "auroc") return "AUROC";
    return name;
}

}  // namespace

std::string format_metric(const std::string& name, const MetricSummary& value) {
    char buf[64];
    if (is_rate(name)) std::snprintf(buf, sizeof buf, "%.2f +- %.2f", 100.0 * value.mean, 100.0 * value.ci);
    else std::snprintf(buf, sizeof buf, "%.3f +- %.3f", value.mean, value.ci);
    return buf;
}

ComparisonTable merge_reports(std::span<const EvaluationReport> reports, std::vector<std::string> labels) {
    if (reports.empty()) throw ConfigError("report: no reports to merge");
    if (!labels.empty() && labels.size() != reports.size()) throw ConfigError("report: label count does not match report count");
    const auto& first = reports[0];
    for (std::size_t i = 1; i < reports.size(); ++i) {
        const auto& r = reports[i];
        std::vector<std::string> diff;
        if (r.task != first.task) diff.push_back("task");
        if (r.config.shape.n != first.config.shape.n) diff.push_back("n");
        if (r.config.shape.k != first.config.shape.k) diff.push_back("k");
        if (r.config.shape.q != first.config.shape.q) diff.push_back("q");
        if (r.config.shape.n_unknown != first.config.shape.n_unknown) diff.push_back("n_unknown");
        if (r.metric_names != first.metric_names) diff.push_back("metrics");
        if (!diff.empty()) {
            std::string fields;
            for (const auto& d : diff) fields += (fields.empty() ? "" : ",") + d;
            throw ConfigError("report: report " + std::to_string(i) + " differs from report 0 in fields: " + fields);
        }
    }
    ComparisonTable t;
    t.metric_names = first.metric_names;
    for (std::size_t i = 0; i < reports.size(); ++i) {
        const auto& r = reports[i];
        t.labels.push_back(labels.empty() ? (r.closed_set.empty() ? r.gate : r.closed_set + "+" + r.gate) : labels[i]);
        t.rows.push_back(r.summary);
    }
    return t;
}

std::string ComparisonTable::to_text() const {
    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> head{"Method"};
    for (const auto& m : metric_names) head.push_back(header_of(m));
    cells.push_back(head);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::vector<std::string> line{labels[i]};
        for (std::size_t j = 0; j < metric_names.size(); ++j) line.push_back(format_metric(metric_names[j], rows[i][j]));
        cells.push_back(line);
    }
    std::vector<std::size_t> width(head.size(), 0);
    for (const auto& line : cells) {
        for (std::size_t j = 0; j < line.size(); ++j) width[j] = std::max(width[j], line[j].size());
    }
    std::ostringstream os;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        for (std::size_t j = 0; j < cells[i].size(); ++j) {
            os << (j ? "  " : "") << cells[i][j];
            if (j + 1 < cells[i].size()) os << std::string(width[j] - cells[i][j].size(), ' ');
        }
        os << '\n';
        if (i == 0) {
            std::size_t total = 0;
            for (auto w : width) total += w;
            os << std::string(total + 2 * (width.size() - 1), '-') << '\n';
        }
    }
    return os.str();
}

std::string ComparisonTable::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "label";
    for (const auto& m : metric_names) os << ',' << m << "_mean," << m << "_ci";
    os << '\n';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        os << labels[i];
        for (const auto& v : rows[i]) os << ',' << v.mean << ',' << v.ci;
        os << '\n';
    }
    return os.str();
}

}  // namespace fsos
