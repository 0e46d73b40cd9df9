#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fsos/backbone.hpp"
#include "fsos/data.hpp"
#include "fsos/episodes.hpp"
#include "fsos/metabce.hpp"
#include "fsos/metrics.hpp"
#include "fsos/ocml.hpp"
#include "fsos/protonet.hpp"

namespace fsos {

// Inputs of one evaluation episode with the main-branch embeddings already
// computed (the closed-set classifier and most gates share them).
struct EpisodeView {
    const Episode& episode;
    const Backbone& backbone;
    const EpisodeBatches& batches;
    Tensor support_main;  // [n*k, D]
    Tensor query_main;    // [(n + n_unknown)*q, D]
};

struct GateDecision {
    std::vector<double> score;  // known-ness, higher = more likely known
    std::vector<bool> unknown;  // gated as unknown
};

// Known/unknown decision placed in front of a closed-set classifier.
class OpenSetGate {
public:
    virtual ~OpenSetGate() = default;
    virtual std::string name() const = 0;
    virtual GateDecision decide(const EpisodeView& view) const = 0;
};

// p_c = sigma(-(d + t)) in the head's feature space; unknown iff 1 - max_c p_c > 0.5.
class MetaBceGate final : public OpenSetGate {
public:
    explicit MetaBceGate(MetaBceHead head) : head_(std::move(head)) {}
    std::string name() const override { return head_.variant == MbceVariant::branch ? "mbce" : "mbce-c"; }
    GateDecision decide(const EpisodeView& view) const override;

private:
    MetaBceHead head_;
};

// p_c = sigma(g(prototype_c) . f(x)); unknown iff 1 - max_c p_c > 0.5.
class OcmlGate final : public OpenSetGate {
public:
    explicit OcmlGate(TransferModule g) : g_(std::move(g)) {}
    std::string name() const override { return "ocml"; }
    GateDecision decide(const EpisodeView& view) const override;

private:
    TransferModule g_;
};

// Known iff min squared distance to a prototype <= tau; ranks by -distance.
class ThresholdGate final : public OpenSetGate {
public:
    explicit ThresholdGate(ThresholdBaseline baseline) : baseline_(baseline) {}
    std::string name() const override { return "threshold"; }
    GateDecision decide(const EpisodeView& view) const override;
    const ThresholdBaseline& baseline() const noexcept { return baseline_; }

private:
    ThresholdBaseline baseline_;
};

struct EvaluationConfig {
    EpisodeConfig shape{5, 5, 15, 5};
    std::size_t episodes = 10000;
    std::uint64_t seed = 1;
    std::size_t workers = 1;  // does not affect results
    SplitPart split = SplitPart::test;
    bool keep_records = false;

    void validate() const;
};

struct ConfidenceInterval {
    double mean = 0.0;
    double half_width = 0.0;
    bool degenerate = false;  // fewer than two samples
};

// Mean and 1.96 * unbiased std / sqrt(M).
ConfidenceInterval confidence_interval(std::span<const double> samples);

struct MetricSummary {
    std::string name;
    double mean = 0.0;
    double ci = 0.0;
};

struct EvaluationReport {
    std::string task;        // "oneclass" or "openset"
    std::string gate;        // "mbce", "mbce-c", "ocml", "threshold"
    std::string closed_set;  // "protonet" for openset, empty for oneclass
    EvaluationConfig config;
    std::map<std::string, std::string> echo;  // extra provenance (paths, checksums, tau)
    std::vector<std::string> metric_names;
    std::vector<std::vector<double>> per_episode;  // [episode][metric]
    std::vector<MetricSummary> summary;
    bool degenerate_ci = false;
    std::vector<std::vector<PredictionRecord>> records;  // when config.keep_records

    const MetricSummary& metric(const std::string& name) const;
    std::string to_json() const;
    // episode_id followed by one column per metric.
    std::string to_csv() const;
};

EvaluationReport report_from_json(const std::string& text);

inline constexpr const char* kToolVersion = "fsos 1.0.0";

// One-class protocol: n = 1 known class, q known and n_unknown*q unknown
// queries; metrics accuracy, f1, auroc.
EvaluationReport evaluate_oneclass(const OpenSetGate& gate, const Backbone& backbone, const Dataset& dataset,
                                   const EvaluationConfig& config);

// Open-set protocol; metrics accuracy (closed-set, ungated), aks, aus, na,
// f1_open, auroc, aks_junior.
EvaluationReport evaluate_openset(const ClosedSetClassifier& closed, const OpenSetGate& gate, const Backbone& backbone,
                                  const Dataset& dataset, const EvaluationConfig& config);

// Threshold baseline calibrated on pooled min-distance scores of
// validation-split episodes of the given shape.
ThresholdBaseline calibrate_threshold(const Backbone& backbone, const Dataset& dataset, const EpisodeConfig& shape,
                                      std::size_t episodes, std::uint64_t seed);

// Closed-set logits of every episode of a fixed suite (test split), in order.
std::vector<Tensor> closed_set_logits_suite(const ClosedSetClassifier& closed, const Backbone& backbone, const Dataset& dataset,
                                            const EpisodeConfig& shape, std::size_t episodes, std::uint64_t seed);

}  // namespace fsos
