#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fsos {

// Class label within an episode, or the distinguished UNKNOWN marker.
class Label {
public:
    constexpr Label() = default;
    constexpr explicit Label(std::int32_t cls) : value_(cls) {}
    static constexpr Label unknown() { return Label(); }

    constexpr bool is_unknown() const noexcept { return value_ < 0; }
    constexpr bool is_known() const noexcept { return value_ >= 0; }
    constexpr std::int32_t id() const noexcept { return value_; }

    friend constexpr auto operator<=>(Label, Label) = default;

    std::string to_string() const;
    static Label parse(const std::string& text);

private:
    std::int32_t value_ = -1;
};

struct PredictionRecord {
    Label truth;
    Label predicted;
    double score = 0.0;  // known-ness: higher means more likely a known class
};

// Fraction of records whose predicted label equals the true label.
double accuracy(std::span<const PredictionRecord> records);

// One-class F1 with "known" as the positive class. 0 when TP = 0.
double binary_f1(std::span<const PredictionRecord> records);

// Probability that a random known-truth record outscores a random
// unknown-truth record, ties counted as one half (Mann-Whitney U / n1 n0).
double auroc(std::span<const PredictionRecord> records);

// Accuracy on known samples: known-truth records whose final label matches;
// a known sample rejected as UNKNOWN counts as wrong.
double aks(std::span<const PredictionRecord> records);

// One-vs-rest AKS over the known classes present in the records,
// sum(TP + TN) / sum(TP + TN + FP + FN), restricted to known-truth records.
// Reported for comparison only; TN dominates it as the class count grows.
double aks_junior(std::span<const PredictionRecord> records);

// Accuracy on unknown samples: TU / (TU + FU).
double aus(std::span<const PredictionRecord> records);

inline constexpr double kDefaultLambda = 0.5;

double normalized_accuracy(double aks_value, double aus_value, double lambda = kDefaultLambda);

// Micro-averaged open-set F1 over the known classes. A record labeled c with
// a different truth (including UNKNOWN truth) is a false positive of c; a
// known-truth record of class c labeled anything else (including UNKNOWN) is
// a false negative of c. 0 when sum(TP) = 0.
double f1_open(std::span<const PredictionRecord> records);

struct MicroCounts {
    std::size_t tp = 0, fp = 0, fn = 0;
};
MicroCounts open_set_counts(std::span<const PredictionRecord> records);

// CSV with header `true_label,predicted_label,score`; UNKNOWN is written as
// "unknown".
void write_records_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records);
std::vector<PredictionRecord> read_records_csv(const std::filesystem::path& path);

}  // namespace fsos
