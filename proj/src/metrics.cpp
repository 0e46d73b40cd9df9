#include "fsos/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fsos/error.hpp"

namespace fsos {

std::string Label::to_string() const { return is_unknown() ? "unknown" : std::to_string(value_); }

Label Label::parse(const std::string& text) {
    if (text == "unknown") return Label::unknown();
    std::int32_t v = -1;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || v < 0) {
        throw DataError("label: cannot parse '" + text + "'");
    }
    return Label(v);
}

namespace {

double safe_ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

double accuracy(std::span<const PredictionRecord> records) {
    if (records.empty()) throw DataError("accuracy: no records");
    std::size_t correct = 0;
    for (const auto& r : records) correct += r.predicted == r.truth;
    return safe_ratio(correct, records.size());
}

double binary_f1(std::span<const PredictionRecord> records) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (const auto& r : records) {
        if (r.truth.is_known() && r.predicted.is_known()) ++tp;
        else if (r.truth.is_unknown() && r.predicted.is_known()) ++fp;
        else if (r.truth.is_known() && r.predicted.is_unknown()) ++fn;
    }
    if (tp == 0) return 0.0;
    const double p = safe_ratio(tp, tp + fp);
    const double rc = safe_ratio(tp, tp + fn);
    return 2.0 * p * rc / (p + rc);
}

double auroc(std::span<const PredictionRecord> records) {
    std::vector<std::pair<double, bool>> scored;
    scored.reserve(records.size());
    std::size_t n_known = 0;
    for (const auto& r : records) {
        if (std::isnan(r.score)) throw DataError("auroc: NaN score");
        scored.emplace_back(r.score, r.truth.is_known());
        n_known += r.truth.is_known();
    }
    const std::size_t n_unknown = records.size() - n_known;
    if (n_known == 0 || n_unknown == 0) throw DataError("auroc: needs both known and unknown records");

    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    // Sum of 1-based mid-ranks of known records, kept doubled to stay integral.
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t i = 0; i < scored.size();) {
        std::size_t j = i;
        while (j < scored.size() && scored[j].first == scored[i].first) ++j;
        const std::uint64_t twice_mid = (i + 1) + j;  // 2 * average of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) {
            if (scored[k].second) twice_rank_sum += twice_mid;
        }
        i = j;
    }
    const std::uint64_t twice_u = twice_rank_sum - static_cast<std::uint64_t>(n_known) * (n_known + 1);
    return static_cast<double>(twice_u) / (2.0 * static_cast<double>(n_known) * static_cast<double>(n_unknown));
}

double aks(std::span<const PredictionRecord> records) {
    std::size_t total = 0, correct = 0;
    for (const auto& r : records) {
        if (r.truth.is_unknown()) continue;
        ++total;
        correct += r.predicted == r.truth;
    }
    if (total == 0) throw DataError("aks: no known-truth records");
    return safe_ratio(correct, total);
}

double aks_junior(std::span<const PredictionRecord> records) {
    std::set<Label> classes;
    std::size_t total_known = 0;
    for (const auto& r : records) {
        if (r.truth.is_unknown()) continue;
        ++total_known;
        classes.insert(r.truth);
        if (r.predicted.is_known()) classes.insert(r.predicted);
    }
    if (total_known == 0) throw DataError("aks_junior: no known-truth records");
    std::size_t good = 0, all = 0;
    for (Label c : classes) {
        for (const auto& r : records) {
            if (r.truth.is_unknown()) continue;
            const bool is_c = r.truth == c;
            const bool said_c = r.predicted == c;
            good += is_c == said_c;  // TP or TN
            ++all;
        }
    }
    return safe_ratio(good, all);
}

double aus(std::span<const PredictionRecord> records) {
    std::size_t total = 0, rejected = 0;
    for (const auto& r : records) {
        if (r.truth.is_known()) continue;
        ++total;
        rejected += r.predicted.is_unknown();
    }
    if (total == 0) throw DataError("aus: no unknown-truth records");
    return safe_ratio(rejected, total);
}

double normalized_accuracy(double aks_value, double aus_value, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("normalized_accuracy: lambda must be in [0,1]");
    return lambda * aks_value + (1.0 - lambda) * aus_value;
}

MicroCounts open_set_counts(std::span<const PredictionRecord> records) {
    MicroCounts c;
    for (const auto& r : records) {
        if (r.truth.is_known() && r.predicted == r.truth) {
            ++c.tp;
            continue;
        }
        if (r.predicted.is_known()) ++c.fp;
        if (r.truth.is_known()) ++c.fn;
    }
    return c;
}

double f1_open(std::span<const PredictionRecord> records) {
    const auto c = open_set_counts(records);
    if (c.tp == 0) return 0.0;
    const double p = safe_ratio(c.tp, c.tp + c.fp);
    const double r = safe_ratio(c.tp, c.tp + c.fn);
    return 2.0 * p * r / (p + r);
}

void write_records_csv(const std::filesystem::path& path, std::span<const PredictionRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << "true_label,predicted_label,score\n";
    char buf[64];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%.17g", r.score);
        out << r.truth.to_string() << ',' << r.predicted.to_string() << ',' << buf << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
}

std::vector<PredictionRecord> read_records_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "true_label,predicted_label,score") {
        throw DataError(path.string() + ": expected header 'true_label,predicted_label,score'");
    }
    std::vector<PredictionRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string truth, predicted, score;
        if (!std::getline(row, truth, ',') || !std::getline(row, predicted, ',') || !std::getline(row, score)) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 3 columns");
        }
        PredictionRecord r{Label::parse(truth), Label::parse(predicted), 0.0};
        try {
            std::size_t used = 0;
            r.score = std::stod(score, &used);
            if (used != score.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": bad score '" + score + "'");
        }
        records.push_back(r);
    }
    return records;
}

}  // namespace fsos
