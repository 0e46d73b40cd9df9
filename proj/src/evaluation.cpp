#include "fsos/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <thread>

#include "fsos/error.hpp"
#include "json.hpp"

namespace fsos {

using nlohmann::json;

namespace {

constexpr std::uint64_t kCalibrationSalt = 0x63616c6962726174ULL;

std::span<const double> row(const Tensor& m, std::size_t i) {
    const std::size_t d = m.dim(1);
    return m.values().subspan(i * d, d);
}

GateDecision from_class_probs(const Tensor& queries, auto&& probs_of) {
    GateDecision out;
    const std::size_t m = queries.dim(0);
    out.score.resize(m);
    out.unknown.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const auto p = probs_of(row(queries, i));
        const double p_unknown = prob_unknown(p);
        out.score[i] = *std::max_element(p.begin(), p.end());
        out.unknown[i] = decide_unknown(p_unknown);
    }
    return out;
}

EpisodeView make_view(const Episode& ep, const Backbone& backbone, const EpisodeBatches& batches) {
    return {ep, backbone, batches, backbone.embed_batch(batches.support), backbone.embed_batch(batches.queries)};
}

// Runs `per_episode(index, seed)` for every episode index, spreading work over
// `workers` threads; results land in their own slot so ordering never
// depends on scheduling.
template <class Fn>
void for_each_episode(std::size_t count, std::size_t workers, Fn&& per_episode) {
    workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(count, 1));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) per_episode(i);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) {
        threads.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < count; i += workers) per_episode(i);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void check_split(const Dataset& dataset, const EvaluationConfig& config, const char* who) {
    if (config.split == SplitPart::train) throw ConfigError(std::string(who) + ": refusing to evaluate on meta-train classes");
    const auto& split = dataset.split();
    for (auto cls : split.part(config.split)) {
        if (split.contains(SplitPart::train, cls)) {
            throw DataError(std::string(who) + ": class " + std::to_string(cls) + " is also a meta-train class");
        }
    }
}

EvaluationReport finish(EvaluationReport report, std::vector<std::vector<double>> rows,
                        std::vector<std::vector<PredictionRecord>> records) {
    report.per_episode = std::move(rows);
    for (std::size_t j = 0; j < report.metric_names.size(); ++j) {
        std::vector<double> column(report.per_episode.size());
        for (std::size_t i = 0; i < column.size(); ++i) column[i] = report.per_episode[i][j];
        const auto ci = confidence_interval(column);
        report.summary.push_back({report.metric_names[j], ci.mean, ci.half_width});
        report.degenerate_ci = ci.degenerate;
    }
    if (report.config.keep_records) report.records = std::move(records);
    return report;
}

json config_json(const EvaluationConfig& c) {
    return {{"n", c.shape.n},
            {"k", c.shape.k},
            {"q", c.shape.q},
            {"n_unknown", c.shape.n_unknown},
            {"episodes", c.episodes},
            {"seed", c.seed},
            {"split", to_string(c.split)}};
}

}  // namespace

GateDecision MetaBceGate::decide(const EpisodeView& view) const {
    const auto& cfg = view.episode.config;
    const Tensor support = view.backbone.embed_batch(view.batches.support, head_.route());
    const Tensor queries = view.backbone.embed_batch(view.batches.queries, head_.route());
    const Tensor protos = prototype_matrix(support, cfg.n, cfg.k);
    return from_class_probs(queries, [&](std::span<const double> x) { return mbce_class_probs(head_, x, protos); });
}

GateDecision OcmlGate::decide(const EpisodeView& view) const {
    const auto& cfg = view.episode.config;
    const Tensor weights = generate_weights(g_, prototype_matrix(view.support_main, cfg.n, cfg.k));
    return from_class_probs(view.query_main, [&](std::span<const double> x) { return ocml_class_probs(weights, x); });
}

GateDecision ThresholdGate::decide(const EpisodeView& view) const {
    const auto& cfg = view.episode.config;
    const Tensor protos = prototype_matrix(view.support_main, cfg.n, cfg.k);
    GateDecision out;
    const std::size_t m = view.query_main.dim(0);
    out.score.resize(m);
    out.unknown.resize(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double s = threshold_score(row(view.query_main, i), protos);
        out.score[i] = -s;
        out.unknown[i] = !baseline_.accepts(s);
    }
    return out;
}

void EvaluationConfig::validate() const {
    shape.validate();
    if (episodes == 0) throw ConfigError("evaluation: episode count M must be >= 1");
    if (shape.n_unknown == 0) throw ConfigError("evaluation: n_unknown must be >= 1 (open-set metrics need unknown queries)");
}

ConfidenceInterval confidence_interval(std::span<const double> samples) {
    if (samples.empty()) throw ConfigError("confidence_interval: no samples");
    double sum = 0.0;
    for (double s : samples) sum += s;
    const double m = static_cast<double>(samples.size());
    const double mean = sum / m;
    if (samples.size() < 2) return {mean, 0.0, true};
    if (std::all_of(samples.begin(), samples.end(), [&](double s) { return s == samples[0]; })) return {samples[0], 0.0, false};
    double ss = 0.0;
    for (double s : samples) ss += (s - mean) * (s - mean);
    const double sd = std::sqrt(ss / (m - 1.0));
    return {mean, 1.96 * sd / std::sqrt(m), false};
}

const MetricSummary& EvaluationReport::metric(const std::string& name) const {
    for (const auto& s : summary) {
        if (s.name == name) return s;
    }
    throw ConfigError("report: no metric '" + name + "'");
}

std::string EvaluationReport::to_json() const {
    json metrics = json::object();
    for (const auto& s : summary) metrics[s.name] = {{"mean", s.mean}, {"ci", s.ci}};
    json j = {{"format", "fsos-report"},
              {"version", 1},
              {"tool", kToolVersion},
              {"task", task},
              {"gate", gate},
              {"closed_set", closed_set},
              {"config", config_json(config)},
              {"echo", echo},
              {"metric_order", metric_names},
              {"metrics", metrics},
              {"degenerate_ci", degenerate_ci}};
    return j.dump(2) + "\n";
}

std::string EvaluationReport::to_csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "episode_id";
    for (const auto& n : metric_names) os << ',' << n;
    os << '\n';
    for (std::size_t i = 0; i < per_episode.size(); ++i) {
        os << i;
        for (double v : per_episode[i]) os << ',' << v;
        os << '\n';
    }
    return os.str();
}

EvaluationReport report_from_json(const std::string& text) {
    try {
        const auto j = json::parse(text);
        if (j.at("format") != "fsos-report") throw DataError("report: not an fsos report");
        EvaluationReport r;
        r.task = j.at("task").get<std::string>();
        r.gate = j.at("gate").get<std::string>();
        r.closed_set = j.at("closed_set").get<std::string>();
        const auto& c = j.at("config");
        r.config.shape = {c.at("n").get<std::size_t>(), c.at("k").get<std::size_t>(), c.at("q").get<std::size_t>(),
                          c.at("n_unknown").get<std::size_t>()};
        r.config.episodes = c.at("episodes").get<std::size_t>();
        r.config.seed = c.at("seed").get<std::uint64_t>();
        r.config.split = parse_split_part(c.at("split").get<std::string>());
        r.echo = j.at("echo").get<std::map<std::string, std::string>>();
        r.metric_names = j.at("metric_order").get<std::vector<std::string>>();
        for (const auto& name : r.metric_names) {
            const auto& m = j.at("metrics").at(name);
            r.summary.push_back({name, m.at("mean").get<double>(), m.at("ci").get<double>()});
        }
        r.degenerate_ci = j.at("degenerate_ci").get<bool>();
        return r;
    } catch (const json::exception& e) {
        throw DataError(std::string("report: malformed JSON: ") + e.what());
    }
}

EvaluationReport evaluate_oneclass(const OpenSetGate& gate, const Backbone& backbone, const Dataset& dataset,
                                   const EvaluationConfig& config) {
    config.validate();
    if (config.shape.n != 1) throw ConfigError("evaluate_oneclass: n must be 1, got " + std::to_string(config.shape.n));
    check_split(dataset, config, "evaluate_oneclass");

    EvaluationReport report;
    report.task = "oneclass";
    report.gate = gate.name();
    report.config = config;
    report.metric_names = {"accuracy", "f1", "auroc"};

    std::vector<std::vector<double>> rows(config.episodes);
    std::vector<std::vector<PredictionRecord>> records(config.keep_records ? config.episodes : 0);
    for_each_episode(config.episodes, config.workers, [&](std::size_t i) {
        const auto ep = sample_episode(dataset, config.split, config.shape, derive_seed(config.seed, i));
        const auto batches = episode_batches(dataset, ep);
        const auto decision = gate.decide(make_view(ep, backbone, batches));
        const std::size_t known = ep.query_known.size();
        std::vector<PredictionRecord> recs(decision.score.size());
        for (std::size_t j = 0; j < recs.size(); ++j) {
            recs[j].truth = j < known ? Label(0) : Label::unknown();
            recs[j].predicted = decision.unknown[j] ? Label::unknown() : Label(0);
            recs[j].score = decision.score[j];
        }
        rows[i] = {accuracy(recs), binary_f1(recs), auroc(recs)};
        if (config.keep_records) records[i] = std::move(recs);
    });
    return finish(std::move(report), std::move(rows), std::move(records));
}

EvaluationReport evaluate_openset(const ClosedSetClassifier& closed, const OpenSetGate& gate, const Backbone& backbone,
                                  const Dataset& dataset, const EvaluationConfig& config) {
    config.validate();
    check_split(dataset, config, "evaluate_openset");

    EvaluationReport report;
    report.task = "openset";
    report.gate = gate.name();
    report.closed_set = closed.name();
    report.config = config;
    report.metric_names = {"accuracy", "aks", "aus", "na", "f1_open", "auroc", "aks_junior"};

    std::vector<std::vector<double>> rows(config.episodes);
    std::vector<std::vector<PredictionRecord>> records(config.keep_records ? config.episodes : 0);
    for_each_episode(config.episodes, config.workers, [&](std::size_t i) {
        const auto ep = sample_episode(dataset, config.split, config.shape, derive_seed(config.seed, i));
        const auto batches = episode_batches(dataset, ep);
        const auto view = make_view(ep, backbone, batches);
        const auto& cfg = ep.config;
        const Tensor logits = closed.logits(view.support_main, view.query_main, cfg.n, cfg.k);
        const auto decision = gate.decide(view);

        const std::size_t known = ep.query_known.size();
        std::vector<PredictionRecord> closed_recs(known);
        std::vector<PredictionRecord> recs(decision.score.size());
        for (std::size_t j = 0; j < recs.size(); ++j) {
            const Label label(static_cast<std::int32_t>(argmax(row(logits, j))));
            recs[j].truth = j < known ? Label(static_cast<std::int32_t>(j / cfg.q)) : Label::unknown();
            recs[j].predicted = decision.unknown[j] ? Label::unknown() : label;
            recs[j].score = decision.score[j];
            if (j < known) closed_recs[j] = {recs[j].truth, label, 0.0};
        }
        const double a = aks(recs), u = aus(recs);
        rows[i] = {accuracy(closed_recs), a, u, normalized_accuracy(a, u), f1_open(recs), auroc(recs), aks_junior(recs)};
        if (config.keep_records) records[i] = std::move(recs);
    });
    return finish(std::move(report), std::move(rows), std::move(records));
}

ThresholdBaseline calibrate_threshold(const Backbone& backbone, const Dataset& dataset, const EpisodeConfig& shape,
                                      std::size_t episodes, std::uint64_t seed) {
    shape.validate();
    if (episodes == 0) throw ConfigError("calibrate_threshold: needs at least one validation episode");
    if (shape.n_unknown == 0) throw DataError("calibrate_threshold: validation episodes have no unknown queries");
    std::vector<double> known, unknown;
    for (std::size_t i = 0; i < episodes; ++i) {
        const auto ep = sample_episode(dataset, SplitPart::val, shape, derive_seed(seed ^ kCalibrationSalt, i));
        const auto batches = episode_batches(dataset, ep);
        const Tensor support = backbone.embed_batch(batches.support);
        const Tensor queries = backbone.embed_batch(batches.queries);
        const Tensor protos = prototype_matrix(support, shape.n, shape.k);
        for (std::size_t j = 0; j < queries.dim(0); ++j) {
            const double s = threshold_score(row(queries, j), protos);
            (j < ep.query_known.size() ? known : unknown).push_back(s);
        }
    }
    return calibrate_threshold(known, unknown);
}

std::vector<Tensor> closed_set_logits_suite(const ClosedSetClassifier& closed, const Backbone& backbone, const Dataset& dataset,
                                            const EpisodeConfig& shape, std::size_t episodes, std::uint64_t seed) {
    std::vector<Tensor> out;
    out.reserve(episodes);
    for (std::size_t i = 0; i < episodes; ++i) {
        const auto ep = sample_episode(dataset, SplitPart::test, shape, derive_seed(seed, i));
        const auto batches = episode_batches(dataset, ep);
        out.push_back(closed.logits(backbone.embed_batch(batches.support), backbone.embed_batch(batches.queries), shape.n, shape.k));
    }
    return out;
}

}  // namespace fsos
