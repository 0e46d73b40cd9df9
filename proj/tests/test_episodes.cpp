#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"

#include "fixtures.hpp"
#include "fsos/error.hpp"
#include "fsos/evaluation.hpp"
#include "fsos/training.hpp"

using namespace fsos;

namespace {

// Gate with fixed decisions: everything known, everything unknown, or exactly
// the truth (known queries come first in every episode).
class FixedGate final : public OpenSetGate {
public:
    enum class Mode { accept_all, reject_all, perfect };
    explicit FixedGate(Mode mode) : mode_(mode) {}
    std::string name() const override { return "fixed"; }
    GateDecision decide(const EpisodeView& view) const override {
        const std::size_t known = view.episode.query_known.size();
        const std::size_t total = known + view.episode.query_unknown.size();
        GateDecision d{std::vector<double>(total, 1.0), std::vector<bool>(total, mode_ == Mode::reject_all)};
        if (mode_ == Mode::perfect) {
            for (std::size_t j = known; j < total; ++j) {
                d.score[j] = 0.0;
                d.unknown[j] = true;
            }
        }
        return d;
    }

private:
    Mode mode_;
};

// Closed-set classifier that always predicts the true class (queries are class-major).
class OracleClassifier final : public ClosedSetClassifier {
public:
    explicit OracleClassifier(std::size_t q) : q_(q) {}
    std::string name() const override { return "oracle"; }
    Tensor logits(const Tensor&, const Tensor& queries, std::size_t n, std::size_t) const override {
        Tensor out = Tensor::zeros({queries.dim(0), n});
        for (std::size_t j = 0; j < queries.dim(0); ++j) out[j * n + std::min(j / q_, n - 1)] = 1.0;
        return out;
    }

private:
    std::size_t q_;
};

EvaluationConfig small_eval(EpisodeConfig shape, std::size_t episodes = 20) {
    EvaluationConfig c;
    c.shape = shape;
    c.episodes = episodes;
    c.seed = 4;
    return c;
}

}  // namespace

TEST_SUITE("episodes") {

TEST_CASE("episode counts") {
    SyntheticSpec s;
    const auto d = generate_synthetic(s);
    const auto ep = sample_episode(d, SplitPart::test, {5, 1, 15, 5}, 1);
    CHECK(ep.support.size() == 5);
    CHECK(ep.query_known.size() == 75);
    CHECK(ep.query_unknown.size() == 75);

    const auto one = sample_episode(d, SplitPart::test, {1, 1, 15, 1}, 1);
    CHECK(one.support.size() == 1);
    CHECK(one.query_known.size() == 15);
    CHECK(one.query_unknown.size() == 15);

    const auto b = episode_batches(d, ep);
    CHECK(b.support.shape() == Shape{5, s.dim});
    CHECK(b.queries.shape() == Shape{150, s.dim});
}

TEST_CASE("sampling shortfalls are named") {
    const Dataset& d = fixture::benchmark();
    CHECK_THROWS_AS(sample_episode(d, SplitPart::val, {3, 1, 5, 2}, 1), DataError);
    CHECK_THROWS_AS(sample_episode(d, SplitPart::test, {2, 20, 15, 0}, 1), DataError);
    CHECK_THROWS_AS(sample_episode(d, SplitPart::test, {0, 1, 5, 1}, 1), ConfigError);
    CHECK_THROWS_AS(sample_episode(d, SplitPart::test, {2, 1, 0, 1}, 1), ConfigError);
}

TEST_CASE("episodes are deterministic, class-disjoint and exact over many seeds") {
    const Dataset& d = fixture::benchmark();
    const EpisodeConfig cfg{3, 2, 4, 3};
    const auto a = sample_episode(d, SplitPart::test, cfg, 11);
    const auto b = sample_episode(d, SplitPart::test, cfg, 11);
    CHECK(a.support == b.support);
    CHECK(a.query_unknown == b.query_unknown);

    bool all_ok = true;
    for (std::uint64_t i = 0; i < 10000 && all_ok; ++i) {
        const auto ep = sample_episode(d, SplitPart::test, cfg, derive_seed(5, i));
        std::set<std::int32_t> known(ep.known_classes.begin(), ep.known_classes.end());
        std::set<std::int32_t> unknown(ep.unknown_classes.begin(), ep.unknown_classes.end());
        all_ok &= known.size() == cfg.n && unknown.size() == cfg.n_unknown;
        for (auto c : unknown) all_ok &= !known.count(c) && d.split().contains(SplitPart::test, c);
        all_ok &= ep.support.size() == cfg.n * cfg.k && ep.query_known.size() == cfg.n * cfg.q &&
                  ep.query_unknown.size() == cfg.n_unknown * cfg.q;
        std::set<ExampleRef> seen;
        for (const auto* part : {&ep.support, &ep.query_known, &ep.query_unknown}) {
            for (const auto& r : *part) all_ok &= seen.insert(r).second;
        }
        for (std::size_t c = 0; c < cfg.n; ++c) {
            for (std::size_t j = 0; j < cfg.k; ++j) all_ok &= ep.support[c * cfg.k + j].first == ep.known_classes[c];
            for (std::size_t j = 0; j < cfg.q; ++j) all_ok &= ep.relabel(ep.query_known[c * cfg.q + j].first) == static_cast<std::int32_t>(c);
        }
        for (const auto& r : ep.query_unknown) all_ok &= ep.relabel(r.first) == -1;
    }
    CHECK(all_ok);
}

TEST_CASE("seed derivation") {
    CHECK(derive_seed(1, 0) == derive_seed(1, 0));
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(splitmix64(0) == 0xe220a8397b1dcdafULL);
}

TEST_CASE("training schedule errors and loss curve length") {
    const Dataset& d = fixture::benchmark();
    auto s = fixture::quick_schedule(Method::protonet, 0);
    CHECK_THROWS_AS(run_meta_training(Method::protonet, d, s), ConfigError);
    s.episodes = 17;
    s.validate_every = 5;
    const auto r = run_meta_training(Method::protonet, d, s);
    CHECK(r.loss_curve.size() == 17);
    REQUIRE(r.validation.size() == 4);
    CHECK(r.validation.back().episode == 17);
    CHECK((r.best_episode % 5 == 0 || r.best_episode == 17));
}

TEST_CASE("protonet reaches high meta-val accuracy on separable data") {
    SyntheticSpec spec;
    spec.num_classes = 40;
    spec.seed = 2;
    const auto d = generate_synthetic(spec);
    auto s = default_schedule(Method::protonet);
    s.episodes = 2000;
    s.shape = {5, 5, 15, 0};
    s.validate_every = 0;
    const auto r = run_meta_training(Method::protonet, d, s);
    auto eval = small_eval({5, 5, 15, 1}, 200);
    eval.split = SplitPart::val;
    const auto report = evaluate_openset(ProtoNetClassifier{}, FixedGate(FixedGate::Mode::accept_all), r.model.backbone, d, eval);
    CHECK(report.metric("accuracy").mean >= 0.95);
}

TEST_CASE("one-class protocol with fixed heads") {
    const Dataset& d = fixture::benchmark();
    const Model& m = fixture::protonet();
    const auto all = evaluate_oneclass(FixedGate(FixedGate::Mode::accept_all), m.backbone, d, small_eval({1, 1, 15, 1}));
    CHECK(all.metric("accuracy").mean == doctest::Approx(0.5));
    CHECK(all.metric("f1").mean == doctest::Approx(2.0 / 3.0));
    CHECK(all.metric("auroc").mean == doctest::Approx(0.5));
    CHECK(all.metric("accuracy").ci == 0.0);

    const auto perfect = evaluate_oneclass(FixedGate(FixedGate::Mode::perfect), m.backbone, d, small_eval({1, 1, 15, 1}));
    for (const char* name : {"accuracy", "f1", "auroc"}) CHECK(perfect.metric(name).mean == 1.0);

    CHECK_THROWS_AS(evaluate_oneclass(FixedGate(FixedGate::Mode::perfect), m.backbone, d, small_eval({2, 1, 15, 1})), ConfigError);

    const auto single = evaluate_oneclass(FixedGate(FixedGate::Mode::accept_all), m.backbone, d, small_eval({1, 1, 15, 1}, 1));
    CHECK(single.degenerate_ci);
    CHECK(single.metric("accuracy").ci == 0.0);
}

TEST_CASE("open-set protocol with fixed gates") {
    const Dataset& d = fixture::benchmark();
    const Model& m = fixture::protonet();
    const EpisodeConfig shape{3, 2, 5, 3};
    const auto accept = evaluate_openset(OracleClassifier(5), FixedGate(FixedGate::Mode::accept_all), m.backbone, d, small_eval(shape));
    CHECK(accept.metric("aks").mean == 1.0);
    CHECK(accept.metric("aus").mean == 0.0);
    CHECK(accept.metric("na").mean == 0.5);

    const auto reject = evaluate_openset(ProtoNetClassifier{}, FixedGate(FixedGate::Mode::reject_all), m.backbone, d, small_eval(shape));
    CHECK(reject.metric("aks").mean == 0.0);
    CHECK(reject.metric("aus").mean == 1.0);
    CHECK(reject.metric("na").mean == 0.5);
    CHECK(reject.metric("f1_open").mean == 0.0);

    CHECK_THROWS_AS(evaluate_openset(ProtoNetClassifier{}, FixedGate(FixedGate::Mode::accept_all), m.backbone, d,
                                     small_eval({3, 2, 5, 0})),
                    ConfigError);
}

TEST_CASE("closed-set accuracy does not depend on the gate, and AKS never exceeds it") {
    const Dataset& d = fixture::benchmark();
    const Model& m = fixture::protonet();
    const auto eval = small_eval({3, 2, 5, 3}, 30);
    const auto tau = calibrate_threshold(m.backbone, d, {2, 2, 5, 2}, 10, 1);
    const std::vector<std::shared_ptr<OpenSetGate>> gates{
        std::make_shared<ThresholdGate>(tau), std::make_shared<FixedGate>(FixedGate::Mode::perfect),
        std::make_shared<FixedGate>(FixedGate::Mode::reject_all),
        std::make_shared<OcmlGate>(init_transfer(TransferArchitecture::one_layer(m.backbone.embed_dim()), 0))};
    std::vector<std::vector<double>> accuracy;
    for (const auto& g : gates) {
        const auto r = evaluate_openset(ProtoNetClassifier{}, *g, m.backbone, d, eval);
        std::vector<double> acc;
        for (const auto& row : r.per_episode) {
            acc.push_back(row[0]);
            CHECK(row[1] <= row[0]);
            for (double v : row) CHECK((v >= 0.0 && v <= 1.0));
        }
        accuracy.push_back(acc);
    }
    for (const auto& a : accuracy) CHECK(a == accuracy[0]);
}

TEST_CASE("confidence intervals") {
    const std::vector<double> flat(10, 0.7);
    const auto a = confidence_interval(flat);
    CHECK(a.mean == doctest::Approx(0.7));
    CHECK(a.half_width == 0.0);
    const std::vector<double> two{0.0, 1.0};
    const auto b = confidence_interval(two);
    CHECK(b.mean == 0.5);
    CHECK(b.half_width == doctest::Approx(1.96 * std::sqrt(0.5) / std::sqrt(2.0)));
    CHECK(b.half_width == doctest::Approx(0.98));
    const std::vector<double> one{0.25};
    const auto c = confidence_interval(one);
    CHECK(c.mean == 0.25);
    CHECK(c.half_width == 0.0);
    CHECK(c.degenerate);
    CHECK_THROWS_AS(confidence_interval(std::vector<double>{}), ConfigError);
}

TEST_CASE("evaluation config errors") {
    const Dataset& d = fixture::benchmark();
    const Model& m = fixture::protonet();
    auto eval = small_eval({3, 2, 5, 3});
    eval.episodes = 0;
    CHECK_THROWS_AS(evaluate_openset(ProtoNetClassifier{}, FixedGate(FixedGate::Mode::perfect), m.backbone, d, eval), ConfigError);
    eval.episodes = 2;
    eval.split = SplitPart::train;
    CHECK_THROWS_AS(evaluate_openset(ProtoNetClassifier{}, FixedGate(FixedGate::Mode::perfect), m.backbone, d, eval), ConfigError);
}

TEST_CASE("reports are reproducible and independent of the worker count") {
    const Dataset& d = fixture::benchmark();
    const Model& m = fixture::protonet();
    auto eval = small_eval({3, 2, 5, 3}, 25);
    const auto tau = calibrate_threshold(m.backbone, d, {2, 2, 5, 2}, 10, 1);
    const auto serial = evaluate_openset(ProtoNetClassifier{}, ThresholdGate(tau), m.backbone, d, eval);
    eval.workers = 3;
    const auto parallel = evaluate_openset(ProtoNetClassifier{}, ThresholdGate(tau), m.backbone, d, eval);
    CHECK(serial.per_episode == parallel.per_episode);
    CHECK(serial.to_csv() == parallel.to_csv());
    eval.workers = 1;
    CHECK(evaluate_openset(ProtoNetClassifier{}, ThresholdGate(tau), m.backbone, d, eval).to_json() == serial.to_json());
}

}  // TEST_SUITE
