#include <cmath>
#include <random>

#include "doctest.h"

#include "backbone_gradients.hpp"
#include "compositions.hpp"
#include "fixtures.hpp"
#include "fsos/error.hpp"
#include "fsos/evaluation.hpp"
#include "fsos/metabce.hpp"

using namespace fsos;

namespace {

double episode_loss(const Tensor& support, const Tensor& queries, double t, std::size_t n, std::size_t k, std::size_t q) {
    Tape tape;
    return tape.item(mbce_episode_loss(tape, tape.constant(support), tape.constant(queries), tape.constant(Tensor::scalar(t)), n, k, q));
}

}  // namespace

TEST_SUITE("metabce") {

TEST_CASE("probability spot values") {
    CHECK(mbce_prob_known(0.0, 0.0) == 0.5);
    CHECK(mbce_prob_known(std::log(3.0), 0.0) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(mbce_prob_known(2.0, -2.0) == 0.5);
    CHECK(std::isfinite(mbce_prob_known(1e6, 0.0)));
    CHECK(mbce_prob_known(-1e6, 0.0) == 1.0);

    const MetaBceHead head{MbceVariant::branch, Tensor::scalar(-1.0)};
    const std::vector<double> q{1, 0}, p{0, 0};
    CHECK(mbce_prob_known(head, q, p) == 0.5);
}

TEST_CASE("probability strictly decreases in d and t") {
    double prev = 1.0;
    for (double d : {0.0, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0}) {
        const double p = mbce_prob_known(d, 0.3);
        CHECK(p < prev);
        CHECK(p > 0.0);
        prev = p;
    }
    prev = 1.0;
    for (double t : {-6.0, -2.0, -0.5, 0.0, 0.5, 2.0, 6.0}) {
        const double p = mbce_prob_known(1.0, t);
        CHECK(p < prev);
        prev = p;
    }
}

TEST_CASE("unknown probability and decision") {
    const std::vector<double> probs{0.9, 0.2, 0.6};
    CHECK(prob_unknown(probs) == doctest::Approx(0.1));
    CHECK(prob_unknown(std::vector<double>{0.8}) == doctest::Approx(0.2));
    const std::vector<double> halves{0.5, 0.5};
    CHECK(prob_unknown(halves) == 0.5);
    CHECK_FALSE(decide_unknown(0.5));
    CHECK(decide_unknown(std::nextafter(0.5, 1.0)));
    CHECK_THROWS(prob_unknown(std::vector<double>{}));
}

TEST_CASE("p_U + max p_c = 1 exactly and the one-class reduction holds") {
    std::mt19937_64 rng(1);
    const MetaBceHead head{MbceVariant::branch, Tensor::scalar(-4.0)};
    for (int i = 0; i < 500; ++i) {
        const Tensor protos = oracle::random_tensor(rng, {3, 4});
        const auto q = oracle::random_tensor(rng, {4}).data();
        const auto probs = mbce_class_probs(head, q, protos);
        const double best = *std::max_element(probs.begin(), probs.end());
        CHECK(mbce_prob_unknown(head, q, protos) + best == 1.0);

        const Tensor one = protos.rows(0, 1);
        const double p = mbce_class_probs(head, q, one)[0];
        CHECK(decide_unknown(mbce_prob_unknown(head, q, one)) == !(p >= 0.5));
    }
}

TEST_CASE("episode loss spot values") {
    const Tensor same = Tensor::matrix(1, 2, {0.3, -0.7});
    CHECK(episode_loss(same, same, 0.0, 1, 1, 1) == doctest::Approx(std::log(2.0)));
    CHECK(episode_loss(same, same, -50.0, 1, 1, 1) < 1e-20);
    const Tensor support = Tensor::matrix(2, 2, {1, 1, 1, 1});
    CHECK(episode_loss(support, support, 0.0, 2, 1, 1) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("episode targets are one-hot by class block") {
    const Tensor y = episode_targets(2, 2);
    CHECK(y.shape() == Shape{4, 2});
    CHECK(y.data() == std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
}

TEST_CASE("loss gradients w.r.t. t and branch parameters") {
    BackboneSpec spec;
    spec.input = InputShape::vector(4);
    spec.blocks = {{BlockSpec::Kind::dense, 5}, {BlockSpec::Kind::dense, 3}};
    spec.embed_dim = 3;
    auto bb = init_backbone(spec, 3, true);
    for (auto& v : bb.params().trunk[0].bias.values()) v = 0.4;
    for (auto& v : bb.params().branch.bias.values()) v = 0.3;
    std::mt19937_64 rng(2);
    const Tensor batch = oracle::random_tensor(rng, {2 * 2 + 2 * 2, 4});

    for (auto variant : {MbceVariant::branch, MbceVariant::mainC}) {
        MetaBceHead head{variant, Tensor::scalar(0.2)};
        const double err = oracle::model_gradient_error(bb, head.groups(), {&head.t}, [&](Tape& t, Backbone& b, TrainableGroups g, bool train) {
            Var e = train ? b.forward(t, t.constant(batch), head.route(), g) : std::as_const(b).forward(t, t.constant(batch), head.route());
            Var offset = train ? (head.t.set_requires_grad(true), t.param(head.t)) : t.constant(head.t);
            return mbce_episode_loss(t, t.slice_rows(e, 0, 4), t.slice_rows(e, 4, 4), offset, 2, 2, 2);
        });
        CAPTURE(to_string(variant));
        CHECK(err <= 1e-4);
    }
}

TEST_CASE("variant names") {
    CHECK(parse_mbce_variant("branch") == MbceVariant::branch);
    CHECK(parse_mbce_variant("mainC") == MbceVariant::mainC);
    CHECK(to_string(MbceVariant::mainC) == "mainC");
    CHECK_THROWS_AS(parse_mbce_variant("other"), ConfigError);
}

TEST_CASE("training with lr = 0 leaves the head bit-identical") {
    const Model& base = fixture::protonet();
    auto s = fixture::quick_schedule(Method::mbce, 20);
    s.learning_rate = 0.0;
    s.offset_learning_rate = 0.0;
    s.validate_every = 0;
    const auto r = run_meta_training(Method::mbce, fixture::benchmark(), s, {}, &base);
    CHECK(r.model.mbce->offset() == 0.0);
    CHECK(r.model.backbone.params().branch.weight == base.backbone.params().head.weight);
    CHECK(r.loss_curve.size() == 20);
}

TEST_CASE("trained head separates known from unknown and leaves closed-set logits alone") {
    const Dataset& d = fixture::benchmark();
    const Model& base = fixture::protonet();
    for (auto method : {Method::mbce, Method::mbce_c}) {
        const auto r = run_meta_training(method, d, fixture::quick_schedule(method, 300), {}, &base);
        CAPTURE(to_string(method));
        REQUIRE(r.model.mbce);

        // Closed-set logits over a fixed suite stay bit-identical.
        const EpisodeConfig shape{3, 3, 5, 3};
        const auto before = closed_set_logits_suite(ProtoNetClassifier{}, base.backbone, d, shape, 20, 5);
        const auto after = closed_set_logits_suite(ProtoNetClassifier{}, r.model.backbone, d, shape, 20, 5);
        CHECK(before == after);

        double known = 0.0, unknown = 0.0;
        std::size_t nk = 0, nu = 0;
        for (std::size_t i = 0; i < 20; ++i) {
            const auto ep = sample_episode(d, SplitPart::test, shape, derive_seed(77, i));
            const auto b = episode_batches(d, ep);
            const Tensor s = r.model.backbone.embed_batch(b.support, r.model.mbce->route());
            const Tensor q = r.model.backbone.embed_batch(b.queries, r.model.mbce->route());
            const Tensor protos = prototype_matrix(s, shape.n, shape.k);
            for (std::size_t j = 0; j < q.dim(0); ++j) {
                const auto probs = mbce_class_probs(*r.model.mbce, q.values().subspan(j * q.dim(1), q.dim(1)), protos);
                const double best = *std::max_element(probs.begin(), probs.end());
                if (j < shape.n * shape.q) known += best, ++nk;
                else unknown += best, ++nu;
            }
        }
        CHECK(known / static_cast<double>(nk) > unknown / static_cast<double>(nu));
    }
}

TEST_CASE("augmentation methods need a base model") {
    auto s = fixture::quick_schedule(Method::mbce, 5);
    CHECK_THROWS_AS(run_meta_training(Method::mbce, fixture::benchmark(), s), ConfigError);
    CHECK_THROWS_AS(run_meta_training(Method::mbce_c, fixture::benchmark(), s), ConfigError);
}

}  // TEST_SUITE
