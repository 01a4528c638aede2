#include <doctest.h>

#include <cmath>

#include "sibre/data.hpp"
#include "sibre/distributions.hpp"
#include "sibre/errors.hpp"
#include "sibre/metrics.hpp"
#include "sibre/model.hpp"
#include "sibre/objectives.hpp"

using namespace sibre;
using namespace sibre::data;
using namespace sibre::model;
using namespace sibre::objectives;

namespace {

double logit_of(double p) { return std::log(p / (1.0 - p)); }

// Two-class, one-document batch with controllable units; unit tests drive
// the loss terms with hand-built logits rather than trained ones.
struct LossFixture {
    Splits splits;
    Vocab vocab;
    LabelMap labels;
    ModelConfig mcfg;
    Model net;
    Batch batch;

    static LossFixture make(int n_sentences, std::uint64_t seed = 3) {
        SynthSpec spec;
        spec.n_sentences = n_sentences;
        spec.sentence_len = 3;
        spec.signal_fraction = 0.5;
        spec.vocab_size = 40;
        spec.num_train = 8;
        spec.num_val = 4;
        spec.num_test = 4;
        spec.seed = seed;
        Splits splits = generate(spec);
        Vocab vocab = Vocab::build(splits.train);
        LabelMap labels = LabelMap::build(splits.train);
        ModelConfig mcfg;
        mcfg.vocab_size = static_cast<int>(vocab.size());
        mcfg.embed_dim = 6;
        mcfg.hidden_dim = 7;
        mcfg.num_classes = std::max(2, labels.size());
        Model net(mcfg, seed);
        std::vector<const Document*> ptrs{&splits.train[0]};
        Batch batch = make_batch(ptrs, vocab, labels, Granularity::sentence);
        return LossFixture{std::move(splits), std::move(vocab), std::move(labels),
                           mcfg, std::move(net), std::move(batch)};
    }

    Tensor pred() const {
        const auto enc = net.encode(batch);
        const Tensor ones = Tensor::full({batch.size * batch.units, 1}, 1.0);
        return net.predict(enc, ones, batch);
    }
};

} // namespace

TEST_CASE("sib info term matches the closed-form KL sum") {
    LossFixture fx = LossFixture::make(2);
    REQUIRE(fx.batch.units == 2);
    ObjectiveConfig cfg;
    cfg.kind = Kind::sib;
    cfg.pi = 0.2;
    cfg.beta = 1.0;

    // theta = pi on every unit: no information loss.
    Tensor at_prior = Tensor::of({2, 1}, {logit_of(0.2), logit_of(0.2)});
    const auto b0 = loss_sib(fx.pred(), fx.batch, at_prior, cfg);
    CHECK(b0.info_value == doctest::Approx(0.0).epsilon(1e-12));

    Tensor logits = Tensor::of({2, 1}, {logit_of(0.9), logit_of(0.2)});
    const auto b1 = loss_sib(fx.pred(), fx.batch, logits, cfg);
    CHECK(b1.info_value == doctest::Approx(1.1457255029306632).epsilon(1e-9));
    CHECK(b1.total_value == doctest::Approx(b1.task_value + b1.info_value).epsilon(1e-12));

    cfg.beta = 2.0;
    const auto b2 = loss_sib(fx.pred(), fx.batch, logits, cfg);
    CHECK(b2.info_value == doctest::Approx(2.0 * b1.info_value).epsilon(1e-12));
    CHECK(b2.task_value == doctest::Approx(b1.task_value).epsilon(1e-15));

    cfg.pi = 1.5;
    CHECK_THROWS_AS(loss_sib(fx.pred(), fx.batch, logits, cfg), Error);
}

TEST_CASE("sl0 norm term: relaxed mask and expected-L0 routes") {
    LossFixture fx = LossFixture::make(4);
    REQUIRE(fx.batch.units == 4);
    ObjectiveConfig cfg;
    cfg.kind = Kind::sl0;
    cfg.lambda = 1.0;

    Tensor logits = Tensor::zeros({4, 1});
    Tensor zeros = Tensor::zeros({4, 1});
    CHECK(loss_sl0(fx.pred(), fx.batch, zeros, logits, cfg).info_value ==
          doctest::Approx(0.0).epsilon(1e-15));

    Tensor half = Tensor::of({4, 1}, {1.0, 1.0, 0.0, 0.0});
    CHECK(loss_sl0(fx.pred(), fx.batch, half, logits, cfg).info_value ==
          doctest::Approx(0.5).epsilon(1e-12));

    cfg.lambda = 3.0;
    CHECK(loss_sl0(fx.pred(), fx.batch, half, logits, cfg).info_value ==
          doctest::Approx(1.5).epsilon(1e-12));

    // Hard-concrete mode ignores the sampled mask and uses the closed form.
    cfg.lambda = 1.0;
    cfg.distribution = MaskDistribution::hard_concrete;
    const auto b = loss_sl0(fx.pred(), fx.batch, zeros, logits, cfg);
    CHECK(b.info_value == doctest::Approx(0.8427).epsilon(2e-4)); // per gate, logit 0
}

TEST_CASE("sl0c hinge: inactive under budget, linear above, continuous at pi") {
    LossFixture fx = LossFixture::make(4);
    ObjectiveConfig cfg;
    cfg.kind = Kind::sl0c;
    cfg.pi = 0.2;
    cfg.lambda = 1.0;
    Tensor logits = Tensor::zeros({4, 1});

    Tensor under = Tensor::of({4, 1}, {0.15, 0.15, 0.15, 0.15});
    CHECK(loss_sl0c(fx.pred(), fx.batch, under, logits, cfg).info_value == 0.0);

    Tensor over = Tensor::of({4, 1}, {0.30, 0.30, 0.30, 0.30});
    CHECK(loss_sl0c(fx.pred(), fx.batch, over, logits, cfg).info_value ==
          doctest::Approx(0.10).epsilon(1e-12));

    Tensor at = Tensor::of({4, 1}, {0.2 + 1e-9, 0.2 + 1e-9, 0.2 + 1e-9, 0.2 + 1e-9});
    CHECK(loss_sl0c(fx.pred(), fx.batch, at, logits, cfg).info_value < 1e-8);

    // The norm term contributes exactly zero gradient when under budget.
    Tensor live = Tensor::of({4, 1}, {logit_of(0.1), logit_of(0.1), logit_of(0.1), logit_of(0.1)},
                             true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor mask = sigmoid(live); // mean 0.1 < pi
    const auto b = loss_sl0c(fx.pred(), fx.batch, mask, live, cfg);
    tape.backward(b.total);
    for (double g : live.grad()) CHECK(g == 0.0);
}

TEST_CASE("semi loss: positive-only and full BCE forms") {
    LossFixture fx = LossFixture::make(2);
    // Gold mask [1, 0] with theta [0.8, 0.4].
    fx.batch.gold_units = {1.0, 0.0};
    fx.batch.has_gold = {1};
    Tensor logits = Tensor::of({2, 1}, {logit_of(0.8), logit_of(0.4)});
    const std::vector<double> use_gold{1.0};

    ObjectiveConfig cfg;
    cfg.kind = Kind::semi;
    cfg.gamma = 1.0;
    cfg.semi_loss = SemiLossMode::paper_positive_only;
    CHECK(loss_semi(fx.pred(), fx.batch, logits, use_gold, cfg).info_value ==
          doctest::Approx(0.22314355131420976).epsilon(1e-9)); // -log 0.8

    cfg.semi_loss = SemiLossMode::full_bce;
    CHECK(loss_semi(fx.pred(), fx.batch, logits, use_gold, cfg).info_value ==
          doctest::Approx(0.7339691750802004).epsilon(1e-9)); // -log 0.8 - log 0.6

    // Unsupervised documents contribute task loss only.
    const std::vector<double> no_gold{0.0};
    CHECK(loss_semi(fx.pred(), fx.batch, logits, no_gold, cfg).info_value == 0.0);

    // Full BCE is minimized when theta matches the (clamped) gold exactly.
    Tensor matched = Tensor::of({2, 1}, {15.0, -15.0});
    const double at_gold = loss_semi(fx.pred(), fx.batch, matched, use_gold, cfg).info_value;
    Tensor nearby = Tensor::of({2, 1}, {3.0, -3.0});
    CHECK(at_gold < loss_semi(fx.pred(), fx.batch, nearby, use_gold, cfg).info_value);
    CHECK(at_gold < 1e-5);
}

TEST_CASE("learnable pi adds the entropy-weighted prior term") {
    LossFixture fx = LossFixture::make(3);
    ObjectiveConfig cfg;
    cfg.kind = Kind::sib;
    cfg.learnable_pi = true;
    cfg.beta = 1.0;
    cfg.entropy_lambda = 4.0;

    Tensor pi_free = Tensor::of({1, 1}, {0.0}, true); // sigmoid(0) = 0.5 init
    Tensor logits = Tensor::of({3, 1}, {logit_of(0.5), logit_of(0.5), logit_of(0.5)});
    const auto b = loss_learnable_pi(fx.pred(), fx.batch, logits, pi_free, cfg);
    // KL vanishes at theta == pi == 0.5, leaving entropy_lambda * pi.
    CHECK(b.info_value == doctest::Approx(4.0 * 0.5).epsilon(1e-12));

    // d(entropy_lambda * sigmoid(rho))/drho = entropy_lambda * pi(1-pi).
    cfg.beta = 0.0;
    const double err = grad_check(
        [&](const Tensor& t) {
            return loss_learnable_pi(fx.pred(), fx.batch, logits, t, cfg).total;
        },
        pi_free, 1e-6);
    CHECK(err < 1e-8);
    {
        Tape tape;
        Tape::Scope scope(tape);
        pi_free.zero_grad();
        const auto b2 = loss_learnable_pi(fx.pred(), fx.batch, logits, pi_free, cfg);
        tape.backward(b2.total);
        CHECK(pi_free.grad()[0] == doctest::Approx(4.0 * 0.5 * 0.5).epsilon(1e-12));
    }
}

TEST_CASE("sib KL gradient follows the log-odds-ratio form") {
    LossFixture fx = LossFixture::make(1);
    ObjectiveConfig cfg;
    cfg.kind = Kind::sib;
    cfg.pi = 0.2;
    for (const double theta : {0.35, 0.6, 0.85}) {
        Tensor logits = Tensor::of({1, 1}, {logit_of(theta)}, true);
        Tape tape;
        Tape::Scope scope(tape);
        logits.zero_grad();
        const auto b = loss_sib(fx.pred(), fx.batch, logits, cfg);
        tape.backward(b.total);
        // dKL/dtheta = log(theta(1-pi) / ((1-theta)pi)); chain through sigmoid.
        const double expected =
            std::log(theta * (1.0 - cfg.pi) / ((1.0 - theta) * cfg.pi)) * theta * (1.0 - theta);
        CHECK(logits.grad()[0] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("per-example values decompose the batch means") {
    SynthSpec spec;
    spec.n_sentences = 4;
    spec.sentence_len = 3;
    spec.signal_fraction = 0.5;
    spec.vocab_size = 40;
    spec.num_train = 6;
    spec.num_val = 2;
    spec.num_test = 2;
    spec.seed = 5;
    Splits splits = generate(spec);
    Vocab vocab = Vocab::build(splits.train);
    LabelMap labels = LabelMap::build(splits.train);
    ModelConfig mcfg;
    mcfg.vocab_size = static_cast<int>(vocab.size());
    mcfg.embed_dim = 6;
    mcfg.hidden_dim = 6;
    mcfg.num_classes = std::max(2, labels.size());
    Model net(mcfg, 5);
    std::vector<const Document*> ptrs{&splits.train[0], &splits.train[1], &splits.train[2]};
    Batch batch = make_batch(ptrs, vocab, labels, Granularity::sentence);

    const auto enc = net.encode(batch);
    const Tensor logits = net.explain(enc);
    Rng rng(7, "per-example");
    const auto u = Model::draw_uniforms(rng, static_cast<std::size_t>(batch.size) * batch.units);
    ObjectiveConfig cfg;
    const Tensor mask = net.sample_mask(logits, batch, cfg.mask_settings(), u);
    const Tensor pred = net.predict(enc, mask, batch);
    const auto b = loss_sib(pred, batch, logits, cfg);

    REQUIRE(b.per_example_task.size() == 3);
    REQUIRE(b.per_example_info.size() == 3);
    double task_mean = 0.0, info_mean = 0.0;
    for (int d = 0; d < 3; ++d) {
        task_mean += b.per_example_task[static_cast<std::size_t>(d)] / 3.0;
        info_mean += b.per_example_info[static_cast<std::size_t>(d)] / 3.0;
    }
    CHECK(task_mean == doctest::Approx(b.task_value).epsilon(1e-10));
    CHECK(info_mean == doctest::Approx(b.info_value).epsilon(1e-10));
}

TEST_CASE("regression task term is the mean squared error") {
    SynthSpec spec;
    spec.task = SynthTask::regression;
    spec.n_sentences = 3;
    spec.sentence_len = 3;
    spec.signal_fraction = 0.4;
    spec.vocab_size = 40;
    spec.num_train = 6;
    spec.num_val = 2;
    spec.num_test = 2;
    spec.seed = 8;
    Splits splits = generate(spec);
    Vocab vocab = Vocab::build(splits.train);
    LabelMap labels; // unused for regression
    ModelConfig mcfg;
    mcfg.vocab_size = static_cast<int>(vocab.size());
    mcfg.embed_dim = 5;
    mcfg.hidden_dim = 5;
    mcfg.regression = true;
    Model net(mcfg, 8);
    std::vector<const Document*> ptrs{&splits.train[0], &splits.train[1]};
    Batch batch = make_batch(ptrs, vocab, labels, Granularity::sentence);

    const auto enc = net.encode(batch);
    const Tensor ones = Tensor::full({batch.size * batch.units, 1}, 1.0);
    const Tensor pred = net.predict(enc, ones, batch);
    std::vector<double> per;
    const Tensor t = task_loss(pred, batch, true, &per);
    double expected = 0.0;
    for (int d = 0; d < 2; ++d) {
        const double diff = pred.data()[static_cast<std::size_t>(d)] - batch.label_values[static_cast<std::size_t>(d)];
        expected += diff * diff / 2.0;
        CHECK(per[static_cast<std::size_t>(d)] == doctest::Approx(diff * diff).epsilon(1e-12));
    }
    CHECK(t.value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("train: determinism, objective variants, and failure modes") {
    SynthSpec spec;
    spec.n_sentences = 5;
    spec.sentence_len = 4;
    spec.signal_fraction = 0.4;
    spec.vocab_size = 60;
    spec.num_train = 48;
    spec.num_val = 16;
    spec.num_test = 16;
    spec.seed = 13;
    Splits splits = generate(spec);
    Vocab vocab = Vocab::build(splits.train);
    LabelMap labels = LabelMap::build(splits.train);
    ModelConfig mcfg;
    mcfg.vocab_size = static_cast<int>(vocab.size());
    mcfg.embed_dim = 10;
    mcfg.hidden_dim = 10;
    mcfg.num_classes = std::max(2, labels.size());

    TrainConfig tcfg;
    tcfg.epochs = 4;
    tcfg.batch_size = 16;

    SUBCASE("same seed reproduces parameters bit-for-bit") {
        ObjectiveConfig cfg;
        Model m1(mcfg, 7);
        Model m2(mcfg, 7);
        train(m1, splits.train, splits.val, vocab, labels, cfg, tcfg, 7);
        train(m2, splits.train, splits.val, vocab, labels, cfg, tcfg, 7);
        for (std::size_t i = 0; i < m1.parameters().size(); ++i)
            CHECK(m1.parameters()[i].second.data() == m2.parameters()[i].second.data());
    }

    SUBCASE("kind none logs zero info term") {
        ObjectiveConfig cfg;
        cfg.kind = Kind::none;
        Model m(mcfg, 7);
        const auto result = train(m, splits.train, splits.val, vocab, labels, cfg, tcfg, 7);
        for (const auto& row : result.log) CHECK(row.info == 0.0);
    }

    SUBCASE("semi without any gold fails fast") {
        auto stripped = splits.train;
        for (auto& d : stripped) d.gold_mask.reset();
        ObjectiveConfig cfg;
        cfg.kind = Kind::semi;
        Model m(mcfg, 7);
        CHECK_THROWS_AS(train(m, stripped, splits.val, vocab, labels, cfg, tcfg, 7), Error);
        cfg.kind = Kind::pipeline;
        CHECK_THROWS_AS(train(m, stripped, splits.val, vocab, labels, cfg, tcfg, 7), Error);
    }

    SUBCASE("supervision fraction zero reduces semi to task-only") {
        ObjectiveConfig cfg;
        cfg.kind = Kind::semi;
        cfg.supervision_fraction = 0.0;
        Model m(mcfg, 7);
        const auto result = train(m, splits.train, splits.val, vocab, labels, cfg, tcfg, 7);
        for (const auto& row : result.log) CHECK(row.info == 0.0);
    }

    SUBCASE("pipeline trains explainer then predictor") {
        ObjectiveConfig cfg;
        cfg.kind = Kind::pipeline;
        cfg.pi = 0.4;
        TrainConfig longer = tcfg;
        longer.epochs = 10;
        Model m(mcfg, 7);
        const auto result = train(m, splits.train, splits.val, vocab, labels, cfg, longer, 7);
        CHECK(result.log.size() >= 2);
        // Gold supervision should rank the right units quickly.
        CHECK(result.best_val_iou > 0.8);
    }

    SUBCASE("learnable pi is returned and saved") {
        ObjectiveConfig cfg;
        cfg.learnable_pi = true;
        cfg.entropy_lambda = 5.0;
        Model m(mcfg, 7);
        const auto result = train(m, splits.train, splits.val, vocab, labels, cfg, tcfg, 7);
        REQUIRE(result.learned_pi.has_value());
        CHECK(*result.learned_pi > 0.0);
        CHECK(*result.learned_pi < 1.0);
        CHECK(result.extras.count("objective.pi_free") == 1);
    }
}

TEST_CASE("training drives a separable single-sentence task to near-zero loss") {
    SynthSpec spec;
    spec.n_sentences = 1;
    spec.sentence_len = 3;
    spec.signal_fraction = 0.9; // the only sentence carries the signal
    spec.vocab_size = 30;
    spec.num_train = 64;
    spec.num_val = 16;
    spec.num_test = 16;
    spec.seed = 17;
    Splits splits = generate(spec);
    Vocab vocab = Vocab::build(splits.train);
    LabelMap labels = LabelMap::build(splits.train);
    ModelConfig mcfg;
    mcfg.vocab_size = static_cast<int>(vocab.size());
    mcfg.embed_dim = 8;
    mcfg.hidden_dim = 8;
    mcfg.num_classes = std::max(2, labels.size());
    Model m(mcfg, 19);

    ObjectiveConfig cfg;
    cfg.kind = Kind::none;
    TrainConfig tcfg;
    tcfg.epochs = 40;
    tcfg.batch_size = 16;
    const auto result = train(m, splits.train, splits.val, vocab, labels, cfg, tcfg, 19);
    CHECK(result.log.back().task < 0.05);
    const auto eval = metrics::evaluate_model(m, splits.test, vocab, labels, 0.9);
    CHECK(eval.task_metric == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("adam step shrinks a quadratic") {
    Tensor x = Tensor::of({2, 1}, {3.0, -2.0}, true);
    Adam opt({x}, 0.05);
    for (int step = 0; step < 400; ++step) {
        Tape tape;
        Tape::Scope scope(tape);
        opt.zero_grad();
        tape.backward(sum(mul(x, x)));
        opt.step();
    }
    CHECK(std::abs(x.data()[0]) < 1e-2);
    CHECK(std::abs(x.data()[1]) < 1e-2);
}
