#include "sibre/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "sibre/data.hpp"
#include "sibre/distributions.hpp"
#include "sibre/errors.hpp"
#include "sibre/model.hpp"
#include "sibre/objectives.hpp"
#include "sibre/rng.hpp"
#include "sibre/tensor.hpp"

namespace sibre::gradcheck {

namespace {

constexpr double kPrimitiveTol = 1e-4;
constexpr double kLossTol = 1e-3;

Tensor random_tensor(Rng& rng, std::vector<int> shape, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.data()) v = lo + (hi - lo) * rng.uniform();
    return t;
}

Tensor random_const(Rng& rng, std::vector<int> shape) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data()) v = -1.0 + 2.0 * rng.uniform();
    return t;
}

// Weighted full reduction so per-coordinate gradient errors cannot cancel.
Tensor weigh(const Tensor& t, const Tensor& weights) { return sum(mul(t, weights)); }

} // namespace

void Report::add(std::string name, double error, double threshold) {
    rows.push_back({std::move(name), error, threshold, error < threshold});
    all_pass = all_pass && rows.back().pass;
}

void Report::merge(const Report& other) {
    rows.insert(rows.end(), other.rows.begin(), other.rows.end());
    all_pass = all_pass && other.all_pass;
}

Report check_primitives(std::uint64_t seed) {
    Report rep;
    Rng rng(seed, "gradcheck-primitives");

    {
        Tensor b = random_const(rng, {5, 3});
        Tensor w = random_const(rng, {4, 3});
        rep.add("matmul(lhs)", grad_check([&](const Tensor& x) { return weigh(matmul(x, b), w); },
                                          random_tensor(rng, {4, 5}, -1.0, 1.0)),
                kPrimitiveTol);
        Tensor a = random_const(rng, {4, 5});
        rep.add("matmul(rhs)", grad_check([&](const Tensor& x) { return weigh(matmul(a, x), w); },
                                          random_tensor(rng, {5, 3}, -1.0, 1.0)),
                kPrimitiveTol);
    }

    struct Binary {
        const char* name;
        Tensor (*op)(const Tensor&, const Tensor&);
    };
    for (const Binary bin : {Binary{"add", add}, Binary{"sub", sub}, Binary{"mul", mul}}) {
        Tensor other = random_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = random_const(rng, {3, 4});
        rep.add(std::string(bin.name) + "(lhs)",
                grad_check([&](const Tensor& x) { return weigh(bin.op(x, other), w); },
                           random_tensor(rng, {3, 4}, -1.0, 1.0)),
                kPrimitiveTol);
        rep.add(std::string(bin.name) + "(bcast)",
                grad_check([&](const Tensor& x) { return weigh(bin.op(other, x), w); },
                           random_tensor(rng, {3, 1}, -1.0, 1.0)),
                kPrimitiveTol);
    }
    {
        Tensor denom = random_tensor(rng, {3, 4}, 0.7, 1.9);
        Tensor w = random_const(rng, {3, 4});
        rep.add("div(lhs)", grad_check([&](const Tensor& x) { return weigh(div(x, denom), w); },
                                       random_tensor(rng, {3, 4}, -1.0, 1.0)),
                kPrimitiveTol);
        Tensor numer = random_const(rng, {3, 4});
        rep.add("div(rhs)", grad_check([&](const Tensor& x) { return weigh(div(numer, x), w); },
                                       random_tensor(rng, {3, 4}, 0.7, 1.9)),
                kPrimitiveTol);
    }

    struct Unary {
        const char* name;
        Tensor (*op)(const Tensor&);
        double lo, hi;
    };
    for (const Unary un : {Unary{"sigmoid", sigmoid, -3.0, 3.0}, Unary{"tanh", tanh, -2.0, 2.0},
                           Unary{"exp", exp, -1.5, 1.5}, Unary{"log", log, 0.4, 2.5},
                           Unary{"softmax", softmax, -2.0, 2.0},
                           Unary{"log_softmax", log_softmax, -2.0, 2.0}}) {
        Tensor w = random_const(rng, {2, 3, 4});
        rep.add(un.name, grad_check([&](const Tensor& x) { return weigh(un.op(x), w); },
                                    random_tensor(rng, {2, 3, 4}, un.lo, un.hi)),
                kPrimitiveTol);
    }

    rep.add("scalar_mul",
            grad_check([&](const Tensor& x) { return sum(scalar_mul(x, -1.7)); },
                       random_tensor(rng, {3, 4}, -1.0, 1.0)),
            kPrimitiveTol);
    rep.add("mean", grad_check([](const Tensor& x) { return mean(x); },
                               random_tensor(rng, {2, 3, 4}, -1.0, 1.0)),
            kPrimitiveTol);
    rep.add("sum", grad_check([](const Tensor& x) { return sum(x); },
                              random_tensor(rng, {2, 3, 4}, -1.0, 1.0)),
            kPrimitiveTol);
    for (int axis : {0, 1, 2}) {
        Tensor shape_w = random_const(rng, axis == 0 ? std::vector<int>{3, 4}
                                      : axis == 1    ? std::vector<int>{2, 4}
                                                     : std::vector<int>{2, 3});
        rep.add("sum(axis=" + std::to_string(axis) + ")",
                grad_check([&](const Tensor& x) { return weigh(sum(x, axis), shape_w); },
                           random_tensor(rng, {2, 3, 4}, -1.0, 1.0)),
                kPrimitiveTol);
    }
    {
        Tensor left = random_tensor(rng, {3, 2}, -1.0, 1.0);
        Tensor right = random_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = random_const(rng, {3, 9});
        rep.add("concat",
                grad_check(
                    [&](const Tensor& x) { return weigh(concat({left, x, right}), w); },
                    random_tensor(rng, {3, 3}, -1.0, 1.0)),
                kPrimitiveTol);
    }
    {
        // Keep samples away from the clamp kinks so central differences see a
        // locally smooth function.
        Tensor x = random_tensor(rng, {4, 4}, -2.0, 2.0);
        for (auto& v : x.data())
            if (std::abs(std::abs(v) - 1.0) < 0.05) v += 0.1;
        Tensor w = random_const(rng, {4, 4});
        rep.add("clamp", grad_check([&](const Tensor& t) { return weigh(clamp(t, -1.0, 1.0), w); }, x),
                kPrimitiveTol);
    }
    {
        Tensor w = random_const(rng, {5, 3});
        std::vector<std::int64_t> ids{0, 4, 2, 4, 6};
        rep.add("embedding_lookup",
                grad_check([&](const Tensor& t) { return weigh(embedding_lookup(t, ids), w); },
                           random_tensor(rng, {7, 3}, -1.0, 1.0)),
                kPrimitiveTol);
    }

    // Reparameterized samplers with frozen noise.
    {
        Tensor u = Tensor::zeros({5, 1});
        for (auto& v : u.data()) v = 0.1 + 0.8 * rng.uniform();
        Tensor w = random_const(rng, {5, 1});
        dist::StretchParams stretch;
        rep.add("sample_concrete",
                grad_check(
                    [&](const Tensor& l) {
                        return weigh(dist::concrete_sample_t(l, 0.7, u, dist::NoiseMode::logistic), w);
                    },
                    random_tensor(rng, {5, 1}, -2.0, 2.0)),
                kPrimitiveTol);
        rep.add("sample_concrete(paper_gumbel)",
                grad_check(
                    [&](const Tensor& l) {
                        return weigh(dist::concrete_sample_t(l, 0.7, u, dist::NoiseMode::paper_gumbel), w);
                    },
                    random_tensor(rng, {5, 1}, -2.0, 2.0)),
                kPrimitiveTol);
        // Logits picked so the stretched samples sit clear of the 0/1 kinks.
        Tensor hc_logits = Tensor::zeros({5, 1}, true);
        for (auto& v : hc_logits.data()) {
            double logit, sample;
            do {
                logit = -2.0 + 4.0 * rng.uniform();
                sample = dist::sample_hard_concrete(logit, 0.7, 0.5, stretch);
            } while (std::abs(sample) < 1e-3 || std::abs(sample - 1.0) < 1e-3);
            v = logit;
        }
        Tensor u_mid = Tensor::full({5, 1}, 0.5);
        rep.add("sample_hard_concrete",
                grad_check(
                    [&](const Tensor& l) {
                        return weigh(dist::hard_concrete_sample_t(l, 0.7, u_mid, stretch,
                                                                  dist::NoiseMode::logistic),
                                     w);
                    },
                    hc_logits),
                kPrimitiveTol);
        rep.add("expected_l0_hard_concrete",
                grad_check(
                    [&](const Tensor& l) {
                        return weigh(dist::expected_l0_hard_concrete_t(l, 0.7, stretch), w);
                    },
                    random_tensor(rng, {5, 1}, -2.0, 2.0)),
                kPrimitiveTol);
        Tensor ka = random_tensor(rng, {5, 1}, 0.5, 2.5);
        Tensor kb = random_tensor(rng, {5, 1}, 0.5, 2.5);
        rep.add("sample_kuma(a)",
                grad_check([&](const Tensor& a) { return weigh(dist::kuma_sample_t(a, kb, u), w); }, ka),
                kPrimitiveTol);
        rep.add("sample_kuma(b)",
                grad_check([&](const Tensor& b) { return weigh(dist::kuma_sample_t(ka, b, u), w); }, kb),
                kPrimitiveTol);
        rep.add("sample_kuma(logit)",
                grad_check(
                    [&](const Tensor& l) { return weigh(dist::kuma_sample_from_logits_t(l, u), w); },
                    random_tensor(rng, {5, 1}, -2.0, 2.0)),
                kPrimitiveTol);
        Tensor hk_logits = Tensor::zeros({5, 1}, true);
        Tensor hk_u = Tensor::zeros({5, 1});
        for (std::size_t i = 0; i < hk_logits.data().size(); ++i) {
            double logit, uv, sample;
            do {
                logit = -2.0 + 4.0 * rng.uniform();
                uv = 0.1 + 0.8 * rng.uniform();
                sample = dist::sample_hard_kuma({std::exp(logit), 1.0}, uv, stretch);
            } while (std::abs(sample) < 1e-3 || std::abs(sample - 1.0) < 1e-3);
            hk_logits.data()[i] = logit;
            hk_u.data()[i] = uv;
        }
        rep.add("sample_hard_kuma",
                grad_check(
                    [&](const Tensor& l) {
                        return weigh(dist::hard_kuma_sample_from_logits_t(l, hk_u, stretch), w);
                    },
                    hk_logits),
                kPrimitiveTol);
    }
    return rep;
}

namespace {

struct LossFixture {
    data::Splits splits;
    data::Vocab vocab;
    data::LabelMap labels;
    data::Batch batch;
    model::Model net;
    std::vector<double> noise;

    static LossFixture make(std::uint64_t seed) {
        data::SynthSpec spec;
        spec.n_sentences = 3;
        spec.sentence_len = 3;
        spec.signal_fraction = 0.34;
        spec.vocab_size = 40;
        spec.num_train = 4;
        spec.num_val = 2;
        spec.num_test = 2;
        spec.seed = seed;
        data::Splits splits = data::generate(spec);
        data::Vocab vocab = data::Vocab::build(splits.train);
        data::LabelMap labels = data::LabelMap::build(splits.train);

        model::ModelConfig mcfg;
        mcfg.vocab_size = static_cast<int>(vocab.size());
        mcfg.embed_dim = 5;
        mcfg.hidden_dim = 6;
        mcfg.num_classes = std::max(2, labels.size());

        std::vector<const data::Document*> ptrs;
        for (const auto& d : splits.train) ptrs.push_back(&d);
        data::Batch batch = data::make_batch(ptrs, vocab, labels, data::Granularity::sentence);

        Rng noise_rng(seed, "gradcheck-noise");
        auto noise = model::Model::draw_uniforms(
            noise_rng, static_cast<std::size_t>(batch.size) * batch.units);
        return LossFixture{std::move(splits), std::move(vocab), std::move(labels),
                           std::move(batch), model::Model(mcfg, seed), std::move(noise)};
    }
};

} // namespace

Report check_losses(std::uint64_t seed) {
    Report rep;
    LossFixture fx = LossFixture::make(seed);
    Tensor pi_free = Tensor::of({1, 1}, {0.3}, true);
    const std::vector<double> use_gold(fx.batch.size, 1.0);

    struct Case {
        const char* name;
        objectives::Kind kind;
        model::MaskDistribution distribution;
        bool learnable;
    };
    const std::vector<Case> cases{
        {"sib", objectives::Kind::sib, model::MaskDistribution::concrete, false},
        {"sl0", objectives::Kind::sl0, model::MaskDistribution::concrete, false},
        {"sl0(hard_concrete)", objectives::Kind::sl0, model::MaskDistribution::hard_concrete, false},
        {"sl0c", objectives::Kind::sl0c, model::MaskDistribution::concrete, false},
        {"semi", objectives::Kind::semi, model::MaskDistribution::concrete, false},
        {"learnable_pi", objectives::Kind::sib, model::MaskDistribution::concrete, true},
    };

    for (const auto& kase : cases) {
        objectives::ObjectiveConfig ocfg;
        ocfg.kind = kase.kind;
        ocfg.distribution = kase.distribution;
        ocfg.learnable_pi = kase.learnable;
        ocfg.pi = 0.3;

        auto loss_value = [&]() {
            const auto enc = fx.net.encode(fx.batch);
            const Tensor logits = fx.net.explain(enc);
            const Tensor mask = fx.net.sample_mask(logits, fx.batch, ocfg.mask_settings(), fx.noise);
            const Tensor pred = fx.net.predict(enc, mask, fx.batch);
            objectives::LossBreakdown b;
            switch (kase.kind) {
                case objectives::Kind::sib:
                    b = kase.learnable
                            ? objectives::loss_learnable_pi(pred, fx.batch, logits, pi_free, ocfg)
                            : objectives::loss_sib(pred, fx.batch, logits, ocfg);
                    break;
                case objectives::Kind::sl0:
                    b = objectives::loss_sl0(pred, fx.batch, mask, logits, ocfg);
                    break;
                case objectives::Kind::sl0c:
                    b = objectives::loss_sl0c(pred, fx.batch, mask, logits, ocfg);
                    break;
                case objectives::Kind::semi:
                    b = objectives::loss_semi(pred, fx.batch, logits, use_gold, ocfg);
                    break;
                default:
                    fail(ErrorCode::state, "unexpected kind");
            }
            return b.total;
        };

        for (auto& [pname, ptensor] : fx.net.parameters()) {
            const double err =
                grad_check([&](const Tensor&) { return loss_value(); }, ptensor, 1e-5);
            rep.add(std::string(kase.name) + " d/d " + pname, err, kLossTol);
        }
        if (kase.learnable) {
            const double err = grad_check([&](const Tensor&) { return loss_value(); }, pi_free, 1e-5);
            rep.add(std::string(kase.name) + " d/d objective.pi_free", err, kLossTol);
        }
    }
    return rep;
}

Report run_all(std::uint64_t seed) {
    Report rep = check_primitives(seed);
    rep.merge(check_losses(seed));
    return rep;
}

} // namespace sibre::gradcheck
