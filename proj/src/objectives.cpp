#include "sibre/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "sibre/errors.hpp"
#include "sibre/metrics.hpp"

namespace sibre::objectives {

namespace {

constexpr double kHingeCap = 1e300;

Tensor unit_valid_tensor(const data::Batch& batch) {
    return Tensor::of({batch.size * batch.units, 1}, batch.unit_valid);
}

// [B, slots] matrix summing per-document unit values, optionally divided by
// the document's unit count.
Tensor doc_reduce_matrix(const data::Batch& batch, bool normalize) {
    const int slots = batch.size * batch.units;
    std::vector<double> w(static_cast<std::size_t>(batch.size) * slots, 0.0);
    for (int d = 0; d < batch.size; ++d)
        for (int u = 0; u < batch.units; ++u) {
            const std::size_t slot = static_cast<std::size_t>(d) * batch.units + u;
            double v = batch.unit_valid[slot];
            if (normalize) v /= std::max(1, batch.n_units[d]);
            w[static_cast<std::size_t>(d) * slots + slot] = v;
        }
    return Tensor::of({batch.size, slots}, std::move(w));
}

std::vector<double> read_column(const Tensor& t) { return t.data(); }

Tensor scalar_const(double v) { return Tensor::of({1, 1}, {v}); }

LossBreakdown assemble(Tensor task, Tensor info, std::vector<double> per_task,
                       std::vector<double> per_info) {
    LossBreakdown out;
    out.total = add(task, info);
    out.total_value = out.total.value();
    out.task_value = task.value();
    out.info_value = info.value();
    out.per_example_task = std::move(per_task);
    out.per_example_info = std::move(per_info);
    return out;
}

// Relaxed-mask norm per unit; the hard-concrete route uses the closed-form
// expected L0 so the norm stays differentiable through rectification.
Tensor norm_per_unit(const data::Batch& batch, const Tensor& mask, const Tensor& logits,
                     const ObjectiveConfig& cfg) {
    if (cfg.distribution == model::MaskDistribution::hard_concrete)
        return mul(dist::expected_l0_hard_concrete_t(logits, cfg.tau, cfg.stretch),
                   unit_valid_tensor(batch));
    return mask; // already zero on PAD slots
}

// Per-document supervised rationale loss over flagged documents; full BCE or
// the positive-only term exactly as printed.
Tensor supervised_term(const data::Batch& batch, const Tensor& logits,
                       const std::vector<double>& use_gold, SemiLossMode mode,
                       std::vector<double>* per_doc_out) {
    const int slots = batch.size * batch.units;
    std::vector<double> weight(static_cast<std::size_t>(slots), 0.0);
    for (int d = 0; d < batch.size; ++d)
        for (int u = 0; u < batch.units; ++u) {
            const std::size_t slot = static_cast<std::size_t>(d) * batch.units + u;
            weight[slot] = use_gold[static_cast<std::size_t>(d)] * batch.unit_valid[slot];
        }
    Tensor w = Tensor::of({slots, 1}, std::move(weight));
    Tensor gold = Tensor::of({slots, 1}, batch.gold_units);
    Tensor theta = sigmoid(logits);

    Tensor nll = scalar_mul(mul(gold, log(theta)), -1.0);
    if (mode == SemiLossMode::full_bce) {
        Tensor one = scalar_const(1.0);
        nll = add(nll, scalar_mul(mul(sub(one, gold), log(sub(one, theta))), -1.0));
    }
    Tensor per_doc = matmul(doc_reduce_matrix(batch, false), mul(nll, w));
    if (per_doc_out) *per_doc_out = read_column(per_doc);
    return per_doc;
}

} // namespace

const char* kind_name(Kind k) {
    switch (k) {
        case Kind::sib: return "sib";
        case Kind::sl0: return "sl0";
        case Kind::sl0c: return "sl0c";
        case Kind::semi: return "semi";
        case Kind::none: return "none";
        case Kind::pipeline: return "pipeline";
    }
    return "?";
}

Kind kind_from_name(const std::string& name) {
    if (name == "sib") return Kind::sib;
    if (name == "sl0") return Kind::sl0;
    if (name == "sl0c") return Kind::sl0c;
    if (name == "semi") return Kind::semi;
    if (name == "none") return Kind::none;
    if (name == "pipeline") return Kind::pipeline;
    fail(ErrorCode::config, "unknown objective '" + name + "'");
}

void ObjectiveConfig::validate() const {
    if (!(pi > 0.0 && pi < 1.0)) fail(ErrorCode::config, "pi must lie in (0,1)");
    if (beta < 0.0 || lambda < 0.0 || gamma < 0.0 || entropy_lambda < 0.0)
        fail(ErrorCode::config, "objective weights must be non-negative");
    if (!(tau > 0.0)) fail(ErrorCode::config, "tau must be positive");
    if (!(supervision_fraction >= 0.0 && supervision_fraction <= 1.0))
        fail(ErrorCode::config, "supervision_fraction must lie in [0,1]");
    if (learnable_pi && kind != Kind::sib)
        fail(ErrorCode::config, "learnable_pi applies to the sib objective only");
    if (kl_series_terms < 1) fail(ErrorCode::config, "kl_series_terms must be >= 1");
    stretch.validate();
}

model::MaskSettings ObjectiveConfig::mask_settings() const {
    model::MaskSettings s;
    s.tau = tau;
    s.distribution = distribution;
    s.noise = noise;
    s.stretch = stretch;
    return s;
}

Tensor task_loss(const Tensor& pred, const data::Batch& batch, bool regression,
                 std::vector<double>* per_example) {
    if (regression) {
        Tensor target = Tensor::of({batch.size, 1}, batch.label_values);
        Tensor diff = sub(pred, target);
        Tensor sq = mul(diff, diff);
        if (per_example) *per_example = read_column(sq);
        return mean(sq);
    }
    const int C = pred.dim(1);
    std::vector<double> onehot(static_cast<std::size_t>(batch.size) * C, 0.0);
    for (int d = 0; d < batch.size; ++d)
        onehot[static_cast<std::size_t>(d) * C + batch.label_ids[static_cast<std::size_t>(d)]] = 1.0;
    Tensor picked = mul(pred, Tensor::of({batch.size, C}, std::move(onehot)));
    if (per_example) {
        per_example->assign(batch.size, 0.0);
        for (int d = 0; d < batch.size; ++d)
            (*per_example)[static_cast<std::size_t>(d)] =
                -pred.data()[static_cast<std::size_t>(d) * C +
                             batch.label_ids[static_cast<std::size_t>(d)]];
    }
    return scalar_mul(sum(picked), -1.0 / batch.size);
}

LossBreakdown loss_sib(const Tensor& pred, const data::Batch& batch, const Tensor& logits,
                       const ObjectiveConfig& cfg) {
    cfg.validate();
    std::vector<double> per_task;
    Tensor task = task_loss(pred, batch, batch.docs[0]->regression, &per_task);

    Tensor theta = sigmoid(logits);
    Tensor kl = mul(dist::kl_bernoulli_t(theta, scalar_const(cfg.pi)), unit_valid_tensor(batch));
    Tensor per_doc = matmul(doc_reduce_matrix(batch, false), kl); // KL summed over units
    Tensor info = scalar_mul(sum(per_doc), cfg.beta / batch.size);

    std::vector<double> per_info = read_column(per_doc);
    for (auto& v : per_info) v *= cfg.beta;
    return assemble(task, info, std::move(per_task), std::move(per_info));
}

LossBreakdown loss_sl0(const Tensor& pred, const data::Batch& batch, const Tensor& mask,
                       const Tensor& logits, const ObjectiveConfig& cfg) {
    cfg.validate();
    std::vector<double> per_task;
    Tensor task = task_loss(pred, batch, batch.docs[0]->regression, &per_task);

    Tensor per_unit = norm_per_unit(batch, mask, logits, cfg);
    Tensor per_doc = matmul(doc_reduce_matrix(batch, true), per_unit); // normalized by n
    Tensor info = scalar_mul(sum(per_doc), cfg.lambda / batch.size);

    std::vector<double> per_info = read_column(per_doc);
    for (auto& v : per_info) v *= cfg.lambda;
    return assemble(task, info, std::move(per_task), std::move(per_info));
}

LossBreakdown loss_sl0c(const Tensor& pred, const data::Batch& batch, const Tensor& mask,
                        const Tensor& logits, const ObjectiveConfig& cfg) {
    cfg.validate();
    std::vector<double> per_task;
    Tensor task = task_loss(pred, batch, batch.docs[0]->regression, &per_task);

    Tensor per_unit = norm_per_unit(batch, mask, logits, cfg);
    Tensor per_doc = matmul(doc_reduce_matrix(batch, true), per_unit);
    Tensor hinge = clamp(sub(per_doc, scalar_const(cfg.pi)), 0.0, kHingeCap);
    Tensor info = scalar_mul(sum(hinge), cfg.lambda / batch.size);

    std::vector<double> per_info = read_column(hinge);
    for (auto& v : per_info) v *= cfg.lambda;
    return assemble(task, info, std::move(per_task), std::move(per_info));
}

LossBreakdown loss_semi(const Tensor& pred, const data::Batch& batch, const Tensor& logits,
                        const std::vector<double>& use_gold, const ObjectiveConfig& cfg) {
    cfg.validate();
    if (static_cast<int>(use_gold.size()) != batch.size)
        fail(ErrorCode::state, "loss_semi: use_gold must have one flag per document");
    std::vector<double> per_task;
    Tensor task = task_loss(pred, batch, batch.docs[0]->regression, &per_task);

    std::vector<double> per_info;
    Tensor per_doc = supervised_term(batch, logits, use_gold, cfg.semi_loss, &per_info);
    Tensor info = scalar_mul(sum(per_doc), cfg.gamma / batch.size);
    for (auto& v : per_info) v *= cfg.gamma;
    return assemble(task, info, std::move(per_task), std::move(per_info));
}

LossBreakdown loss_learnable_pi(const Tensor& pred, const data::Batch& batch, const Tensor& logits,
                                const Tensor& pi_free, const ObjectiveConfig& cfg) {
    cfg.validate();
    if (!cfg.learnable_pi) fail(ErrorCode::config, "loss_learnable_pi requires learnable_pi=true");
    std::vector<double> per_task;
    Tensor task = task_loss(pred, batch, batch.docs[0]->regression, &per_task);

    Tensor pi_t = sigmoid(pi_free); // [1,1]
    Tensor theta = sigmoid(logits);
    Tensor kl = mul(dist::kl_bernoulli_t(theta, pi_t), unit_valid_tensor(batch));
    Tensor per_doc = matmul(doc_reduce_matrix(batch, false), kl);
    Tensor info = add(scalar_mul(sum(per_doc), cfg.beta / batch.size),
                      scalar_mul(sum(pi_t), cfg.entropy_lambda));

    std::vector<double> per_info = read_column(per_doc);
    const double pi_term = cfg.entropy_lambda * pi_t.value();
    for (auto& v : per_info) v = cfg.beta * v + pi_term;
    return assemble(task, info, std::move(per_task), std::move(per_info));
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& p : params) {
        if (!p.requires_grad()) fail(ErrorCode::state, "Adam: parameter without requires_grad");
        slots_.push_back({p, std::vector<double>(p.data().size(), 0.0),
                          std::vector<double>(p.data().size(), 0.0)});
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& slot : slots_) {
        auto& data = slot.param.data();
        const auto& grad = slot.param.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            slot.m[i] = beta1_ * slot.m[i] + (1.0 - beta1_) * grad[i];
            slot.v[i] = beta2_ * slot.v[i] + (1.0 - beta2_) * grad[i] * grad[i];
            data[i] -= lr_ * (slot.m[i] / bc1) / (std::sqrt(slot.v[i] / bc2) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& slot : slots_) slot.param.zero_grad();
}

namespace {

struct ValScore {
    double task = 0.0;
    double iou = 0.0;
    bool has_gold = false;
};

// Early-stopping score, larger is better.
double stop_score(const ValScore& v, bool regression) {
    if (v.has_gold) return v.iou;
    return regression ? -v.task : v.task;
}

std::vector<const data::Document*> doc_ptrs(const std::vector<data::Document>& docs) {
    std::vector<const data::Document*> out;
    out.reserve(docs.size());
    for (const auto& d : docs) out.push_back(&d);
    return out;
}

// Mean sampled-on proportion over the validation set with one mask draw per
// document; log-only diagnostic.
double probe_sparsity(const model::Model& m, const std::vector<data::Document>& docs,
                      const data::Vocab& vocab, const data::LabelMap& labels,
                      const ObjectiveConfig& ocfg, int batch_size, Rng rng) {
    auto stats = metrics::sparsity_stats(m, docs, vocab, labels, ocfg.mask_settings(), 1, rng,
                                         batch_size);
    return stats.mean;
}

} // namespace

TrainResult train(model::Model& m, const std::vector<data::Document>& train_docs,
                  const std::vector<data::Document>& val_docs, const data::Vocab& vocab,
                  const data::LabelMap& labels, const ObjectiveConfig& ocfg,
                  const TrainConfig& tcfg, std::uint64_t seed) {
    ocfg.validate();
    if (train_docs.empty() || val_docs.empty())
        fail(ErrorCode::data, "train: empty train or validation split");
    const auto& mcfg = m.config();

    bool any_gold = false;
    for (const auto& d : train_docs)
        if (!data::gold_token_mask_of(d, mcfg.granularity).empty()) any_gold = true;
    if ((ocfg.kind == Kind::semi || ocfg.kind == Kind::pipeline) && !any_gold)
        fail(ErrorCode::data, std::string(kind_name(ocfg.kind)) +
                                  " training needs gold rationales on the training split");

    // Supervised eligibility: first ceil(f * N) documents by stable id order.
    std::set<std::string> eligible_ids;
    {
        std::vector<std::string> ids;
        ids.reserve(train_docs.size());
        for (const auto& d : train_docs) ids.push_back(d.id);
        std::sort(ids.begin(), ids.end());
        const int take = std::min<int>(
            static_cast<int>(ids.size()),
            static_cast<int>(std::ceil(ocfg.supervision_fraction * ids.size() - 1e-9)));
        eligible_ids.insert(ids.begin(), ids.begin() + take);
    }
    auto doc_eligible = [&](const data::Document& d) {
        return eligible_ids.count(d.id) > 0 &&
               !data::gold_token_mask_of(d, mcfg.granularity).empty();
    };

    Rng shuffle_rng = Rng(seed, "train").split("shuffle");
    Rng noise_rng = Rng(seed, "train").split("noise");
    Rng probe_rng = Rng(seed, "train").split("sparsity-probe");

    Tensor pi_free;
    std::vector<Tensor> stage_params;
    TrainResult result;
    if (ocfg.learnable_pi) {
        pi_free = Tensor::zeros({1, 1}, true); // sigmoid(0) = 0.5
        result.extras.emplace("objective.pi_free", pi_free);
    }

    const auto train_ptrs = doc_ptrs(train_docs);
    const model::MaskSettings sampling = ocfg.mask_settings();

    // Stages: regular objectives run one stage; pipeline trains the explainer
    // on gold masks first, then the predictor on the frozen explainer's
    // top-pi masks.
    struct Stage {
        enum class Mode { joint, explainer_only, predictor_only } mode;
    };
    std::vector<Stage> stages;
    if (ocfg.kind == Kind::pipeline) {
        stages.push_back({Stage::Mode::explainer_only});
        stages.push_back({Stage::Mode::predictor_only});
    } else {
        stages.push_back({Stage::Mode::joint});
    }

    int epoch_counter = 0;
    for (const auto& stage : stages) {
        std::vector<Tensor> params;
        for (auto& [name, t] : m.parameters()) {
            const bool explainer = name.rfind("ex.", 0) == 0;
            if (stage.mode == Stage::Mode::explainer_only && !explainer) continue;
            if (stage.mode == Stage::Mode::predictor_only && explainer) continue;
            params.push_back(t);
        }
        if (stage.mode == Stage::Mode::joint && ocfg.learnable_pi) params.push_back(pi_free);
        Adam opt(params, tcfg.lr);

        double best_score = -1e300;
        int best_epoch = epoch_counter;
        int since_best = 0;
        auto best_snapshot = m.snapshot();
        std::vector<double> best_pi_free;
        if (ocfg.learnable_pi) best_pi_free = pi_free.data();

        std::vector<std::size_t> order(train_ptrs.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
            ++epoch_counter;
            shuffle_rng.shuffle(order);
            std::vector<const data::Document*> shuffled;
            shuffled.reserve(order.size());
            for (auto i : order) shuffled.push_back(train_ptrs[i]);
            const auto batches =
                data::make_batches(shuffled, tcfg.batch_size, vocab, labels, mcfg.granularity);

            double ep_total = 0.0, ep_task = 0.0, ep_info = 0.0;
            int ep_docs = 0;
            for (const auto& batch : batches) {
                const int slots = batch.size * batch.units;
                // Noise drawn unconditionally to keep streams aligned across
                // objective kinds.
                const auto u = model::Model::draw_uniforms(noise_rng, static_cast<std::size_t>(slots));

                std::vector<double> use_gold(batch.size, 0.0);
                bool batch_has_supervision = false;
                for (int d = 0; d < batch.size; ++d) {
                    use_gold[static_cast<std::size_t>(d)] =
                        doc_eligible(*batch.docs[static_cast<std::size_t>(d)]) ? 1.0 : 0.0;
                    batch_has_supervision |= use_gold[static_cast<std::size_t>(d)] > 0.0;
                }
                if (stage.mode == Stage::Mode::explainer_only && !batch_has_supervision) continue;

                Tape tape;
                Tape::Scope scope(tape);
                opt.zero_grad();

                const auto enc = m.encode(batch);
                const Tensor logits = m.explain(enc);
                LossBreakdown breakdown;
                switch (stage.mode) {
                    case Stage::Mode::explainer_only: {
                        std::vector<double> per_info;
                        Tensor per_doc = supervised_term(batch, logits, use_gold,
                                                         SemiLossMode::full_bce, &per_info);
                        Tensor info = scalar_mul(sum(per_doc), 1.0 / batch.size);
                        Tensor zero = Tensor::scalar(0.0);
                        breakdown = assemble(zero, info,
                                             std::vector<double>(batch.size, 0.0),
                                             std::move(per_info));
                        break;
                    }
                    case Stage::Mode::predictor_only: {
                        const Tensor hard = m.infer_masks(logits, batch, ocfg.pi);
                        const Tensor pred = m.predict(enc, hard, batch);
                        std::vector<double> per_task;
                        Tensor task = task_loss(pred, batch, mcfg.regression, &per_task);
                        Tensor zero = Tensor::scalar(0.0);
                        breakdown = assemble(task, zero, std::move(per_task),
                                             std::vector<double>(batch.size, 0.0));
                        break;
                    }
                    case Stage::Mode::joint: {
                        const Tensor mask = m.sample_mask(logits, batch, sampling, u);
                        const Tensor pred = m.predict(enc, mask, batch);
                        switch (ocfg.kind) {
                            case Kind::sib:
                                breakdown = ocfg.learnable_pi
                                                ? loss_learnable_pi(pred, batch, logits, pi_free, ocfg)
                                                : loss_sib(pred, batch, logits, ocfg);
                                break;
                            case Kind::sl0:
                                breakdown = loss_sl0(pred, batch, mask, logits, ocfg);
                                break;
                            case Kind::sl0c:
                                breakdown = loss_sl0c(pred, batch, mask, logits, ocfg);
                                break;
                            case Kind::semi:
                                breakdown = loss_semi(pred, batch, logits, use_gold, ocfg);
                                break;
                            case Kind::none: {
                                std::vector<double> per_task;
                                Tensor task = task_loss(pred, batch, mcfg.regression, &per_task);
                                Tensor zero = Tensor::scalar(0.0);
                                breakdown = assemble(task, zero, std::move(per_task),
                                                     std::vector<double>(batch.size, 0.0));
                                break;
                            }
                            case Kind::pipeline:
                                fail(ErrorCode::state, "pipeline runs staged modes");
                        }
                        break;
                    }
                }

                tape.backward(breakdown.total);
                opt.step();
                ep_total += breakdown.total_value * batch.size;
                ep_task += breakdown.task_value * batch.size;
                ep_info += breakdown.info_value * batch.size;
                ep_docs += batch.size;
            }

            ValScore val;
            const auto eval = metrics::evaluate_model(m, val_docs, vocab, labels, ocfg.pi,
                                                      tcfg.eval_batch_size);
            val.task = eval.task_metric;
            val.iou = eval.iou_f1;
            val.has_gold = eval.gold_doc_count > 0;

            EpochRow row;
            row.epoch = epoch_counter;
            row.total = ep_docs ? ep_total / ep_docs : 0.0;
            row.task = ep_docs ? ep_task / ep_docs : 0.0;
            row.info = ep_docs ? ep_info / ep_docs : 0.0;
            row.val_task = val.task;
            row.val_iou = val.iou;
            row.val_sparsity = probe_sparsity(m, val_docs, vocab, labels, ocfg,
                                              tcfg.eval_batch_size,
                                              probe_rng.split("epoch" + std::to_string(epoch_counter)));
            result.log.push_back(row);

            // Stage-appropriate selection: the predictor stage has a fixed
            // explainer, so IOU is constant and task metric drives stopping.
            double score = stop_score(val, mcfg.regression);
            if (stage.mode == Stage::Mode::predictor_only)
                score = mcfg.regression ? -val.task : val.task;
            if (score > best_score + 1e-12) {
                best_score = score;
                best_epoch = epoch_counter;
                best_snapshot = m.snapshot();
                if (ocfg.learnable_pi) best_pi_free = pi_free.data();
                since_best = 0;
            } else if (++since_best >= tcfg.patience) {
                break;
            }
        }

        m.restore(best_snapshot);
        if (ocfg.learnable_pi) pi_free.data() = best_pi_free;
        result.best_epoch = best_epoch;
    }

    {
        const auto eval = metrics::evaluate_model(m, val_docs, vocab, labels, ocfg.pi,
                                                  tcfg.eval_batch_size);
        result.best_val_iou = eval.iou_f1;
    }
    if (ocfg.learnable_pi) {
        const double p = pi_free.value();
        result.learned_pi = p >= 0.0 ? 1.0 / (1.0 + std::exp(-p)) : std::exp(p) / (1.0 + std::exp(p));
    }
    return result;
}

void write_epoch_log(const std::string& path, const std::vector<EpochRow>& rows) {
    std::ofstream out(path);
    if (!out) fail(ErrorCode::io, "cannot write epoch log " + path);
    out << "epoch\ttotal\ttask\tinfo\tval_task\tval_iou_f1\tval_sparsity\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\n", r.epoch,
                      r.total, r.task, r.info, r.val_task, r.val_iou, r.val_sparsity);
        out << buf;
    }
}

} // namespace sibre::objectives
