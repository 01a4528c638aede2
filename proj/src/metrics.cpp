#include "sibre/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "sibre/distributions.hpp"
#include "sibre/errors.hpp"

namespace sibre::metrics {

namespace {

struct Span {
    int start, end; // [start, end)
    int len() const { return end - start; }
};

std::vector<Span> mask_spans(const std::vector<int>& mask) {
    std::vector<Span> spans;
    int i = 0;
    const int n = static_cast<int>(mask.size());
    while (i < n) {
        if (mask[i]) {
            int j = i;
            while (j < n && mask[j]) ++j;
            spans.push_back({i, j});
            i = j;
        } else {
            ++i;
        }
    }
    return spans;
}

double span_iou(const Span& a, const Span& b) {
    const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start));
    const int uni = std::max(a.end, b.end) - std::min(a.start, b.start) -
                    std::max(0, std::max(a.start, b.start) - std::min(a.end, b.end));
    // Disjoint spans: union is sum of lengths, not the hull.
    const int union_tokens = a.len() + b.len() - inter;
    (void)uni;
    return union_tokens == 0 ? 0.0 : static_cast<double>(inter) / union_tokens;
}

double harmonic_f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

} // namespace

Prf iou_f1(const std::vector<int>& pred_tokens, const std::vector<int>& gold_tokens,
           double threshold) {
    if (pred_tokens.size() != gold_tokens.size())
        fail(ErrorCode::state, "iou_f1: mask length mismatch");
    const auto pred = mask_spans(pred_tokens);
    const auto gold = mask_spans(gold_tokens);
    if (pred.empty() && gold.empty()) return {1.0, 1.0, 1.0};
    if (pred.empty() || gold.empty()) return {0.0, 0.0, 0.0};

    int matched_pred = 0;
    for (const auto& p : pred)
        for (const auto& g : gold)
            if (span_iou(p, g) >= threshold) {
                ++matched_pred;
                break;
            }
    int matched_gold = 0;
    for (const auto& g : gold)
        for (const auto& p : pred)
            if (span_iou(p, g) >= threshold) {
                ++matched_gold;
                break;
            }
    Prf out;
    out.precision = static_cast<double>(matched_pred) / pred.size();
    out.recall = static_cast<double>(matched_gold) / gold.size();
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

Prf token_f1(const std::vector<int>& pred_tokens, const std::vector<int>& gold_tokens) {
    if (pred_tokens.size() != gold_tokens.size())
        fail(ErrorCode::state, "token_f1: mask length mismatch");
    int tp = 0, pred_n = 0, gold_n = 0;
    for (std::size_t i = 0; i < pred_tokens.size(); ++i) {
        pred_n += pred_tokens[i] != 0;
        gold_n += gold_tokens[i] != 0;
        tp += pred_tokens[i] != 0 && gold_tokens[i] != 0;
    }
    if (pred_n == 0 && gold_n == 0) return {1.0, 1.0, 1.0};
    Prf out;
    out.precision = pred_n == 0 ? 0.0 : static_cast<double>(tp) / pred_n;
    out.recall = gold_n == 0 ? 0.0 : static_cast<double>(tp) / gold_n;
    out.f1 = harmonic_f1(out.precision, out.recall);
    return out;
}

double weighted_f1(const std::vector<int>& pred_labels, const std::vector<int>& gold_labels,
                   int num_classes) {
    if (pred_labels.size() != gold_labels.size() || pred_labels.empty())
        fail(ErrorCode::state, "weighted_f1: label vectors must be same non-zero length");
    std::vector<double> tp(num_classes, 0.0), fp(num_classes, 0.0), fn(num_classes, 0.0);
    for (std::size_t i = 0; i < pred_labels.size(); ++i) {
        if (pred_labels[i] == gold_labels[i]) tp[gold_labels[i]] += 1.0;
        else {
            fp[pred_labels[i]] += 1.0;
            fn[gold_labels[i]] += 1.0;
        }
    }
    double weighted = 0.0;
    for (int c = 0; c < num_classes; ++c) {
        const double support = tp[c] + fn[c];
        if (support == 0.0) continue;
        const double p = tp[c] + fp[c] == 0.0 ? 0.0 : tp[c] / (tp[c] + fp[c]);
        const double r = tp[c] / support;
        weighted += support / pred_labels.size() * harmonic_f1(p, r);
    }
    return weighted;
}

double mean_squared_error(const std::vector<double>& preds, const std::vector<double>& targets) {
    if (preds.size() != targets.size() || preds.empty())
        fail(ErrorCode::state, "mse: prediction vectors must be same non-zero length");
    double acc = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double d = preds[i] - targets[i];
        acc += d * d;
    }
    return acc / preds.size();
}

std::string MetricsReport::to_json() const {
    nlohmann::ordered_json j;
    j["task_metric"] = task_metric;
    j["iou_f1"] = iou_f1;
    j["token_precision"] = token_precision;
    j["token_recall"] = token_recall;
    j["token_f1"] = token_f1;
    j["sparsity_mean"] = sparsity_mean;
    j["sparsity_var"] = sparsity_var;
    return j.dump();
}

MetricsReport MetricsReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    MetricsReport r;
    r.task_metric = j.at("task_metric").get<double>();
    r.iou_f1 = j.at("iou_f1").get<double>();
    r.token_precision = j.at("token_precision").get<double>();
    r.token_recall = j.at("token_recall").get<double>();
    r.token_f1 = j.at("token_f1").get<double>();
    r.sparsity_mean = j.at("sparsity_mean").get<double>();
    r.sparsity_var = j.at("sparsity_var").get<double>();
    return r;
}

EvalOutputs evaluate_model(const model::Model& m, const std::vector<data::Document>& docs,
                           const data::Vocab& vocab, const data::LabelMap& labels, double pi,
                           int batch_size) {
    EvalOutputs out;
    if (docs.empty()) fail(ErrorCode::state, "evaluate_model: empty document set");
    const auto& cfg = m.config();

    std::vector<const data::Document*> ptrs;
    ptrs.reserve(docs.size());
    for (const auto& d : docs) ptrs.push_back(&d);
    const auto batches = data::make_batches(ptrs, batch_size, vocab, labels, cfg.granularity);

    std::vector<int> gold_label_ids;
    double iou_acc = 0.0, tp_acc = 0.0, tr_acc = 0.0, tf_acc = 0.0;
    for (const auto& batch : batches) {
        const auto enc = m.encode(batch);
        const Tensor logits = m.explain(enc);
        const auto mask_rows = m.infer_mask_rows(logits, batch, pi);
        const Tensor hard = m.infer_masks(logits, batch, pi);
        const Tensor pred = m.predict(enc, hard, batch);
        const auto& pv = pred.data();

        for (int d = 0; d < batch.size; ++d) {
            const data::Document& doc = *batch.docs[static_cast<std::size_t>(d)];
            if (cfg.regression) {
                out.pred_values.push_back(pv[static_cast<std::size_t>(d)]);
            } else {
                int best = 0;
                for (int c = 1; c < cfg.num_classes; ++c)
                    if (pv[static_cast<std::size_t>(d) * cfg.num_classes + c] >
                        pv[static_cast<std::size_t>(d) * cfg.num_classes + best])
                        best = c;
                out.pred_labels.push_back(best);
                gold_label_ids.push_back(batch.label_ids[static_cast<std::size_t>(d)]);
            }
            const auto gold_tokens = data::gold_token_mask_of(doc, cfg.granularity);
            if (!gold_tokens.empty()) {
                const auto pred_tokens = data::expand_unit_mask_to_tokens(
                    doc, mask_rows[static_cast<std::size_t>(d)], cfg.granularity);
                const Prf iou = iou_f1(pred_tokens, gold_tokens);
                const Prf tok = token_f1(pred_tokens, gold_tokens);
                iou_acc += iou.f1;
                tp_acc += tok.precision;
                tr_acc += tok.recall;
                tf_acc += tok.f1;
                ++out.gold_doc_count;
            }
        }
    }

    if (cfg.regression) {
        std::vector<double> targets;
        targets.reserve(docs.size());
        for (const auto& d : docs) targets.push_back(d.label_value);
        out.task_metric = mean_squared_error(out.pred_values, targets);
    } else {
        out.task_metric = weighted_f1(out.pred_labels, gold_label_ids, cfg.num_classes);
    }
    if (out.gold_doc_count > 0) {
        out.iou_f1 = iou_acc / out.gold_doc_count;
        out.token_precision = tp_acc / out.gold_doc_count;
        out.token_recall = tr_acc / out.gold_doc_count;
        out.token_f1 = tf_acc / out.gold_doc_count;
    }
    return out;
}

SparsityStats sparsity_stats(const model::Model& m, const std::vector<data::Document>& docs,
                             const data::Vocab& vocab, const data::LabelMap& labels,
                             const model::MaskSettings& settings, int runs, Rng& rng,
                             int batch_size) {
    if (runs < 1) fail(ErrorCode::state, "sparsity_stats: runs must be >= 1");
    std::vector<const data::Document*> ptrs;
    ptrs.reserve(docs.size());
    for (const auto& d : docs) ptrs.push_back(&d);
    const auto batches = data::make_batches(ptrs, batch_size, vocab, labels, m.config().granularity);

    double sum_prop = 0.0, sum_count = 0.0, sum_count2 = 0.0;
    std::int64_t samples = 0;
    for (const auto& batch : batches) {
        const auto enc = m.encode(batch);
        const Tensor logits = m.explain(enc); // fixed across runs
        const int slots = batch.size * batch.units;
        for (int run = 0; run < runs; ++run) {
            const auto u = model::Model::draw_uniforms(rng, static_cast<std::size_t>(slots));
            const Tensor mask = m.sample_mask(logits, batch, settings, u);
            const auto& mv = mask.data();
            for (int d = 0; d < batch.size; ++d) {
                double count = 0.0;
                for (int j = 0; j < batch.n_units[d]; ++j)
                    count += mv[static_cast<std::size_t>(d) * batch.units + j] > 0.5 ? 1.0 : 0.0;
                sum_prop += count / batch.n_units[d];
                sum_count += count;
                sum_count2 += count * count;
                ++samples;
            }
        }
    }
    SparsityStats stats;
    stats.mean = sum_prop / samples;
    const double mean_count = sum_count / samples;
    stats.var = sum_count2 / samples - mean_count * mean_count;
    return stats;
}

void ToyJoint::validate() const {
    if (px.empty() || px.size() > 16)
        fail(ErrorCode::state, "ToyJoint: need 1..16 symbols");
    if (theta.size() != px.size())
        fail(ErrorCode::state, "ToyJoint: theta size must match px");
    double total = 0.0;
    for (double p : px) {
        if (!(p > 0.0)) fail(ErrorCode::state, "ToyJoint: symbol probabilities must be positive");
        total += p;
    }
    if (std::abs(total - 1.0) > 1e-9) fail(ErrorCode::state, "ToyJoint: px must sum to 1");
    for (double t : theta)
        if (!(t > 0.0 && t < 1.0)) fail(ErrorCode::state, "ToyJoint: theta must lie in (0,1)");
    if (!(prior_pi > 0.0 && prior_pi < 1.0))
        fail(ErrorCode::state, "ToyJoint: prior must lie in (0,1)");
    if (!symbols.empty()) {
        if (symbols.size() != px.size())
            fail(ErrorCode::state, "ToyJoint: symbol codes must match px");
        std::vector<std::int64_t> sorted = symbols;
        std::sort(sorted.begin(), sorted.end());
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (sorted[i] == 0)
                fail(ErrorCode::state, "ToyJoint: symbol code 0 collides with the dropped encoding");
            if (i > 0 && sorted[i] == sorted[i - 1])
                fail(ErrorCode::state, "ToyJoint: overlapping z encodings for distinct symbols");
        }
    }
}

IbReport ib_verify(const ToyJoint& joint) {
    joint.validate();
    const std::size_t K = joint.px.size();
    const double pi = joint.prior_pi;

    // Marginal over z: z = 0 when dropped, the symbol itself otherwise.
    double pz0 = 0.0;
    for (std::size_t i = 0; i < K; ++i) pz0 += joint.px[i] * (1.0 - joint.theta[i]);

    IbReport rep;
    for (std::size_t i = 0; i < K; ++i) {
        const double p = joint.px[i];
        const double th = joint.theta[i];
        // Exact mutual information term; p(z = symbol_i) = p * theta_i.
        rep.mi += p * ((1.0 - th) * std::log((1.0 - th) / pz0) + th * std::log(1.0 / p));
        // Variational bound term with r(z=0) = 1-pi, r(z = symbol_i) = pi * p.
        const double kl_zx = (1.0 - th) * std::log((1.0 - th) / (1.0 - pi)) +
                             th * std::log(th / (pi * p));
        rep.bound += p * kl_zx;
        const double decomposed = dist::kl_bernoulli(th, pi) - th * std::log(p);
        rep.residual = std::max(rep.residual, std::abs(kl_zx - decomposed));
    }
    return rep;
}

} // namespace sibre::metrics
