#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sibre/data.hpp"
#include "sibre/model.hpp"
#include "sibre/rng.hpp"

namespace sibre::metrics {

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Span-level agreement: spans are maximal runs of 1s; a span matches when its
// token IOU with some opposite-side span reaches the threshold. Both masks
// empty scores 1, exactly one empty scores 0.
Prf iou_f1(const std::vector<int>& pred_tokens, const std::vector<int>& gold_tokens,
           double threshold = 0.1);

Prf token_f1(const std::vector<int>& pred_tokens, const std::vector<int>& gold_tokens);

double weighted_f1(const std::vector<int>& pred_labels, const std::vector<int>& gold_labels,
                   int num_classes);
double mean_squared_error(const std::vector<double>& preds, const std::vector<double>& targets);

struct MetricsReport {
    double task_metric = 0.0; // weighted F1, or MSE for regression
    double iou_f1 = 0.0;
    double token_precision = 0.0;
    double token_recall = 0.0;
    double token_f1 = 0.0;
    double sparsity_mean = 0.0; // proportion of units sampled on
    double sparsity_var = 0.0;  // variance of the on-unit count

    std::string to_json() const;
    static MetricsReport from_json(const std::string& text);
};

struct EvalOutputs {
    double task_metric = 0.0;
    double iou_f1 = 0.0;
    double token_precision = 0.0, token_recall = 0.0, token_f1 = 0.0;
    int gold_doc_count = 0;
    std::vector<int> pred_labels;
    std::vector<double> pred_values;
};

// Deterministic top-pi evaluation over a document set. Rationale metrics are
// macro-averaged over documents that carry gold annotations.
EvalOutputs evaluate_model(const model::Model& m, const std::vector<data::Document>& docs,
                           const data::Vocab& vocab, const data::LabelMap& labels, double pi,
                           int batch_size = 32);

struct SparsityStats {
    double mean = 0.0;
    double var = 0.0;
};

// Training-mode sampling statistics: a unit counts as on when its relaxed
// value exceeds 0.5. Mean is averaged as a proportion over (document, run)
// pairs; variance is the population variance of the on-unit count.
SparsityStats sparsity_stats(const model::Model& m, const std::vector<data::Document>& docs,
                             const data::Vocab& vocab, const data::LabelMap& labels,
                             const model::MaskSettings& settings, int runs, Rng& rng,
                             int batch_size = 32);

// Finite joint over X (at most 16 symbols) with per-symbol inclusion
// probabilities; the masked variable z takes value 0 (dropped) or the
// symbol's code.
struct ToyJoint {
    std::vector<double> px;            // sums to 1
    std::vector<double> theta;         // inclusion probability per symbol
    double prior_pi = 0.3;
    std::vector<std::int64_t> symbols; // distinct nonzero codes; default 1..K

    void validate() const;
};

struct IbReport {
    double mi = 0.0;       // I(Z;X) by exact enumeration, nats
    double bound = 0.0;    // E_x[ KL(p(z|x) || r(z)) ]
    double residual = 0.0; // max | KL(p(z|x),r(z)) - (KL(p(m|x),r(m)) - theta log p(x)) |
};

IbReport ib_verify(const ToyJoint& joint);

} // namespace sibre::metrics
