#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sibre/data.hpp"
#include "sibre/distributions.hpp"
#include "sibre/model.hpp"
#include "sibre/tensor.hpp"

namespace sibre::objectives {

enum class Kind { sib, sl0, sl0c, semi, none, pipeline };

const char* kind_name(Kind k);
Kind kind_from_name(const std::string& name);

enum class SemiLossMode { full_bce, paper_positive_only };

struct ObjectiveConfig {
    Kind kind = Kind::sib;
    double pi = 0.2;     // prior inclusion probability / inference budget
    double beta = 1.0;   // weight on the KL information loss
    double lambda = 1.0; // weight on norm penalties
    double gamma = 1.0;  // weight on the supervised rationale loss
    double tau = 0.7;    // concrete temperature
    double entropy_lambda = 10.0; // constant standing for H(x) in the learnable-pi variant
    bool learnable_pi = false;
    SemiLossMode semi_loss = SemiLossMode::full_bce;
    double supervision_fraction = 1.0;
    model::MaskDistribution distribution = model::MaskDistribution::concrete;
    dist::NoiseMode noise = dist::NoiseMode::logistic;
    dist::StretchParams stretch;
    int kl_series_terms = 10;

    void validate() const;
    model::MaskSettings mask_settings() const;
};

// total == task + info exactly; info carries its objective weight already.
struct LossBreakdown {
    Tensor total;
    double total_value = 0.0;
    double task_value = 0.0;
    double info_value = 0.0;
    std::vector<double> per_example_task;
    std::vector<double> per_example_info;
};

// Task term: mean cross-entropy from log-probabilities, or mean squared
// error for regression batches.
Tensor task_loss(const Tensor& pred, const data::Batch& batch, bool regression,
                 std::vector<double>* per_example = nullptr);

LossBreakdown loss_sib(const Tensor& pred, const data::Batch& batch, const Tensor& logits,
                       const ObjectiveConfig& cfg);
LossBreakdown loss_sl0(const Tensor& pred, const data::Batch& batch, const Tensor& mask,
                       const Tensor& logits, const ObjectiveConfig& cfg);
LossBreakdown loss_sl0c(const Tensor& pred, const data::Batch& batch, const Tensor& mask,
                        const Tensor& logits, const ObjectiveConfig& cfg);
// use_gold flags the documents whose gold mask participates (supervision
// fraction and gold availability combined); others see task loss only.
LossBreakdown loss_semi(const Tensor& pred, const data::Batch& batch, const Tensor& logits,
                        const std::vector<double>& use_gold, const ObjectiveConfig& cfg);
LossBreakdown loss_learnable_pi(const Tensor& pred, const data::Batch& batch, const Tensor& logits,
                                const Tensor& pi_free, const ObjectiveConfig& cfg);

class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void step();
    void zero_grad();

private:
    struct Slot {
        Tensor param;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
};

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 32;
    int epochs = 50;
    int patience = 10; // epochs without val improvement before stopping
    int eval_batch_size = 64;
};

struct EpochRow {
    int epoch = 0;
    double total = 0.0, task = 0.0, info = 0.0;
    double val_task = 0.0, val_iou = 0.0, val_sparsity = 0.0;
};

struct TrainResult {
    std::vector<EpochRow> log;
    int best_epoch = 0;
    double best_val_iou = 0.0;
    std::optional<double> learned_pi;
    std::map<std::string, Tensor> extras; // checkpoint payload beyond model params
};

// Full training run: Adam, per-epoch validation, early stopping with patience
// on validation IOU F1 (task metric when the validation set has no gold),
// best-epoch parameters restored on return. Deterministic given the seed.
TrainResult train(model::Model& m, const std::vector<data::Document>& train_docs,
                  const std::vector<data::Document>& val_docs, const data::Vocab& vocab,
                  const data::LabelMap& labels, const ObjectiveConfig& ocfg,
                  const TrainConfig& tcfg, std::uint64_t seed);

void write_epoch_log(const std::string& path, const std::vector<EpochRow>& rows);

} // namespace sibre::objectives
