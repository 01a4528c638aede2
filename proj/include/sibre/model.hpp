#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sibre/data.hpp"
#include "sibre/distributions.hpp"
#include "sibre/rng.hpp"
#include "sibre/tensor.hpp"

namespace sibre::model {

enum class MaskDistribution { concrete, hard_concrete, kuma, hard_kuma };

const char* mask_distribution_name(MaskDistribution d);
MaskDistribution mask_distribution_from_name(const std::string& name);

struct ModelConfig {
    int vocab_size = 0;
    int embed_dim = 64;
    int hidden_dim = 64;
    data::Granularity granularity = data::Granularity::sentence;
    int num_classes = 2;
    bool regression = false;
    bool has_query = false;

    int output_dim() const { return regression ? 1 : num_classes; }
    void validate() const;
};

struct MaskSettings {
    double tau = 0.7;
    MaskDistribution distribution = MaskDistribution::concrete;
    dist::NoiseMode noise = dist::NoiseMode::logistic;
    dist::StretchParams stretch;
};

// Deterministic top-k selection: k = clamp(ceil(pi * n), 1, n) with ties
// broken toward the lower unit index.
std::vector<int> infer_mask(const std::vector<double>& probs, double pi);
int budget_k(double pi, int n);

// Explainer + end-task predictor over batches. The two sides hold disjoint
// parameter sets; the predictor's unit representations depend only on the
// unit's own tokens, which is what makes hard-masked-out content contribute
// exactly nothing to predictions.
class Model {
public:
    Model(ModelConfig config, std::uint64_t seed);

    struct Encoded {
        Tensor ex_units; // [slots, 2H] (+H with query): unit rep ++ doc mean (++ query)
        Tensor pr_units; // [slots, H], strictly per-unit
        Tensor ex_query; // [B, H] when the model uses queries
        Tensor pr_query;
    };

    Encoded encode(const data::Batch& batch) const;

    // Per-slot Bernoulli logits, clamped to |l| <= 15. PAD slots carry the
    // head bias; consumers mask them by unit validity.
    Tensor explain(const Encoded& enc) const;

    // Relaxed mask in [0,1], exactly 0 on PAD slots. `u` holds one uniform
    // draw per slot; see draw_uniforms.
    Tensor sample_mask(const Tensor& logits, const data::Batch& batch,
                       const MaskSettings& settings, const std::vector<double>& u) const;
    static std::vector<double> draw_uniforms(Rng& rng, std::size_t count);

    // Hard top-pi masks per document, flattened to a constant [slots,1] tensor.
    Tensor infer_masks(const Tensor& logits, const data::Batch& batch, double pi) const;
    std::vector<std::vector<int>> infer_mask_rows(const Tensor& logits, const data::Batch& batch,
                                                  double pi) const;

    // Class log-probabilities [B, C] or regression output [B, 1]. Depends on
    // unit content only through mask-weighted unit reps summed / n.
    Tensor predict(const Encoded& enc, const Tensor& mask, const data::Batch& batch) const;

    const ModelConfig& config() const { return config_; }
    std::vector<std::pair<std::string, Tensor>>& parameters() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor param(const std::string& name) const;

    std::vector<std::vector<double>> snapshot() const;
    void restore(const std::vector<std::vector<double>>& snap);

private:
    Tensor unit_reps(const std::string& prefix, const data::Batch& batch) const;
    Tensor query_rep(const std::string& prefix, const data::Batch& batch) const;

    ModelConfig config_;
    std::vector<std::pair<std::string, Tensor>> params_;
};

// Flat text checkpoint: config header plus named tensors in hexfloat, exact
// across save/load. `extras` carries objective-owned tensors such as the
// learnable-prior parameter.
void save_checkpoint(const std::string& path, const Model& model,
                     const std::map<std::string, Tensor>& extras = {});
struct Checkpoint {
    Model model;
    std::map<std::string, Tensor> extras;
};
Checkpoint load_checkpoint(const std::string& path);

} // namespace sibre::model
