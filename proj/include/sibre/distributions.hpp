#pragma once

#include "sibre/tensor.hpp"

namespace sibre::dist {

// Stretch interval for rectified (hard) samples: support is mapped to
// (l0, l1) and clamped back to [0,1], putting point mass at exactly 0 and 1.
struct StretchParams {
    double l0 = -0.1;
    double l1 = 1.1;
    void validate() const;
};

struct KumaParams {
    double a = 1.0;
    double b = 1.0;
    void validate() const;
};

struct BetaParams {
    double alpha = 1.0;
    double beta = 1.0;
    void validate() const;
};

// Binary-concrete noise. `logistic` is the standard two-class Gumbel-Softmax
// reduction, logit + (log u - log(1-u)). `paper_gumbel` adds a single
// Gumbel(0,1) draw to the log-probability instead of the logit.
enum class NoiseMode { logistic, paper_gumbel };

// KL(Bernoulli(theta) || Bernoulli(pi)); both probabilities strictly in (0,1).
double kl_bernoulli(double theta, double pi);

// g = -log(-log u) for u in (0,1).
double gumbel(double u);

// log u - log(1-u) for u in (0,1).
double logistic_noise(double u);

double sample_concrete(double logit, double tau, double u, NoiseMode mode = NoiseMode::logistic);
double sample_hard_concrete(double logit, double tau, double u, const StretchParams& stretch,
                            NoiseMode mode = NoiseMode::logistic);

// P(gate > 0) for the stretched sample: sigmoid(logit - tau * log(-l0/l1)).
// Summed over gates this is the expected L0 norm.
double expected_l0_hard_concrete(double logit, double tau, const StretchParams& stretch);

// Inverse-CDF sample x = (1 - (1-u)^{1/b})^{1/a}.
double sample_kuma(const KumaParams& params, double u);
double kuma_cdf(const KumaParams& params, double x);
double kuma_pdf(const KumaParams& params, double x);
double sample_hard_kuma(const KumaParams& params, double u, const StretchParams& stretch);

// KL(Kumaraswamy(a,b) || Beta(alpha,beta)) via the closed form with the
// infinite series truncated at series_terms (>= 1).
double kl_kuma_beta(const KumaParams& q, const BetaParams& p, int series_terms = 10);

double digamma(double x);
double log_beta(double a, double b);

// Differentiable tensor paths. Noise tensors are constants of the same shape
// as the parameter tensor (or broadcastable to it); gradients flow into the
// parameter arguments only.
Tensor kl_bernoulli_t(const Tensor& theta, const Tensor& pi);
Tensor concrete_sample_t(const Tensor& logits, double tau, const Tensor& u, NoiseMode mode);
Tensor hard_concrete_sample_t(const Tensor& logits, double tau, const Tensor& u,
                              const StretchParams& stretch, NoiseMode mode);
Tensor expected_l0_hard_concrete_t(const Tensor& logits, double tau, const StretchParams& stretch);
Tensor kuma_sample_t(const Tensor& a, const Tensor& b, const Tensor& u);
Tensor hard_kuma_sample_t(const Tensor& a, const Tensor& b, const Tensor& u,
                          const StretchParams& stretch);
// Kumaraswamy sample parameterized by a single logit per gate: a = exp(logit),
// b = 1, which gives mean sigmoid(logit) and keeps gates rankable by logit.
Tensor kuma_sample_from_logits_t(const Tensor& logits, const Tensor& u);
Tensor hard_kuma_sample_from_logits_t(const Tensor& logits, const Tensor& u,
                                      const StretchParams& stretch);

} // namespace sibre::dist
