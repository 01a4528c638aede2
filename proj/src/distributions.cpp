#include "sibre/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sibre/errors.hpp"

namespace sibre::dist {

namespace {

constexpr double kEulerMascheroni = 0.57721566490153286;

void check_open_unit(double v, const char* name) {
    if (!(v > 0.0 && v < 1.0))
        fail(ErrorCode::state, std::string(name) + " must lie strictly in (0,1), got " + std::to_string(v));
}

void check_tau(double tau) {
    if (!(tau > 0.0)) fail(ErrorCode::state, "temperature tau must be positive");
}

double sigmoid_scalar(double x) {
    return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

Tensor const_like(const Tensor& ref, double v) {
    return Tensor::full(std::vector<int>(ref.shape().size(), 1), v);
}

Tensor stretch_and_rectify(const Tensor& base, const StretchParams& stretch) {
    Tensor scaled = scalar_mul(base, stretch.l1 - stretch.l0);
    Tensor shifted = add(scaled, const_like(base, stretch.l0));
    return clamp(shifted, 0.0, 1.0);
}

} // namespace

void StretchParams::validate() const {
    if (!(l0 < 0.0 && l1 > 1.0))
        fail(ErrorCode::state, "stretch params must satisfy l0 < 0 < 1 < l1");
}

void KumaParams::validate() const {
    if (!(a > 0.0 && b > 0.0))
        fail(ErrorCode::state, "Kumaraswamy shape parameters must be positive");
}

void BetaParams::validate() const {
    if (!(alpha > 0.0 && beta > 0.0))
        fail(ErrorCode::state, "Beta shape parameters must be positive");
}

double kl_bernoulli(double theta, double pi) {
    check_open_unit(theta, "theta");
    check_open_unit(pi, "pi");
    return theta * std::log(theta / pi) + (1.0 - theta) * std::log((1.0 - theta) / (1.0 - pi));
}

double gumbel(double u) {
    check_open_unit(u, "u");
    return -std::log(-std::log(u));
}

double logistic_noise(double u) {
    check_open_unit(u, "u");
    return std::log(u) - std::log1p(-u);
}

double sample_concrete(double logit, double tau, double u, NoiseMode mode) {
    check_tau(tau);
    if (mode == NoiseMode::logistic)
        return sigmoid_scalar((logit + logistic_noise(u)) / tau);
    return sigmoid_scalar((std::log(sigmoid_scalar(logit)) + gumbel(u)) / tau);
}

double sample_hard_concrete(double logit, double tau, double u, const StretchParams& stretch,
                            NoiseMode mode) {
    stretch.validate();
    const double h = sample_concrete(logit, tau, u, mode);
    const double stretched = h * (stretch.l1 - stretch.l0) + stretch.l0;
    return std::min(1.0, std::max(0.0, stretched));
}

double expected_l0_hard_concrete(double logit, double tau, const StretchParams& stretch) {
    check_tau(tau);
    stretch.validate();
    return sigmoid_scalar(logit - tau * std::log(-stretch.l0 / stretch.l1));
}

double sample_kuma(const KumaParams& params, double u) {
    params.validate();
    check_open_unit(u, "u");
    return std::pow(1.0 - std::pow(1.0 - u, 1.0 / params.b), 1.0 / params.a);
}

double kuma_cdf(const KumaParams& params, double x) {
    params.validate();
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    return 1.0 - std::pow(1.0 - std::pow(x, params.a), params.b);
}

double kuma_pdf(const KumaParams& params, double x) {
    params.validate();
    if (x <= 0.0 || x >= 1.0) return 0.0;
    const double xa = std::pow(x, params.a);
    return params.a * params.b * std::pow(x, params.a - 1.0) * std::pow(1.0 - xa, params.b - 1.0);
}

double sample_hard_kuma(const KumaParams& params, double u, const StretchParams& stretch) {
    stretch.validate();
    const double x = sample_kuma(params, u);
    const double stretched = x * (stretch.l1 - stretch.l0) + stretch.l0;
    return std::min(1.0, std::max(0.0, stretched));
}

double digamma(double x) {
    if (!(x > 0.0)) fail(ErrorCode::state, "digamma defined here for positive arguments only");
    double result = 0.0;
    while (x < 12.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    // Asymptotic expansion, relative accuracy well below 1e-13 for x >= 12.
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv
            - inv2 * (1.0 / 12.0 -
                      inv2 * (1.0 / 120.0 -
                              inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    return result;
}

double log_beta(double a, double b) {
    return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

namespace {

// Hurwitz zeta for s > 1 via Euler-Maclaurin with a short exact prefix.
double hurwitz_zeta(double s, double q) {
    constexpr int kPrefix = 15;
    double acc = 0.0;
    for (int k = 0; k < kPrefix; ++k) acc += std::pow(q + k, -s);
    const double z = q + kPrefix;
    acc += std::pow(z, 1.0 - s) / (s - 1.0);
    acc += 0.5 * std::pow(z, -s);
    acc += s * std::pow(z, -s - 1.0) / 12.0;
    acc -= s * (s + 1.0) * (s + 2.0) * std::pow(z, -s - 3.0) / 720.0;
    return acc;
}

// Tail of sum_{m>n} b * B(m/a, b) / (m + a*b). The terms decay like
// m^{-(b+1)}, too slowly for plain truncation at small b, so the remainder is
// expanded with the gamma-ratio asymptotic (DLMF 5.11.13/15) and summed in
// closed form through Hurwitz zetas. Absolute error is O(n^{-b-4}).
double kuma_series_tail(double a, double b, int n) {
    const double g1 = -b * (b - 1.0) / 2.0;
    const double g2 = b * (b + 1.0) * (b - 1.0) * (3.0 * b - 2.0) / 24.0;
    const double c1 = a * (g1 - b);
    const double c2 = a * a * (g2 - g1 * b + b * b);
    const double c3 = a * a * a * (-g2 * b + g1 * b * b - b * b * b);
    const double q = n + 1.0;
    const double scale = b * std::exp(std::lgamma(b)) * std::pow(a, b);
    return scale * (hurwitz_zeta(b + 1.0, q) + c1 * hurwitz_zeta(b + 2.0, q) +
                    c2 * hurwitz_zeta(b + 3.0, q) + c3 * hurwitz_zeta(b + 4.0, q));
}

} // namespace

double kl_kuma_beta(const KumaParams& q, const BetaParams& p, int series_terms) {
    q.validate();
    p.validate();
    if (series_terms < 1) fail(ErrorCode::state, "kl_kuma_beta: series_terms must be >= 1");
    const double a = q.a, b = q.b, alpha = p.alpha, beta = p.beta;
    // Exact terms (at least 50 so the asymptotic remainder is deep in its
    // accurate regime), then the closed-form tail.
    const int exact_terms = std::max(series_terms, 50);
    double series = 0.0;
    for (int m = 1; m <= exact_terms; ++m)
        series += b * std::exp(log_beta(static_cast<double>(m) / a, b)) / (m + a * b);
    series += kuma_series_tail(a, b, exact_terms);
    return (a - alpha) / a * (-kEulerMascheroni - digamma(b) - 1.0 / b)
         + std::log(a * b) + log_beta(alpha, beta)
         - (b - 1.0) / b
         + (beta - 1.0) * series;
}

Tensor kl_bernoulli_t(const Tensor& theta, const Tensor& pi) {
    // theta log(theta/pi) + (1-theta) log((1-theta)/(1-pi)), all elementwise.
    Tensor one = const_like(theta, 1.0);
    Tensor omt = sub(one, theta);
    Tensor omp = sub(const_like(pi, 1.0), pi);
    Tensor pos = mul(theta, sub(log(theta), log(pi)));
    Tensor neg = mul(omt, sub(log(omt), log(omp)));
    return add(pos, neg);
}

Tensor concrete_sample_t(const Tensor& logits, double tau, const Tensor& u, NoiseMode mode) {
    check_tau(tau);
    if (mode == NoiseMode::logistic) {
        std::vector<double> noise(u.data().size());
        for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = logistic_noise(u.data()[i]);
        Tensor noise_t = Tensor::of(u.shape(), std::move(noise));
        return sigmoid(scalar_mul(add(logits, noise_t), 1.0 / tau));
    }
    std::vector<double> noise(u.data().size());
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = gumbel(u.data()[i]);
    Tensor noise_t = Tensor::of(u.shape(), std::move(noise));
    return sigmoid(scalar_mul(add(log(sigmoid(logits)), noise_t), 1.0 / tau));
}

Tensor hard_concrete_sample_t(const Tensor& logits, double tau, const Tensor& u,
                              const StretchParams& stretch, NoiseMode mode) {
    stretch.validate();
    return stretch_and_rectify(concrete_sample_t(logits, tau, u, mode), stretch);
}

Tensor expected_l0_hard_concrete_t(const Tensor& logits, double tau, const StretchParams& stretch) {
    check_tau(tau);
    stretch.validate();
    const double shift = tau * std::log(-stretch.l0 / stretch.l1);
    return sigmoid(sub(logits, const_like(logits, shift)));
}

Tensor kuma_sample_t(const Tensor& a, const Tensor& b, const Tensor& u) {
    for (double v : u.data()) check_open_unit(v, "u");
    for (double v : a.data())
        if (!(v > 0.0)) fail(ErrorCode::state, "kuma_sample_t: a must be positive");
    for (double v : b.data())
        if (!(v > 0.0)) fail(ErrorCode::state, "kuma_sample_t: b must be positive");
    // x = exp(log(1 - (1-u)^{1/b}) / a); inner power via exp(log(1-u)/b).
    std::vector<double> log1mu(u.data().size());
    for (std::size_t i = 0; i < log1mu.size(); ++i) log1mu[i] = std::log1p(-u.data()[i]);
    Tensor log1mu_t = Tensor::of(u.shape(), std::move(log1mu));
    Tensor one = const_like(u, 1.0);
    Tensor inner = exp(div(log1mu_t, b));
    return exp(div(log(sub(one, inner)), a));
}

Tensor hard_kuma_sample_t(const Tensor& a, const Tensor& b, const Tensor& u,
                          const StretchParams& stretch) {
    stretch.validate();
    return stretch_and_rectify(kuma_sample_t(a, b, u), stretch);
}

Tensor kuma_sample_from_logits_t(const Tensor& logits, const Tensor& u) {
    // a = exp(logit), b = 1: x = u^{1/a} = exp(log(u) * exp(-logit)).
    for (double v : u.data()) check_open_unit(v, "u");
    std::vector<double> logu(u.data().size());
    for (std::size_t i = 0; i < logu.size(); ++i) logu[i] = std::log(u.data()[i]);
    Tensor logu_t = Tensor::of(u.shape(), std::move(logu));
    return exp(mul(logu_t, exp(scalar_mul(logits, -1.0))));
}

Tensor hard_kuma_sample_from_logits_t(const Tensor& logits, const Tensor& u,
                                      const StretchParams& stretch) {
    stretch.validate();
    return stretch_and_rectify(kuma_sample_from_logits_t(logits, u), stretch);
}

} // namespace sibre::dist
