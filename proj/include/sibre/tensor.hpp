#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace sibre {

// Dense tensor of 64-bit reals, rank 1..3, with reverse-mode autodiff via an
// explicit tape. Tensor is a cheap shared handle; copying it aliases storage.
// Gradients live next to the data and accumulate additively, so zero them
// explicitly between steps.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor of(std::vector<int> shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    int dim(int axis) const { return shape()[static_cast<std::size_t>(axis)]; }
    std::int64_t numel() const;
    bool is_scalar() const { return numel() == 1; }

    std::vector<double>& data();
    const std::vector<double>& data() const;
    double value() const; // scalar tensors only

    bool requires_grad() const;
    // Marks the tensor as a gradient sink and allocates a zeroed grad buffer.
    void set_requires_grad();
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

private:
    struct Impl {
        std::vector<int> shape;
        std::vector<double> data;
        bool requires_grad = false;
        std::vector<double> grad;
    };

    std::shared_ptr<Impl> impl_;
};

// Records primitive ops in execution order (hence topological order) and
// replays their local gradients in reverse. One backward per tape; reset()
// discards the recorded graph. Activation is per-thread.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backward_fn);
    void backward(const Tensor& loss);
    void reset();
    std::size_t size() const { return nodes_.size(); }

    static Tape* active();

    // RAII activation; restores the previously active tape on destruction.
    class Scope {
    public:
        explicit Scope(Tape& tape);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* previous_;
    };

private:
    std::vector<std::function<void()>> nodes_;
    bool consumed_ = false;
};

// Primitive ops. Binary elementwise ops broadcast between same-rank shapes
// where each axis either matches or is 1 on one side. Every op validates its
// output for NaN/Inf and records a tape node when a tape is active and any
// input requires grad.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis);
Tensor concat(const std::vector<Tensor>& parts); // along last axis
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor softmax(const Tensor& x);     // last axis
Tensor log_softmax(const Tensor& x); // last axis
Tensor scalar_mul(const Tensor& x, double c);
// ids index rows of `table` ([vocab, dim]); output is [ids.size(), dim], or
// [rows, ids.size()/rows, dim] when rows > 0.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids, int rows = 0);

// Max over coordinates of |analytic - numeric| / max(1, |numeric|), with the
// numeric gradient from central differences of step h. f must be a
// deterministic scalar-valued function (evaluating twice must agree exactly);
// freeze any noise before calling.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h = 1e-5);

} // namespace sibre
