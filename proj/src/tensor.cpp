#include "sibre/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "sibre/errors.hpp"

namespace sibre {

namespace {

thread_local Tape* g_active_tape = nullptr;

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

std::int64_t shape_numel(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

void check_shape(const char* op, const std::vector<int>& s) {
    if (s.empty() || s.size() > 3)
        fail(ErrorCode::shape, std::string(op) + ": rank must be 1..3, got " + shape_str(s));
    for (int d : s)
        if (d <= 0) fail(ErrorCode::shape, std::string(op) + ": non-positive dim in " + shape_str(s));
}

void guard_finite(const char* op, const Tensor& t) {
    for (double v : t.data()) {
        if (!std::isfinite(v))
            fail(ErrorCode::numeric, std::string(op) + ": produced non-finite value");
    }
}

bool grad_flows(const Tensor& t) { return t.requires_grad() && g_active_tape != nullptr; }

// Shapes padded to rank 3 with leading 1s; strides are 0 on broadcast axes.
struct BcastPlan {
    int d0, d1, d2;
    std::int64_t sa0, sa1, sa2;
    std::int64_t sb0, sb1, sb2;
};

BcastPlan broadcast_plan(const char* op, const std::vector<int>& a, const std::vector<int>& b) {
    if (a.size() != b.size())
        fail(ErrorCode::shape, std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    int pa[3] = {1, 1, 1}, pb[3] = {1, 1, 1};
    const int off = 3 - static_cast<int>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        pa[off + i] = a[i];
        pb[off + i] = b[i];
    }
    int out[3];
    for (int i = 0; i < 3; ++i) {
        if (pa[i] == pb[i]) out[i] = pa[i];
        else if (pa[i] == 1) out[i] = pb[i];
        else if (pb[i] == 1) out[i] = pa[i];
        else fail(ErrorCode::shape, std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " + shape_str(b));
    }
    BcastPlan p{};
    p.d0 = out[0]; p.d1 = out[1]; p.d2 = out[2];
    const std::int64_t as2 = 1, as1 = pa[2], as0 = static_cast<std::int64_t>(pa[1]) * pa[2];
    const std::int64_t bs2 = 1, bs1 = pb[2], bs0 = static_cast<std::int64_t>(pb[1]) * pb[2];
    p.sa0 = pa[0] == 1 ? 0 : as0; p.sa1 = pa[1] == 1 ? 0 : as1; p.sa2 = pa[2] == 1 ? 0 : as2;
    p.sb0 = pb[0] == 1 ? 0 : bs0; p.sb1 = pb[1] == 1 ? 0 : bs1; p.sb2 = pb[2] == 1 ? 0 : bs2;
    return p;
}

std::vector<int> broadcast_shape(const BcastPlan& p, std::size_t rank) {
    std::vector<int> full{p.d0, p.d1, p.d2};
    return std::vector<int>(full.end() - rank, full.end());
}

template <typename Fwd, typename BwdA, typename BwdB>
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, BwdA dfda, BwdB dfdb) {
    const BcastPlan p = broadcast_plan(op, a.shape(), b.shape());
    Tensor out = Tensor::zeros(broadcast_shape(p, a.shape().size()));
    {
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.data();
        if (a.shape() == b.shape()) {
            for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(av[i], bv[i]);
        } else {
            std::int64_t o = 0;
            for (int i = 0; i < p.d0; ++i)
                for (int j = 0; j < p.d1; ++j)
                    for (int k = 0; k < p.d2; ++k, ++o)
                        ov[o] = fwd(av[i * p.sa0 + j * p.sa1 + k * p.sa2],
                                    bv[i * p.sb0 + j * p.sb1 + k * p.sb2]);
        }
    }
    guard_finite(op, out);
    if (grad_flows(a) || grad_flows(b)) {
        out.set_requires_grad();
        g_active_tape->record([a, b, out, p, dfda, dfdb] {
            const auto& av = a.data();
            const auto& bv = b.data();
            const auto& og = out.grad();
            const bool need_a = a.requires_grad();
            const bool need_b = b.requires_grad();
            Tensor am = a, bm = b;
            std::int64_t o = 0;
            for (int i = 0; i < p.d0; ++i)
                for (int j = 0; j < p.d1; ++j)
                    for (int k = 0; k < p.d2; ++k, ++o) {
                        const std::int64_t ia = i * p.sa0 + j * p.sa1 + k * p.sa2;
                        const std::int64_t ib = i * p.sb0 + j * p.sb1 + k * p.sb2;
                        if (need_a) am.grad()[ia] += og[o] * dfda(av[ia], bv[ib]);
                        if (need_b) bm.grad()[ib] += og[o] * dfdb(av[ia], bv[ib]);
                    }
        });
    }
    return out;
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* op, const Tensor& x, Fwd fwd, Bwd dfdx_from_in_out) {
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& xv = x.data();
        auto& ov = out.data();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = fwd(xv[i]);
    }
    guard_finite(op, out);
    if (grad_flows(x)) {
        out.set_requires_grad();
        g_active_tape->record([x, out, dfdx_from_in_out] {
            Tensor xm = x;
            const auto& xv = x.data();
            const auto& ov = out.data();
            const auto& og = out.grad();
            for (std::size_t i = 0; i < og.size(); ++i)
                xm.grad()[i] += og[i] * dfdx_from_in_out(xv[i], ov[i]);
        });
    }
    return out;
}

} // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    check_shape("zeros", shape);
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data.assign(static_cast<std::size_t>(shape_numel(t.impl_->shape)), 0.0);
    if (requires_grad) t.set_requires_grad();
    return t;
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::of(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    check_shape("of", shape);
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
        fail(ErrorCode::shape, "Tensor::of: " + std::to_string(values.size()) +
                                   " values for shape " + shape_str(shape));
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    if (requires_grad) t.set_requires_grad();
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return of({1}, {value}, requires_grad);
}

const std::vector<int>& Tensor::shape() const {
    if (!impl_) fail(ErrorCode::state, "use of undefined tensor");
    return impl_->shape;
}

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

std::vector<double>& Tensor::data() {
    if (!impl_) fail(ErrorCode::state, "use of undefined tensor");
    return impl_->data;
}

const std::vector<double>& Tensor::data() const {
    if (!impl_) fail(ErrorCode::state, "use of undefined tensor");
    return impl_->data;
}

double Tensor::value() const {
    if (numel() != 1) fail(ErrorCode::shape, "Tensor::value: tensor is not scalar");
    return data()[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad() {
    if (!impl_) fail(ErrorCode::state, "use of undefined tensor");
    impl_->requires_grad = true;
    if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
}

std::vector<double>& Tensor::grad() {
    if (!requires_grad()) fail(ErrorCode::state, "grad requested on tensor without requires_grad");
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!requires_grad()) fail(ErrorCode::state, "grad requested on tensor without requires_grad");
    return impl_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tape::record(std::function<void()> backward_fn) { nodes_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
    if (consumed_) fail(ErrorCode::state, "Tape::backward called twice without reset");
    if (!loss.defined() || loss.numel() != 1)
        fail(ErrorCode::state, "Tape::backward: loss must be a scalar tensor");
    if (!loss.requires_grad())
        fail(ErrorCode::state, "Tape::backward: loss is not connected to the tape");
    consumed_ = true;
    Tensor seed = loss;
    seed.grad()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

Tape* Tape::active() { return g_active_tape; }

Tape::Scope::Scope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

Tape::Scope::~Scope() { g_active_tape = previous_; }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        fail(ErrorCode::shape, "matmul: incompatible shapes " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n});
    {
        const auto& av = a.data();
        const auto& bv = b.data();
        auto& ov = out.data();
        for (int i = 0; i < m; ++i)
            for (int l = 0; l < k; ++l) {
                const double ail = av[static_cast<std::size_t>(i) * k + l];
                if (ail == 0.0) continue;
                const double* brow = bv.data() + static_cast<std::size_t>(l) * n;
                double* orow = ov.data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) orow[j] += ail * brow[j];
            }
    }
    guard_finite("matmul", out);
    if (grad_flows(a) || grad_flows(b)) {
        out.set_requires_grad();
        Tape::active()->record([a, b, out, m, k, n] {
            const auto& og = out.grad();
            if (a.requires_grad()) {
                Tensor am = a;
                const auto& bv = b.data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) {
                        const double g = og[static_cast<std::size_t>(i) * n + j];
                        if (g == 0.0) continue;
                        const double* brow = bv.data() + 0;
                        for (int l = 0; l < k; ++l)
                            am.grad()[static_cast<std::size_t>(i) * k + l] += g * brow[static_cast<std::size_t>(l) * n + j];
                    }
            }
            if (b.requires_grad()) {
                Tensor bm = b;
                const auto& av = a.data();
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        const double ail = av[static_cast<std::size_t>(i) * k + l];
                        if (ail == 0.0) continue;
                        const double* grow = og.data() + static_cast<std::size_t>(i) * n;
                        double* brow = bm.grad().data() + static_cast<std::size_t>(l) * n;
                        for (int j = 0; j < n; ++j) brow[j] += ail * grow[j];
                    }
            }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op("add", a, b,
                     [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; },
                     [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op("sub", a, b,
                     [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; },
                     [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op("mul", a, b,
                     [](double x, double y) { return x * y; },
                     [](double, double y) { return y; },
                     [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op("div", a, b,
                     [](double x, double y) { return x / y; },
                     [](double, double y) { return 1.0 / y; },
                     [](double x, double y) { return -x / (y * y); });
}

Tensor sigmoid(const Tensor& x) {
    return unary_op("sigmoid", x,
                    [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                                   : std::exp(v) / (1.0 + std::exp(v)); },
                    [](double, double s) { return s * (1.0 - s); });
}

Tensor tanh(const Tensor& x) {
    return unary_op("tanh", x,
                    [](double v) { return std::tanh(v); },
                    [](double, double t) { return 1.0 - t * t; });
}

Tensor exp(const Tensor& x) {
    return unary_op("exp", x,
                    [](double v) { return std::exp(v); },
                    [](double, double e) { return e; });
}

Tensor log(const Tensor& x) {
    return unary_op("log", x,
                    [](double v) { return std::log(v); },
                    [](double v, double) { return 1.0 / v; });
}

Tensor mean(const Tensor& x) {
    const double n = static_cast<double>(x.numel());
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::of({1}, {acc / n});
    guard_finite("mean", out);
    if (grad_flows(x)) {
        out.set_requires_grad();
        Tape::active()->record([x, out, n] {
            Tensor xm = x;
            const double g = out.grad()[0] / n;
            for (auto& gv : xm.grad()) gv += g;
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::of({1}, {acc});
    guard_finite("sum", out);
    if (grad_flows(x)) {
        out.set_requires_grad();
        Tape::active()->record([x, out] {
            Tensor xm = x;
            const double g = out.grad()[0];
            for (auto& gv : xm.grad()) gv += g;
        });
    }
    return out;
}

Tensor sum(const Tensor& x, int axis) {
    const int r = x.rank();
    if (axis < 0 || axis >= r) fail(ErrorCode::shape, "sum: axis out of range");
    if (r == 1) return sum(x);
    std::vector<int> out_shape;
    for (int i = 0; i < r; ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    // View as [outer, reduce, inner] around the reduced axis.
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const std::int64_t red = x.dim(axis);
    Tensor out = Tensor::zeros(out_shape);
    {
        const auto& xv = x.data();
        auto& ov = out.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t d = 0; d < red; ++d) {
                const double* src = xv.data() + (o * red + d) * inner;
                double* dst = ov.data() + o * inner;
                for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
            }
    }
    guard_finite("sum", out);
    if (grad_flows(x)) {
        out.set_requires_grad();
        Tape::active()->record([x, out, outer, red, inner] {
            Tensor xm = x;
            const auto& og = out.grad();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t d = 0; d < red; ++d) {
                    double* dst = xm.grad().data() + (o * red + d) * inner;
                    const double* src = og.data() + o * inner;
                    for (std::int64_t i = 0; i < inner; ++i) dst[i] += src[i];
                }
        });
    }
    return out;
}

Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) fail(ErrorCode::shape, "concat: no inputs");
    const int r = parts[0].rank();
    std::int64_t rows = 1;
    for (int i = 0; i + 1 < r; ++i) rows *= parts[0].dim(i);
    int total_last = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) fail(ErrorCode::shape, "concat: rank mismatch");
        for (int i = 0; i + 1 < r; ++i)
            if (p.dim(i) != parts[0].dim(i))
                fail(ErrorCode::shape, "concat: leading dims mismatch " +
                                           shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        total_last += p.dim(r - 1);
    }
    std::vector<int> out_shape = parts[0].shape();
    out_shape[static_cast<std::size_t>(r - 1)] = total_last;
    Tensor out = Tensor::zeros(out_shape);
    {
        auto& ov = out.data();
        std::int64_t col = 0;
        for (const auto& p : parts) {
            const std::int64_t w = p.dim(r - 1);
            const auto& pv = p.data();
            for (std::int64_t row = 0; row < rows; ++row)
                std::copy(pv.begin() + row * w, pv.begin() + (row + 1) * w,
                          ov.begin() + row * total_last + col);
            col += w;
        }
    }
    guard_finite("concat", out);
    bool any = false;
    for (const auto& p : parts) any = any || grad_flows(p);
    if (any) {
        out.set_requires_grad();
        Tape::active()->record([parts, out, rows, total_last, r] {
            const auto& og = out.grad();
            std::int64_t col = 0;
            for (const auto& p : parts) {
                const std::int64_t w = p.dim(r - 1);
                if (p.requires_grad()) {
                    Tensor pm = p;
                    for (std::int64_t row = 0; row < rows; ++row)
                        for (std::int64_t i = 0; i < w; ++i)
                            pm.grad()[row * w + i] += og[row * total_last + col + i];
                }
                col += w;
            }
        });
    }
    return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
    if (!(lo <= hi)) fail(ErrorCode::shape, "clamp: lo must be <= hi");
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& xv = x.data();
        auto& ov = out.data();
        for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = std::min(hi, std::max(lo, xv[i]));
    }
    guard_finite("clamp", out);
    if (grad_flows(x)) {
        out.set_requires_grad();
        // Subgradient 0 at the boundaries: pass-through strictly inside only.
        Tape::active()->record([x, out, lo, hi] {
            Tensor xm = x;
            const auto& xv = x.data();
            const auto& og = out.grad();
            for (std::size_t i = 0; i < og.size(); ++i)
                if (xv[i] > lo && xv[i] < hi) xm.grad()[i] += og[i];
        });
    }
    return out;
}

namespace {

Tensor softmax_impl(const Tensor& x, bool log_form) {
    const char* op = log_form ? "log_softmax" : "softmax";
    const int r = x.rank();
    const std::int64_t w = x.dim(r - 1);
    const std::int64_t rows = x.numel() / w;
    Tensor out = Tensor::zeros(x.shape());
    {
        const auto& xv = x.data();
        auto& ov = out.data();
        for (std::int64_t row = 0; row < rows; ++row) {
            const double* src = xv.data() + row * w;
            double* dst = ov.data() + row * w;
            double mx = src[0];
            for (std::int64_t i = 1; i < w; ++i) mx = std::max(mx, src[i]);
            double denom = 0.0;
            for (std::int64_t i = 0; i < w; ++i) denom += std::exp(src[i] - mx);
            const double log_denom = std::log(denom);
            for (std::int64_t i = 0; i < w; ++i) {
                const double ls = src[i] - mx - log_denom;
                dst[i] = log_form ? ls : std::exp(ls);
            }
        }
    }
    guard_finite(op, out);
    if (grad_flows(x)) {
        out.set_requires_grad();
        Tape::active()->record([x, out, rows, w, log_form] {
            Tensor xm = x;
            const auto& ov = out.data();
            const auto& og = out.grad();
            for (std::int64_t row = 0; row < rows; ++row) {
                const double* o = ov.data() + row * w;
                const double* g = og.data() + row * w;
                double* xg = xm.grad().data() + row * w;
                if (log_form) {
                    double gsum = 0.0;
                    for (std::int64_t i = 0; i < w; ++i) gsum += g[i];
                    for (std::int64_t i = 0; i < w; ++i) xg[i] += g[i] - std::exp(o[i]) * gsum;
                } else {
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < w; ++i) dot += g[i] * o[i];
                    for (std::int64_t i = 0; i < w; ++i) xg[i] += o[i] * (g[i] - dot);
                }
            }
        });
    }
    return out;
}

} // namespace

Tensor softmax(const Tensor& x) { return softmax_impl(x, false); }

Tensor log_softmax(const Tensor& x) { return softmax_impl(x, true); }

Tensor scalar_mul(const Tensor& x, double c) {
    return unary_op("scalar_mul", x,
                    [c](double v) { return c * v; },
                    [c](double, double) { return c; });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int64_t>& ids, int rows) {
    if (table.rank() != 2) fail(ErrorCode::shape, "embedding_lookup: table must be rank 2");
    if (ids.empty()) fail(ErrorCode::shape, "embedding_lookup: empty id list");
    const int vocab = table.dim(0), dim = table.dim(1);
    for (std::int64_t id : ids)
        if (id < 0 || id >= vocab)
            fail(ErrorCode::shape, "embedding_lookup: id " + std::to_string(id) +
                                       " out of range [0," + std::to_string(vocab) + ")");
    std::vector<int> out_shape;
    if (rows > 0) {
        if (ids.size() % static_cast<std::size_t>(rows) != 0)
            fail(ErrorCode::shape, "embedding_lookup: rows does not divide id count");
        out_shape = {rows, static_cast<int>(ids.size()) / rows, dim};
    } else {
        out_shape = {static_cast<int>(ids.size()), dim};
    }
    Tensor out = Tensor::zeros(out_shape);
    {
        const auto& tv = table.data();
        auto& ov = out.data();
        for (std::size_t i = 0; i < ids.size(); ++i)
            std::copy(tv.begin() + ids[i] * dim, tv.begin() + (ids[i] + 1) * dim,
                      ov.begin() + static_cast<std::int64_t>(i) * dim);
    }
    guard_finite("embedding_lookup", out);
    if (grad_flows(table)) {
        out.set_requires_grad();
        Tape::active()->record([table, out, ids, dim] {
            Tensor tm = table;
            const auto& og = out.grad();
            for (std::size_t i = 0; i < ids.size(); ++i) {
                const double* src = og.data() + static_cast<std::int64_t>(i) * dim;
                double* dst = tm.grad().data() + ids[i] * dim;
                for (int d = 0; d < dim; ++d) dst[d] += src[d];
            }
        });
    }
    return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double h) {
    if (!x.defined()) fail(ErrorCode::state, "grad_check: undefined input tensor");

    struct Deactivate {
        Tape* prev;
        Deactivate() : prev(g_active_tape) { g_active_tape = nullptr; }
        ~Deactivate() { g_active_tape = prev; }
    };

    // Determinism probe: two tape-free evaluations must agree bit-for-bit.
    double base;
    {
        Deactivate off;
        Tensor v1 = f(x);
        if (v1.numel() != 1) fail(ErrorCode::shape, "grad_check: f must be scalar-valued");
        Tensor v2 = f(x);
        base = v1.value();
        if (base != v2.value())
            fail(ErrorCode::state, "grad_check: f is not deterministic (freeze noise before checking)");
    }
    (void)base;

    x.set_requires_grad();
    x.zero_grad();
    std::vector<double> analytic(x.data().size(), 0.0);
    {
        Deactivate off;
        Tape tape;
        Tape::Scope scope(tape);
        Tensor loss = f(x);
        if (loss.requires_grad()) {
            tape.backward(loss);
            analytic = x.grad();
        }
    }

    double max_err = 0.0;
    {
        Deactivate off;
        auto& xv = x.data();
        for (std::size_t i = 0; i < xv.size(); ++i) {
            const double orig = xv[i];
            xv[i] = orig + h;
            const double fp = f(x).value();
            xv[i] = orig - h;
            const double fm = f(x).value();
            xv[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::usage: return "E_USAGE";
        case ErrorCode::config: return "E_CONFIG";
        case ErrorCode::io: return "E_IO";
        case ErrorCode::data: return "E_DATA";
        case ErrorCode::shape: return "E_SHAPE";
        case ErrorCode::numeric: return "E_NUMERIC";
        case ErrorCode::state: return "E_STATE";
    }
    return "E_UNKNOWN";
}

} // namespace sibre
