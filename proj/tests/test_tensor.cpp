#include <doctest.h>

#include <cmath>

#include "sibre/distributions.hpp"
#include "sibre/errors.hpp"
#include "sibre/rng.hpp"
#include "sibre/tensor.hpp"

using namespace sibre;

namespace {

Tensor randn_like(std::vector<int> shape, Rng& rng, bool rg = true) {
    Tensor t = Tensor::zeros(std::move(shape), rg);
    for (auto& v : t.data()) v = -1.0 + 2.0 * rng.uniform();
    return t;
}

} // namespace

TEST_CASE("forward op values") {
    CHECK(sigmoid(Tensor::scalar(0.0)).value() == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(clamp(Tensor::scalar(1.3), 0.0, 1.0).value() == doctest::Approx(1.0).epsilon(1e-15));

    Tensor a = Tensor::full({2, 3}, 1.0);
    Tensor b = Tensor::full({3, 1}, 1.0);
    Tensor c = matmul(a, b);
    REQUIRE(c.shape() == std::vector<int>{2, 1});
    CHECK(c.data()[0] == doctest::Approx(3.0));
    CHECK(c.data()[1] == doctest::Approx(3.0));
}

TEST_CASE("broadcast add/mul against manual loop") {
    Tensor a = Tensor::of({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor col = Tensor::of({2, 1}, {10, 100});
    Tensor row = Tensor::of({1, 3}, {1, 2, 3});
    Tensor s = add(a, col);
    CHECK(s.data() == std::vector<double>{11, 12, 13, 104, 105, 106});
    Tensor p = mul(a, row);
    CHECK(p.data() == std::vector<double>{1, 4, 9, 4, 10, 18});
    CHECK_THROWS_AS(add(a, Tensor::of({3, 1}, {1, 2, 3})), Error);
}

TEST_CASE("sum per axis and mean") {
    Tensor x = Tensor::of({2, 2, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
    CHECK(sum(x).value() == doctest::Approx(78.0));
    CHECK(mean(x).value() == doctest::Approx(6.5));
    Tensor s1 = sum(x, 1);
    REQUIRE(s1.shape() == std::vector<int>{2, 3});
    CHECK(s1.data() == std::vector<double>{5, 7, 9, 17, 19, 21});
    Tensor s0 = sum(x, 0);
    CHECK(s0.data() == std::vector<double>{8, 10, 12, 14, 16, 18});
    Tensor s2 = sum(x, 2);
    CHECK(s2.data() == std::vector<double>{6, 15, 24, 33});
}

TEST_CASE("softmax rows sum to one and log form agrees") {
    Rng rng(3, "softmax");
    Tensor x = randn_like({4, 5}, rng, false);
    Tensor s = softmax(x);
    Tensor ls = log_softmax(x);
    for (int r = 0; r < 4; ++r) {
        double total = 0.0;
        for (int c = 0; c < 5; ++c) {
            const double sv = s.data()[static_cast<std::size_t>(r) * 5 + c];
            total += sv;
            CHECK(std::log(sv) ==
                  doctest::Approx(ls.data()[static_cast<std::size_t>(r) * 5 + c]).epsilon(1e-12));
        }
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("backward through sigmoid and clamp") {
    Tensor x = Tensor::scalar(0.0, true);
    {
        Tape tape;
        Tape::Scope scope(tape);
        tape.backward(sigmoid(x));
        CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));
    }
    Tensor y = Tensor::scalar(1.5, true);
    {
        Tape tape;
        Tape::Scope scope(tape);
        tape.backward(clamp(y, 0.0, 1.0));
        CHECK(y.grad()[0] == 0.0);
    }
}

TEST_CASE("gradients accumulate across fan-out like the unrolled tree") {
    Rng rng(11, "fanout");
    Tensor x = randn_like({3, 2}, rng);
    Tensor x1 = Tensor::of(x.shape(), x.data(), true);
    Tensor x2 = Tensor::of(x.shape(), x.data(), true);

    // shared: f(x) = sum((x + x) * x); tree: same with separate leaf copies.
    Tape t1;
    {
        Tape::Scope scope(t1);
        t1.backward(sum(mul(add(x, x), x)));
    }
    Tape t2;
    {
        Tape::Scope scope(t2);
        t2.backward(sum(mul(add(x1, x2), x1)));
    }
    for (std::size_t i = 0; i < x.data().size(); ++i)
        CHECK(x.grad()[i] == doctest::Approx(x1.grad()[i] + x2.grad()[i]).epsilon(1e-12));
}

TEST_CASE("tape misuse errors") {
    Tensor x = Tensor::scalar(0.3, true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor loss = sigmoid(x);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), Error);
    tape.reset();
    Tensor loss2 = sigmoid(x);
    tape.backward(loss2); // fine after reset

    Tape t2;
    Tape::Scope s2(t2);
    Tensor vec = add(Tensor::of({2}, {1, 2}, true), Tensor::of({2}, {3, 4}));
    CHECK_THROWS_AS(t2.backward(vec), Error);
    CHECK_THROWS_AS(t2.backward(Tensor::scalar(1.0)), Error); // not connected
}

TEST_CASE("non-finite results raise the numeric error") {
    CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), Error);
    CHECK_THROWS_AS(div(Tensor::scalar(1.0), Tensor::scalar(0.0)), Error);
    CHECK_THROWS_AS(exp(Tensor::scalar(1000.0)), Error);
    try {
        log(Tensor::scalar(0.0));
        FAIL("expected numeric error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::numeric);
    }
}

TEST_CASE("embedding lookup forward and scatter-add gradient") {
    Tensor table = Tensor::of({4, 2}, {0, 1, 10, 11, 20, 21, 30, 31}, true);
    std::vector<std::int64_t> ids{2, 0, 2};
    Tensor out = embedding_lookup(table, ids);
    CHECK(out.data() == std::vector<double>{20, 21, 0, 1, 20, 21});

    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(embedding_lookup(table, ids)));
    CHECK(table.grad()[0] == 1.0);  // row 0 used once
    CHECK(table.grad()[4] == 2.0);  // row 2 used twice
    CHECK(table.grad()[6] == 0.0);  // row 3 unused

    CHECK_THROWS_AS(embedding_lookup(table, {4}), Error);
    Tensor three = embedding_lookup(table, {0, 1, 2, 3, 0, 1}, 2);
    CHECK(three.shape() == std::vector<int>{2, 3, 2});
}

TEST_CASE("grad_check spec examples") {
    Rng rng(5, "gradcheck");
    // f = sum(x^2): analytic gradient 2x, essentially exact.
    Tensor x = randn_like({3, 3}, rng);
    CHECK(grad_check([](const Tensor& t) { return sum(mul(t, t)); }, x) < 1e-8);

    // f = KL(sigmoid(x), 0.3) summed.
    Tensor y = randn_like({4, 1}, rng);
    CHECK(grad_check(
              [](const Tensor& t) {
                  return sum(dist::kl_bernoulli_t(sigmoid(t), Tensor::of({1, 1}, {0.3})));
              },
              y) < 1e-4);

    // constant f: analytic and numeric gradients both vanish.
    Tensor z = randn_like({2, 2}, rng);
    CHECK(grad_check([](const Tensor&) { return Tensor::scalar(4.2); }, z) == 0.0);
}

TEST_CASE("grad_check rejects nondeterministic functions") {
    Tensor x = Tensor::scalar(0.1, true);
    int calls = 0;
    CHECK_THROWS_AS(grad_check(
                        [&calls](const Tensor& t) {
                            ++calls;
                            return scalar_mul(t, 1.0 + 0.01 * calls);
                        },
                        x),
                    Error);
}

TEST_CASE("composite expression matches finite differences") {
    Rng rng(17, "composite");
    Tensor x = randn_like({2, 4}, rng);
    Tensor w = randn_like({4, 3}, rng, false);
    const double err = grad_check(
        [&](const Tensor& t) {
            Tensor h = tanh(matmul(t, w));
            Tensor s = softmax(h);
            return mean(mul(s, exp(scalar_mul(h, 0.5))));
        },
        x);
    CHECK(err < 1e-4);
}

TEST_CASE("concat splits gradients back to parts") {
    Tensor a = Tensor::of({2, 1}, {1, 2}, true);
    Tensor b = Tensor::of({2, 2}, {3, 4, 5, 6}, true);
    Tensor w = Tensor::of({2, 3}, {1, 10, 100, 2, 20, 200});
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(sum(mul(concat({a, b}), w)));
    CHECK(a.grad() == std::vector<double>{1, 2});
    CHECK(b.grad() == std::vector<double>{10, 100, 20, 200});
}

TEST_CASE("shape errors name the op") {
    try {
        matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}));
        FAIL("expected shape error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::shape);
        CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    }
}

TEST_CASE("primitive grad sweep over random small shapes") {
    Rng rng(23, "sweep");
    for (int trial = 0; trial < 5; ++trial) {
        const int r = 1 + static_cast<int>(rng.next_below(3));
        std::vector<int> shape;
        for (int i = 0; i < r; ++i) shape.push_back(1 + static_cast<int>(rng.next_below(8)));
        Tensor x = randn_like(shape, rng);
        Tensor w = randn_like(shape, rng, false);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(tanh(t), w)); }, x) < 1e-4);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(sigmoid(t), w)); }, x) < 1e-4);
        CHECK(grad_check([&](const Tensor& t) { return sum(mul(exp(scalar_mul(t, 0.3)), w)); }, x) <
              1e-4);
    }
}
