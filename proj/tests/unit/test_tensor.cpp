// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>
#include <set>

#include "helpers.h"
#include "petlab/errors.h"
#include "petlab/grad_check.h"
#include "petlab/tensor.h"

using namespace petlab;
using petlab::testing::random_tensor;
using petlab::testing::weighted_sum;

namespace {

// Extended-precision reference softmax.
std::vector<long double> softmax_oracle(const std::vector<long double>& v) {
    long double m = v[0];
    for (auto x : v) m = std::max(m, x);
    long double s = 0;
    std::vector<long double> e;
    for (auto x : v) {
        e.push_back(std::exp(x - m));
        s += e.back();
    }
    for (auto& x : e) x /= s;
    return e;
}

double check_kernel(const std::function<Tensor(const std::vector<Tensor>&)>& f, const std::vector<Tensor>& inputs) {
    std::vector<NamedTensor> params;
    for (std::size_t i = 0; i < inputs.size(); ++i) params.push_back({"in" + std::to_string(i), inputs[i]});
    auto report = grad_check([&] { return f(inputs); }, params);
    return report.max_relative_error;
}

}  // namespace

TEST_SUITE("tensor") {

TEST_CASE("tensor shape invariants") {
    Tensor t = Tensor::zeros({3, 4});
    CHECK(t.size() == 12);
    CHECK(t.values().size() == 12);
    CHECK_THROWS_AS(Tensor::from_values({2, 2}, {1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(Tensor::zeros({0, 3}), ShapeError);
}

TEST_CASE("softmax symmetry and shift invariance") {
    auto p = softmax(std::vector<double>{0.0, 0.0});
    CHECK(p[0] == 0.5);
    CHECK(p[1] == 0.5);
    auto a = softmax(std::vector<double>{0.3, -1.2, 2.5});
    auto b = softmax(std::vector<double>{0.3 + 40.0, -1.2 + 40.0, 2.5 + 40.0});
    for (int i = 0; i < 3; ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-14));
    double s = 0;
    for (double x : a) s += x;
    CHECK(std::abs(s - 1.0) < 1e-12);
}

TEST_CASE("softmax [1,2,3] matches extended-precision oracle") {
    auto p = softmax(std::vector<double>{1.0, 2.0, 3.0});
    auto o = softmax_oracle({1.0L, 2.0L, 3.0L});
    for (int i = 0; i < 3; ++i) CHECK(std::abs(p[i] - static_cast<double>(o[i])) < 1e-15);
}

TEST_CASE("softmax rejects non-finite input") {
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::numeric_limits<double>::infinity()}), DomainError);
    CHECK_THROWS_AS(softmax(std::vector<double>{std::nan("")}), DomainError);
    CHECK_THROWS_AS(softmax(std::vector<double>{}), DomainError);
}

TEST_CASE("cross entropy scalar cases") {
    CHECK(cross_entropy(std::vector<double>{0, 0, 0, 0}, 2) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
    CHECK(cross_entropy(std::vector<double>{0, 30, 0, 0}, 1) < 1e-9);
    CHECK_THROWS_AS(cross_entropy(std::vector<double>{0, 0}, 2), IndexError);

    const std::vector<long double> logits{0.1L, -0.3L, 0.7L};
    const long double oracle = -std::log(softmax_oracle(logits)[2]);
    CHECK(std::abs(cross_entropy(std::vector<double>{0.1, -0.3, 0.7}, 2) - static_cast<double>(oracle)) < 1e-15);
}

TEST_CASE("cross entropy tensor kernel equals scalar form and skips negative targets") {
    Tensor logits = Tensor::from_values({2, 3}, {0.1, -0.3, 0.7, 1.0, 2.0, -1.0});
    const std::vector<TokenId> t{2, -1};
    CHECK(cross_entropy(logits, t).item() == doctest::Approx(cross_entropy(std::vector<double>{0.1, -0.3, 0.7}, 2)));
    const std::vector<TokenId> bad{3, 0};
    CHECK_THROWS_AS(cross_entropy(logits, bad), IndexError);
}

TEST_CASE("grad_check on polynomial and constant") {
    Tensor w = Tensor::from_values({1, 1}, {3.0}, true);
    auto report = grad_check([&] { return matmul(w, w); }, {{"w", w}});
    CHECK(report.max_relative_error < 1e-9);
    w.zero_grad();
    matmul(w, w).backward();
    CHECK(w.grad()[0] == doctest::Approx(6.0).epsilon(1e-15));

    Tensor c = Tensor::from_values({1, 1}, {2.0}, true);
    Tensor k = Tensor::from_values({1, 1}, {5.0});
    // A graph that does not depend on c at all.
    auto r2 = grad_check([&] { return add(scale(c, 0.0), k); }, {{"c", c}});
    CHECK(r2.max_relative_error == 0.0);
    CHECK(c.grad()[0] == 0.0);
}

TEST_CASE("grad_check rejects bad steps and nondeterministic functions") {
    Tensor w = Tensor::from_values({1, 1}, {1.0}, true);
    GradCheckOptions o;
    o.step = 1e-2;
    CHECK_THROWS_AS(grad_check([&] { return matmul(w, w); }, {{"w", w}}, o), DomainError);
    Rng shared(5);
    CHECK_THROWS_AS(grad_check([&] { return dropout(matmul(w, w), 0.5, shared); }, {{"w", w}}), DomainError);
}

TEST_CASE("two-layer perceptron with cross entropy passes gradient check") {
    Rng rng(17);
    Tensor x = random_tensor(rng, 4, 5, false);
    Tensor w1 = random_tensor(rng, 5, 6, true, 0.5);
    Tensor w2 = random_tensor(rng, 6, 3, true, 0.5);
    const std::vector<TokenId> targets{0, 2, 1, 2};
    GradCheckOptions o;
    o.max_elements = 5;  // 10 sampled parameters in total
    auto report = grad_check([&] { return cross_entropy(matmul(relu(matmul(x, w1)), w2), targets); },
                             {{"w1", w1}, {"w2", w2}}, o);
    std::size_t probed = 0;
    for (const auto& e : report.entries) probed += e.probed;
    CHECK(probed == 10);
    CHECK(report.max_relative_error < 1e-6);
}

TEST_CASE("every kernel matches central differences on random small shapes") {
    Rng rng(2024);
    for (int trial = 0; trial < 4; ++trial) {
        const std::size_t r = 1 + rng.below(8), c = 1 + rng.below(8), k = 1 + rng.below(8);
        CAPTURE(r);
        CAPTURE(c);
        CAPTURE(k);
        Tensor a = random_tensor(rng, r, c);
        Tensor b = random_tensor(rng, c, k);
        Tensor same = random_tensor(rng, r, c);
        Tensor row = random_tensor(rng, 1, c);

        CHECK(check_kernel([](auto& in) { return weighted_sum(matmul(in[0], in[1])); }, {a, b}) < 1e-6);
        CHECK(check_kernel([](auto& in) { return weighted_sum(transpose(in[0])); }, {a}) < 1e-6);
        CHECK(check_kernel([](auto& in) { return weighted_sum(add(in[0], in[1])); }, {a, same}) < 1e-6);
        CHECK(check_kernel([](auto& in) { return weighted_sum(add(in[0], in[1])); }, {a, row}) < 1e-6);
        CHECK(check_kernel([](auto& in) { return weighted_sum(scale(in[0], -1.7)); }, {a}) < 1e-6);
        CHECK(check_kernel([](auto& in) { return weighted_sum(relu(in[0])); }, {a}) < 1e-6);
        CHECK(check_kernel([](auto& in) { return weighted_sum(softmax_rows(in[0])); }, {a}) < 1e-6);
        if (r == c) {
            CHECK(check_kernel([](auto& in) { return weighted_sum(softmax_rows(in[0], AttentionMask::causal)); }, {a}) < 1e-6);
        }
        // With two columns the normalized row is (+1, -1) whatever the
        // input, so the gradient is identically zero and relative error is
        // meaningless.
        if (c >= 3) {
            Tensor gain = random_tensor(rng, 1, c);
            Tensor bias = random_tensor(rng, 1, c);
            CHECK(check_kernel([](auto& in) { return weighted_sum(layer_norm(in[0], in[1], in[2])); }, {a, gain, bias}) <
                  1e-6);
        }
        Tensor table = random_tensor(rng, 6, c);
        const std::vector<TokenId> ids{3, 0, 3, 5};
        CHECK(check_kernel([&](auto& in) { return weighted_sum(embedding(in[0], ids)); }, {table}) < 1e-6);
        CHECK(check_kernel(
                  [](auto& in) {
                      const std::vector<Tensor> parts{in[0], in[1]};
                      return weighted_sum(concat_rows(parts));
                  },
                  {a, same}) < 1e-6);
        std::vector<TokenId> targets(r);
        for (auto& t : targets) t = static_cast<TokenId>(rng.below(c));
        CHECK(check_kernel([&](auto& in) { return cross_entropy(in[0], targets); }, {a}) < 1e-6);
        CHECK(check_kernel(
                  [](auto& in) {
                      Rng local(7);
                      return weighted_sum(dropout(in[0], 0.3, local));
                  },
                  {a}) < 1e-6);
    }
}

TEST_CASE("fan-out gradients accumulate") {
    Rng rng(3);
    Tensor w = random_tensor(rng, 3, 3);
    auto g = [&] { return weighted_sum(relu(matmul(w, w))); };
    w.zero_grad();
    g().backward();
    const auto single = petlab::testing::copy_values(Tensor::from_values({3, 3}, {w.grad().begin(), w.grad().end()}));
    w.zero_grad();
    add(g(), g()).backward();
    for (std::size_t i = 0; i < single.size(); ++i) CHECK(w.grad()[i] == doctest::Approx(2.0 * single[i]).epsilon(1e-14));
}

TEST_CASE("tensors without requires_grad never accumulate") {
    Rng rng(4);
    Tensor frozen = random_tensor(rng, 2, 2, false);
    Tensor live = random_tensor(rng, 2, 2, true);
    weighted_sum(matmul(frozen, live)).backward();
    CHECK_FALSE(frozen.has_grad());
    CHECK(live.has_grad());
    CHECK(live.grad().size() == live.size());
}

TEST_CASE("graph trace is topological and visits each node once") {
    Rng rng(8);
    Tensor a = random_tensor(rng, 2, 2);
    Tensor h = relu(a);
    Tensor loss = weighted_sum(add(h, h));
    Graph g = Graph::trace(loss);
    std::set<std::size_t> seen;
    for (const auto& r : g.records()) {
        for (auto in : r.inputs) CHECK(seen.count(in) == 1);
        CHECK(seen.insert(r.id).second);
    }
    std::size_t relu_count = 0;
    for (const auto& r : g.records()) relu_count += r.op == OpKind::relu;
    CHECK(relu_count == 1);
}

TEST_CASE("layer norm output is standardized before the affine step") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t c = 2 + rng.below(30);
        Tensor x = random_tensor(rng, 5, c, false, 3.0);
        Tensor gain = Tensor::from_values({1, c}, std::vector<double>(c, 1.0));
        Tensor bias = Tensor::zeros({1, c});
        Tensor y = layer_norm(x, gain, bias);
        for (std::size_t i = 0; i < 5; ++i) {
            double mean = 0, var = 0;
            for (std::size_t j = 0; j < c; ++j) mean += y.at(i, j);
            mean /= double(c);
            for (std::size_t j = 0; j < c; ++j) var += (y.at(i, j) - mean) * (y.at(i, j) - mean);
            var /= double(c);
            CHECK(std::abs(mean) < 1e-10);
            CHECK(std::abs(var - 1.0) < 1e-8);
        }
    }
}

TEST_CASE("kernels are bit-deterministic") {
    Rng rng(12);
    Tensor a = random_tensor(rng, 7, 5);
    Tensor b = random_tensor(rng, 5, 6);
    auto run = [&] {
        Rng d(1);
        return petlab::testing::copy_values(
            softmax_rows(dropout(matmul(relu(a), b), 0.2, d), AttentionMask::none));
    };
    CHECK(run() == run());
}

TEST_CASE("no-grad guard suppresses graph recording") {
    Rng rng(13);
    Tensor a = random_tensor(rng, 2, 2);
    {
        NoGradGuard guard;
        Tensor y = matmul(a, a);
        CHECK_FALSE(y.requires_grad());
        CHECK(y.op() == OpKind::leaf);
    }
    CHECK(matmul(a, a).requires_grad());
}

}  // TEST_SUITE
