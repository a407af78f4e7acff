#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "sea/graph.hpp"
#include "sea/tensor.hpp"

using namespace sea::num;

namespace {

Tensor random_tensor(std::vector<int> shape, RngStream& rng, float scale = 1.0f) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.next_uniform(-scale, scale);
    return t;
}

// Independent oracle: naive triple-loop multiply in double.
std::vector<float> naive_matmul(const Tensor& a, const Tensor& b) {
    const int m = a.shape[0], k = a.shape[1], n = b.shape[1];
    std::vector<float> out(size_t(m) * n, 0.0f);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double s = 0;
            for (int t = 0; t < k; ++t) {
                s += double(a.data[size_t(i) * k + t]) * double(b.data[size_t(t) * n + j]);
            }
            out[size_t(i) * n + j] = float(s);
        }
    }
    return out;
}

}  // namespace

TEST_CASE("matmul identity returns the operand") {
    RngStream rng(7);
    Tensor eye = Tensor::zeros({3, 3});
    for (int i = 0; i < 3; ++i) eye.data[size_t(i) * 3 + i] = 1.0f;
    Tensor a = random_tensor({3, 3}, rng);
    Graph g;
    ValueId out = g.matmul(g.leaf(eye), g.leaf(a));
    for (size_t i = 0; i < a.data.size(); ++i) {
        CHECK(g.value(out).data[i] == doctest::Approx(a.data[i]).epsilon(1e-6));
    }
}

TEST_CASE("matmul matches triple-loop oracle") {
    RngStream rng(11);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 6}, rng);
    Graph g;
    ValueId out = g.matmul(g.leaf(a), g.leaf(b));
    auto expect = naive_matmul(a, b);
    for (size_t i = 0; i < expect.size(); ++i) {
        double rel = std::abs(double(g.value(out).data[i]) - double(expect[i])) /
                     std::max(1e-8, std::abs(double(expect[i])));
        CHECK(rel < 1e-5);
    }
}

TEST_CASE("matmul shape mismatch names op and shapes") {
    RngStream rng(3);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({6, 7}, rng);
    Graph g;
    ValueId ia = g.leaf(a), ib = g.leaf(b);
    CHECK_THROWS_WITH_AS(g.matmul(ia, ib),
                         "matmul: incompatible shapes [4,5] and [6,7]",
                         std::invalid_argument);
}

TEST_CASE("softmax of constant row is uniform") {
    Tensor x = Tensor::zeros({4});
    Graph g;
    ValueId out = g.softmax(g.leaf(x));
    for (float v : g.value(out).data) CHECK(v == doctest::Approx(0.25).epsilon(1e-7));
}

TEST_CASE("backward of sum is all ones") {
    RngStream rng(5);
    Tensor x = random_tensor({2, 3, 2}, rng);
    x.requires_grad = true;
    Graph g;
    g.backward(g.sum(g.leaf(x)));
    REQUIRE(x.grad.size() == x.data.size());
    for (float v : x.grad) CHECK(v == 1.0f);
}

TEST_CASE("backward of sum of squares is 2x") {
    Tensor x = Tensor::from({3}, {1.0f, 2.0f, 3.0f});
    x.requires_grad = true;
    Graph g;
    ValueId xi = g.leaf(x);
    g.backward(g.sum(g.mul(xi, xi)));
    CHECK(x.grad[0] == doctest::Approx(2.0));
    CHECK(x.grad[1] == doctest::Approx(4.0));
    CHECK(x.grad[2] == doctest::Approx(6.0));
}

TEST_CASE("backward errors: non-scalar root, second call") {
    RngStream rng(9);
    Tensor x = random_tensor({3}, rng);
    x.requires_grad = true;
    {
        Graph g;
        ValueId xi = g.leaf(x);
        CHECK_THROWS_AS(g.backward(xi), std::invalid_argument);
    }
    {
        Graph g;
        ValueId root = g.sum(g.leaf(x));
        g.backward(root);
        CHECK_THROWS_AS(g.backward(root), std::runtime_error);
        CHECK_THROWS_AS(g.sum(root), std::runtime_error);
    }
}

TEST_CASE("non-participating leaf gets zero grad") {
    RngStream rng(13);
    Tensor x = random_tensor({3}, rng);
    Tensor y = random_tensor({3}, rng);
    x.requires_grad = true;
    y.requires_grad = true;
    Graph g;
    ValueId xi = g.leaf(x);
    g.leaf(y);
    g.backward(g.sum(xi));
    REQUIRE(y.grad.size() == y.data.size());
    for (float v : y.grad) CHECK(v == 0.0f);
}

TEST_CASE("finite_diff_check on sum is exact") {
    RngStream rng(17);
    Tensor x = random_tensor({5}, rng);
    auto f = [](Graph& g, ValueId xi) { return g.sum(xi); };
    CHECK(finite_diff_check(f, x, 1e-3) < 1e-6);
}

TEST_CASE("finite_diff_check on sum of squares") {
    RngStream rng(19);
    Tensor x = random_tensor({8}, rng);
    auto f = [](Graph& g, ValueId xi) { return g.sum(g.mul(xi, xi)); };
    CHECK(finite_diff_check(f, x, 1e-3) < 1e-3);
}

TEST_CASE("finite_diff_check rejects non-deterministic f") {
    Tensor x = Tensor::zeros({2});
    int calls = 0;
    auto f = [&calls](Graph& g, ValueId xi) {
        Tensor noise = Tensor::full({2}, float(calls++));
        return g.sum(g.add(xi, g.constant(noise)));
    };
    CHECK_THROWS_AS(finite_diff_check(f, x, 1e-3), std::runtime_error);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
    RngStream rng(23);
    Tensor w1 = random_tensor({4, 8}, rng, 0.4f);
    Tensor b1 = random_tensor({8}, rng, 0.1f);
    Tensor w2 = random_tensor({8, 3}, rng, 0.4f);
    Tensor x = random_tensor({2, 4}, rng, 0.8f);

    auto net = [&](Graph& g, ValueId xi) {
        ValueId h = g.gelu(g.add(g.matmul(xi, g.leaf(w1)), g.leaf(b1)));
        ValueId out = g.matmul(h, g.leaf(w2));
        return g.sum(g.mul(out, out));
    };
    CHECK(finite_diff_check(net, x, 1e-3) < 1e-3);

    // Same loss, differentiated w.r.t. the first weight matrix.
    auto net_w = [&](Graph& g, ValueId wi) {
        ValueId h = g.gelu(g.add(g.matmul(g.leaf(x), wi), g.leaf(b1)));
        ValueId out = g.matmul(h, g.leaf(w2));
        return g.sum(g.mul(out, out));
    };
    CHECK(finite_diff_check(net_w, w1, 1e-3) < 1e-3);
}

TEST_CASE("layer_norm, softmax, concat, slices, patchify, embedding, nll vs finite differences") {
    RngStream rng(29);
    Tensor gamma = random_tensor({6}, rng, 0.5f);
    for (auto& v : gamma.data) v += 1.0f;
    Tensor beta = random_tensor({6}, rng, 0.2f);

    Tensor x = random_tensor({4, 6}, rng);
    auto f_ln = [&](Graph& g, ValueId xi) {
        ValueId y = g.layer_norm(xi, g.leaf(gamma), g.leaf(beta));
        return g.sum(g.mul(y, y));
    };
    CHECK(finite_diff_check(f_ln, x, 1e-3) < 1e-3);

    auto f_ln_gamma = [&](Graph& g, ValueId gi) {
        ValueId y = g.layer_norm(g.leaf(x), gi, g.leaf(beta));
        return g.sum(g.mul(y, y));
    };
    CHECK(finite_diff_check(f_ln_gamma, gamma, 1e-3) < 1e-3);

    auto f_sm = [&](Graph& g, ValueId xi) {
        ValueId p = g.softmax(xi);
        return g.sum(g.mul(p, p));
    };
    CHECK(finite_diff_check(f_sm, x, 1e-3) < 1e-3);

    auto f_mix = [&](Graph& g, ValueId xi) {
        ValueId top = g.slice_rows(xi, 0, 2);
        ValueId bottom = g.slice_rows(xi, 2, 4);
        ValueId glued = g.concat({top, bottom}, 0);
        ValueId left = g.slice_cols(glued, 0, 3);
        ValueId right = g.slice_cols(glued, 3, 6);
        ValueId wide = g.concat({right, left}, 1);
        ValueId flat = g.reshape(wide, {24});
        return g.sum(g.mul(flat, flat));
    };
    CHECK(finite_diff_check(f_mix, x, 1e-3) < 1e-3);

    Tensor img = random_tensor({4, 4, 3}, rng);
    auto f_patch = [&](Graph& g, ValueId ii) {
        ValueId p = g.patchify(ii, 2);
        return g.sum(g.mul(p, p));
    };
    CHECK(finite_diff_check(f_patch, img, 1e-3) < 1e-3);

    Tensor table = random_tensor({5, 4}, rng);
    std::vector<int> ids = {1, 3, 3, 0};
    auto f_emb = [&](Graph& g, ValueId ti) {
        ValueId e = g.embedding(ti, ids);
        return g.sum(g.mul(e, e));
    };
    CHECK(finite_diff_check(f_emb, table, 1e-3) < 1e-3);

    Tensor logits = random_tensor({3, 5}, rng, 2.0f);
    std::vector<int> targets = {2, 0, 4};
    auto f_nll = [&](Graph& g, ValueId li) { return g.nll(li, targets); };
    CHECK(finite_diff_check(f_nll, logits, 1e-3) < 1e-3);
}

TEST_CASE("patchify layout is the row-major patch block") {
    // 2x2 image, 3 channels, patch 1: each patch row is one pixel's channels.
    Tensor img = Tensor::from({2, 2, 3},
                              {0, 1, 2,  3, 4, 5,
                               6, 7, 8,  9, 10, 11});
    Graph g;
    ValueId p = g.patchify(g.leaf(img), 1);
    CHECK(g.value(p).shape == std::vector<int>{4, 3});
    CHECK(g.value(p).data == img.data);
}

TEST_CASE("nll equals manual log-softmax pick") {
    Tensor logits = Tensor::from({2, 3}, {0.5f, -0.25f, 1.5f, 2.0f, 0.0f, -1.0f});
    std::vector<int> targets = {2, 0};
    Graph g;
    ValueId loss = g.nll(g.leaf(logits), targets);
    double expect = 0;
    for (int r = 0; r < 2; ++r) {
        double denom = 0;
        for (int j = 0; j < 3; ++j) denom += std::exp(double(logits.data[size_t(r) * 3 + j]));
        expect -= std::log(std::exp(double(logits.data[size_t(r) * 3 + targets[size_t(r)]])) / denom);
    }
    CHECK(g.value(loss).data[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("gradient linearity across random graphs") {
    RngStream rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({6}, rng);
        const float a = rng.next_uniform(-2.0f, 2.0f);
        const float b = rng.next_uniform(-2.0f, 2.0f);

        auto grad_of = [&x](auto&& build) {
            Tensor copy = x;
            copy.requires_grad = true;
            Graph g;
            g.backward(build(g, g.leaf(copy)));
            return copy.grad;
        };
        auto f = [](Graph& g, ValueId xi) { return g.sum(g.mul(xi, xi)); };
        auto h = [](Graph& g, ValueId xi) { return g.sum(g.gelu(xi)); };

        auto gf = grad_of(f);
        auto gh = grad_of(h);
        auto combined = grad_of([&](Graph& g, ValueId xi) {
            return g.add(g.scale(f(g, xi), a), g.scale(h(g, xi), b));
        });
        for (size_t i = 0; i < combined.size(); ++i) {
            CHECK(combined[i] ==
                  doctest::Approx(a * gf[i] + b * gh[i]).epsilon(1e-5).scale(1.0));
        }
    }
}

TEST_CASE("identical graphs give bit-identical outputs and gradients") {
    RngStream rng(37);
    Tensor w = random_tensor({6, 6}, rng);
    Tensor x = random_tensor({4, 6}, rng);

    auto run = [&]() {
        Tensor xc = x;
        xc.requires_grad = true;
        Graph g;
        ValueId out = g.softmax(g.matmul(g.leaf(xc), g.leaf(w)));
        ValueId root = g.sum(g.mul(out, out));
        float val = g.value(root).data[0];
        g.backward(root);
        return std::pair<float, std::vector<float>>(val, xc.grad);
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(std::memcmp(&v1, &v2, sizeof(float)) == 0);
    REQUIRE(g1.size() == g2.size());
    CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);
}

TEST_CASE("validate_finite flags NaN and Inf") {
    Tensor t = Tensor::from({2}, {1.0f, 2.0f});
    CHECK_NOTHROW(t.validate_finite("test"));
    t.data[1] = std::nanf("");
    CHECK_THROWS_AS(t.validate_finite("test"), std::runtime_error);
    t.data[1] = INFINITY;
    CHECK_THROWS_AS(t.validate_finite("test"), std::runtime_error);
}

TEST_CASE("broadcast add/mul over trailing suffix and scalar") {
    Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor row = Tensor::from({3}, {10, 20, 30});
    Tensor s = Tensor::from({1}, {2});
    Graph g;
    ValueId out = g.add(g.leaf(a), g.leaf(row));
    CHECK(g.value(out).data == std::vector<float>{11, 22, 33, 14, 25, 36});
    ValueId prod = g.mul(g.leaf(a), g.leaf(s));
    CHECK(g.value(prod).data == std::vector<float>{2, 4, 6, 8, 10, 12});

    Tensor bad = Tensor::from({2}, {1, 1});
    ValueId ia = g.leaf(a), ib = g.leaf(bad);
    CHECK_THROWS_AS(g.add(ia, ib), std::invalid_argument);
}
