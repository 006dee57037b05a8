// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "moct/optimizer.hpp"
#include "moct/tensor.hpp"
#include "test_util.hpp"

using namespace moct;
using namespace moct::testutil;

TEST_CASE("matmul identity and projector") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor out = ops::matmul<float>(nullptr, eye, a);
    CHECK(out.vec() == std::vector<float>{1, 2, 3, 4});

    Tensor proj = Tensor::from({2, 2}, {1, 0, 0, 0});
    Tensor b = Tensor::from({2, 2}, {5, 6, 7, 8});
    Tensor pb = ops::matmul<float>(nullptr, proj, b);
    CHECK(pb.vec() == std::vector<float>{5, 6, 0, 0});
}

TEST_CASE("matmul random instance vs triple-loop oracle") {
    Tensor a = random_tensor<float>({3, 4}, 11);
    Tensor b = random_tensor<float>({4, 2}, 12);
    Tensor out = ops::matmul<float>(nullptr, a, b);
    // naive oracle
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 2; ++j) {
            double acc = 0.0;
            for (int l = 0; l < 4; ++l) acc += static_cast<double>(a.data()[i * 4 + l]) * b.data()[l * 2 + j];
            CHECK(std::abs(acc - out.data()[i * 2 + j]) < 1e-6);
        }
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(ops::matmul<float>(nullptr, a, b), doctest::Contains("[2,3]"), ShapeError);
}

TEST_CASE("matmul batched against flattened reference") {
    // [2,3,4] x [2,4,2] batched equals per-slice 2D matmuls
    Tensor a = random_tensor<float>({2, 3, 4}, 21);
    Tensor b = random_tensor<float>({2, 4, 2}, 22);
    Tensor out = ops::matmul<float>(nullptr, a, b);
    REQUIRE(out.shape() == Shape{2, 3, 2});
    for (int g = 0; g < 2; ++g) {
        Tensor as = Tensor::from({3, 4}, std::vector<float>(a.vec().begin() + g * 12, a.vec().begin() + (g + 1) * 12));
        Tensor bs = Tensor::from({4, 2}, std::vector<float>(b.vec().begin() + g * 8, b.vec().begin() + (g + 1) * 8));
        Tensor os = ops::matmul<float>(nullptr, as, bs);
        for (int i = 0; i < 6; ++i) CHECK(out.data()[g * 6 + i] == doctest::Approx(os.data()[i]).epsilon(1e-6));
    }
}

TEST_CASE("matmul transpose_b matches explicit transpose") {
    Tensor a = random_tensor<float>({3, 4}, 31);
    Tensor bt = random_tensor<float>({5, 4}, 32);  // b^T stored as [5,4]
    Tensor out = ops::matmul<float>(nullptr, a, bt, true);
    REQUIRE(out.shape() == Shape{3, 5});
    std::vector<float> b(20);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) b[j * 5 + i] = bt.data()[i * 4 + j];
    Tensor ref = ops::matmul<float>(nullptr, a, Tensor::from({4, 5}, b));
    CHECK(max_abs_diff(out, ref) < 1e-6);
}

TEST_CASE("softmax symmetric and stable") {
    Tensor x = Tensor::from({2}, {0, 0});
    Tensor y = ops::softmax<float>(nullptr, x);
    CHECK(y.data()[0] == doctest::Approx(0.5));
    CHECK(y.data()[1] == doctest::Approx(0.5));

    Tensor big = Tensor::from({2}, {1000, 1000});
    Tensor yb = ops::softmax<float>(nullptr, big);
    CHECK(yb.data()[0] == doctest::Approx(0.5));
    CHECK(yb.data()[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax hand-evaluated ratio") {
    Tensor x = Tensor::from({2}, {0.0f, std::log(3.0f)});
    Tensor y = ops::softmax<float>(nullptr, x);
    CHECK(y.data()[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(y.data()[1] == doctest::Approx(0.75).epsilon(1e-6));
}

TEST_CASE("softmax outputs sum to 1 and are shift-invariant") {
    for (uint64_t seed : {1ull, 2ull, 3ull}) {
        Tensor x = random_tensor<float>({4, 7}, seed, 3.0);
        Tensor y = ops::softmax<float>(nullptr, x, -1);
        for (int r = 0; r < 4; ++r) {
            double sum = 0.0;
            for (int c = 0; c < 7; ++c) sum += y.data()[r * 7 + c];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
        Tensor shifted = x.clone();
        for (auto& v : shifted.vec()) v += 13.5f;
        Tensor ys = ops::softmax<float>(nullptr, shifted, -1);
        CHECK(max_abs_diff(y, ys) < 1e-6);
    }
}

TEST_CASE("softmax along a middle axis") {
    Tensor x = random_tensor<float>({2, 3, 4}, 5);
    Tensor y = ops::softmax<float>(nullptr, x, 1);
    for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 4; ++c) {
            double sum = 0.0;
            for (int m = 0; m < 3; ++m) sum += y.data()[(b * 3 + m) * 4 + c];
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
}

TEST_CASE("cross_entropy uniform logits give ln(vocab)") {
    const int v = 11;
    Tensor logits = Tensor::zeros({1, 3, v});
    Tensor loss = ops::cross_entropy<float>(nullptr, logits, {1, 5, 9});
    CHECK(loss.data()[0] == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-6));
}

TEST_CASE("cross_entropy confident correct prediction is near zero") {
    Tensor logits = Tensor::zeros({1, 1, 4});
    logits.data()[2] = 30.0f;
    Tensor loss = ops::cross_entropy<float>(nullptr, logits, {2});
    CHECK(loss.data()[0] < 1e-5);
}

TEST_CASE("cross_entropy random instance vs log-sum-exp oracle") {
    Tensor logits = random_tensor<float>({2, 3, 5}, 77, 2.0);
    std::vector<int> targets = {0, 4, 2, 1, 3, 0};
    Tensor loss = ops::cross_entropy<float>(nullptr, logits, targets);
    double total = 0.0;
    for (int r = 0; r < 6; ++r) {
        double mx = -1e30;
        for (int j = 0; j < 5; ++j) mx = std::max(mx, static_cast<double>(logits.data()[r * 5 + j]));
        double sum = 0.0;
        for (int j = 0; j < 5; ++j) sum += std::exp(static_cast<double>(logits.data()[r * 5 + j]) - mx);
        total += mx + std::log(sum) - logits.data()[r * 5 + targets[r]];
    }
    CHECK(std::abs(loss.data()[0] - total / 6.0) < 1e-5);
}

TEST_CASE("cross_entropy rejects out-of-range target with position") {
    Tensor logits = Tensor::zeros({1, 2, 3});
    CHECK_THROWS_WITH_AS(ops::cross_entropy<float>(nullptr, logits, {1, 7}), doctest::Contains("position 1"),
                         IndexError);
}

TEST_CASE("backward of x*x at x=3 gives 6") {
    Tensor x = Tensor::from({1, 1}, {3.0f});
    Tape tape;
    Tensor y = ops::matmul(&tape, x, x);
    tape.backward(y);
    CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar loss") {
    Tensor x = Tensor::from({1, 2}, {1.0f, 2.0f});
    Tape tape;
    Tensor y = ops::scale(&tape, x, 2.0f);
    CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("backward on empty tape is a contract error") {
    Tensor x = Tensor::scalar(1.0f);
    Tape tape;
    CHECK_THROWS_AS(tape.backward(x), ContractError);
}

TEST_CASE("gelu gradient matches finite differences") {
    TensorT<double> x = random_tensor<double>({1, 8}, 9);
    TapeT<double> tape;
    TensorT<double> y = ops::gelu(&tape, x);
    TensorT<double> ones = TensorT<double>::full({8, 1}, 1.0);
    TensorT<double> loss = ops::matmul(&tape, y, ones);  // sum of gelu outputs
    tape.backward(loss);

    const double eps = 1e-6;
    auto f = [](double u) {
        return 0.5 * u * (1.0 + std::tanh(0.7978845608028654 * (u + 0.044715 * u * u * u)));
    };
    for (int i = 0; i < 8; ++i) {
        const double v = x.data()[static_cast<size_t>(i)];
        const double fd = (f(v + eps) - f(v - eps)) / (2 * eps);
        CHECK(rel_err(x.grad()[static_cast<size_t>(i)], fd) < 1e-5);
    }
}

TEST_CASE("optimizer leaves fully frozen store untouched") {
    ParamStore p;
    p.add("a", Tensor::from({2}, {1.0f, 2.0f}), true);
    p.add("b", Tensor::from({1}, {3.0f}), true);
    p.at("a").ensure_grad();
    p.at("a").grad()[0] = 5.0f;
    const uint64_t before = p.store_hash();
    Adam adam;
    adam.step(p, 0.1f);
    CHECK(p.store_hash() == before);
}

TEST_CASE("adam first step equals bias-corrected hand evaluation") {
    ParamStore p;
    p.add("w", Tensor::from({1}, {3.0f}));
    p.at("w").ensure_grad();
    p.at("w").grad()[0] = 1.0f;
    Adam adam;
    adam.step(p, 0.1f);
    // m=0.1, v=1e-3, mhat=1, vhat=1e-3/(1-0.999)=1 -> step = 0.1/(1+eps)
    CHECK(p.at("w").data()[0] == doctest::Approx(2.9).epsilon(1e-6));
}

TEST_CASE("adam zero gradients produce no update") {
    ParamStore p;
    p.add("w", Tensor::from({1}, {1.5f}));
    Adam adam;
    for (int i = 0; i < 2; ++i) {
        p.at("w").ensure_grad();
        adam.step(p, 0.1f);
    }
    CHECK(p.at("w").data()[0] == 1.5f);
}

TEST_CASE("adam trajectory matches scalar recurrence oracle") {
    const std::vector<float> grads = {1.0f, -0.5f, 0.0f, 2.0f, 0.3f};
    ParamStore p;
    p.add("w", Tensor::from({1}, {0.7f}));
    Adam adam;
    // independent scalar recurrence
    double m = 0, v = 0, w = 0.7;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05;
    for (size_t t = 0; t < grads.size(); ++t) {
        p.at("w").ensure_grad();
        p.at("w").grad()[0] = grads[t];
        adam.step(p, static_cast<float>(lr));

        const double g = grads[t];
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, static_cast<double>(t + 1)));
        const double vhat = v / (1 - std::pow(b2, static_cast<double>(t + 1)));
        w -= lr * mhat / (std::sqrt(vhat) + eps);
        CHECK(p.at("w").data()[0] == doctest::Approx(w).epsilon(1e-5));
    }
}

TEST_CASE("adam requires gradients on trainable parameters") {
    ParamStore p;
    p.add("w", Tensor::from({1}, {1.0f}));
    Adam adam;
    CHECK_THROWS_WITH_AS(adam.step(p, 0.1f), doctest::Contains("'w'"), ContractError);
}

TEST_CASE("warmup ramps linearly then holds") {
    CHECK(warmup_lr(1.0f, 0, 1000, 0.01f) == doctest::Approx(0.1));
    CHECK(warmup_lr(1.0f, 4, 1000, 0.01f) == doctest::Approx(0.5));
    CHECK(warmup_lr(1.0f, 9, 1000, 0.01f) == doctest::Approx(1.0));
    CHECK(warmup_lr(1.0f, 500, 1000, 0.01f) == doctest::Approx(1.0));
    CHECK(warmup_lr(1.0f, 0, 100, 0.0f) == doctest::Approx(1.0));
}

TEST_CASE("fusion op trivial points and affine pass-through") {
    Tensor x = random_tensor<float>({2, 3}, 41);
    Tensor y = random_tensor<float>({2, 3}, 42);

    Tensor w0 = Tensor::scalar(0.0f);
    Tensor out0 = ops::fusion<float>(nullptr, x, y, w0);
    CHECK(out0.vec() == y.vec());

    Tensor w1 = Tensor::scalar(1.0f);
    Tensor out1 = ops::fusion<float>(nullptr, x, y, w1);
    CHECK(out1.vec() == x.vec());

    Tensor a = Tensor::from({1}, {2.0f});
    Tensor b = Tensor::from({1}, {4.0f});
    Tensor mid = ops::fusion<float>(nullptr, a, b, Tensor::scalar(0.5f));
    CHECK(mid.data()[0] == doctest::Approx(3.0));

    // fusion(w, x, x) == x exactly, any w
    for (float wv : {0.0f, 0.137f, 0.5f, 0.9f, 1.0f}) {
        Tensor same = ops::fusion<float>(nullptr, x, x, Tensor::scalar(wv));
        CHECK(same.vec() == x.vec());
    }
}

TEST_CASE("fusion rejects mismatched shapes") {
    CHECK_THROWS_AS(ops::fusion<float>(nullptr, Tensor::zeros({2}), Tensor::zeros({3}), Tensor::scalar(0.5f)),
                    ShapeError);
}
