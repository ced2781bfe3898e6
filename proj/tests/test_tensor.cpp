#include "emoc/tensor.hpp"

#include <cmath>
#include <cstring>
#include <limits>

#include "doctest.h"
#include "emoc/rng.hpp"

using namespace emoc;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(lo, hi);
    return Tensor::from(std::move(shape), std::move(v));
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
    Rng rng(1);
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor a = random_tensor({3, 3}, rng);
    Tensor prod = matmul(eye, a);
    for (size_t i = 0; i < 9; ++i) CHECK(prod.values()[i] == doctest::Approx(a.values()[i]).epsilon(1e-15));

    Tensor b = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor c = Tensor::from({2, 1}, {5, 6});
    Tensor r = matmul(b, c);
    CHECK(r.shape() == Shape{2, 1});
    CHECK(r.values()[0] == 17.0);
    CHECK(r.values()[1] == 39.0);
}

TEST_CASE("matmul rejects mismatched shapes, names both") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 5});
    try {
        matmul(a, b);
        FAIL("expected shape error");
    } catch (const std::invalid_argument& e) {
        std::string msg = e.what();
        CHECK(msg.find("(2, 3)") != std::string::npos);
        CHECK(msg.find("(4, 5)") != std::string::npos);
    }
}

TEST_CASE("gradient of sum(A*B) w.r.t. A matches finite differences") {
    Rng rng(7);
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    double err = grad_check(
        [&](const std::vector<Tensor>& in, GradTape* tape) { return sum(matmul(in[0], in[1], tape), tape); },
        {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("matmul associativity at numeric tolerance") {
    Rng rng(11);
    for (int iter = 0; iter < 20; ++iter) {
        int64_t m = 1 + static_cast<int64_t>(rng.below(8));
        int64_t k = 1 + static_cast<int64_t>(rng.below(8));
        int64_t n = 1 + static_cast<int64_t>(rng.below(8));
        int64_t q = 1 + static_cast<int64_t>(rng.below(8));
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c = random_tensor({n, q}, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (size_t i = 0; i < left.values().size(); ++i)
            CHECK(std::abs(left.values()[i] - right.values()[i]) < 1e-9);
    }
}

TEST_CASE("softmax trivial values") {
    Tensor x = Tensor::from({4}, {0, 0, 0, 0});
    Tensor y = softmax(x, 0);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));

    Tensor big = Tensor::from({2}, {1000, 1000});
    Tensor yb = softmax(big, 0);
    CHECK(yb.values()[0] == 0.5);
    CHECK(yb.values()[1] == 0.5);
}

TEST_CASE("softmax shift invariance and row sums") {
    Rng rng(23);
    for (int iter = 0; iter < 50; ++iter) {
        int64_t rows = 1 + static_cast<int64_t>(rng.below(4));
        int64_t cols = 1 + static_cast<int64_t>(rng.below(6));
        Tensor x = random_tensor({rows, cols}, rng, -5.0, 5.0);
        double c = rng.uniform(-100.0, 100.0);
        std::vector<double> shifted = x.values();
        for (double& v : shifted) v += c;
        Tensor y1 = softmax(x, -1);
        Tensor y2 = softmax(Tensor::from(x.shape(), shifted), -1);
        for (size_t i = 0; i < y1.values().size(); ++i)
            CHECK(y1.values()[i] == doctest::Approx(y2.values()[i]).epsilon(1e-12));
        for (int64_t r = 0; r < rows; ++r) {
            double s = 0;
            for (int64_t j = 0; j < cols; ++j) s += y1.values()[static_cast<size_t>(r * cols + j)];
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("softmax with -inf entries gives exactly zero weight") {
    double ninf = -std::numeric_limits<double>::infinity();
    Tensor x = Tensor::from({4}, {0.3, ninf, -0.7, ninf});
    Tensor y = softmax(x, 0);
    CHECK(y.values()[1] == 0.0);
    CHECK(y.values()[3] == 0.0);
    double s = y.values()[0] + y.values()[2];
    CHECK(std::abs(s - 1.0) <= 1e-12);
}

TEST_CASE("layer_norm trivial values") {
    Tensor gamma = Tensor::full({3}, 1.0);
    Tensor beta = Tensor::zeros({3});
    Tensor constant = Tensor::from({1, 3}, {5, 5, 5});
    Tensor y = layer_norm(constant, gamma, beta);
    for (double v : y.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor x = Tensor::from({1, 2}, {1, 3});
    Tensor y2 = layer_norm(x, g2, b2, 1e-12);
    CHECK(y2.values()[0] == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(y2.values()[1] == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("gelu trivial values") {
    Tensor x = Tensor::from({3}, {0.0, 6.0, -1.0});
    Tensor y = gelu(x);
    CHECK(y.values()[0] == 0.0);
    CHECK(std::abs(y.values()[1] - 6.0) < 1e-6);
    CHECK(y.values()[2] < 0.0);
}

TEST_CASE("cross_entropy trivial values and analytic gradient") {
    Tensor uniform = Tensor::zeros({1, 4});
    CHECK(cross_entropy(uniform, {2}).item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    Tensor saturated = Tensor::from({1, 4}, {0, 0, 30, 0});
    CHECK(cross_entropy(saturated, {2}).item() < 1e-9);

    CHECK_THROWS_AS(cross_entropy(uniform, {4}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(uniform, {-1}), std::invalid_argument);

    // gradient equals (softmax - one-hot)/batch
    Rng rng(3);
    Tensor logits = random_tensor({3, 5}, rng, -2.0, 2.0);
    std::vector<int64_t> labels = {1, 4, 0};
    logits.set_requires_grad(true);
    GradTape tape;
    Tensor loss = cross_entropy(logits, labels, &tape);
    tape.backward(loss);
    Tensor probs = softmax(logits, -1);
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t j = 0; j < 5; ++j) {
            double expected = (probs.values()[static_cast<size_t>(r * 5 + j)] - (labels[static_cast<size_t>(r)] == j ? 1.0 : 0.0)) / 3.0;
            CHECK(std::abs(logits.grad()[static_cast<size_t>(r * 5 + j)] - expected) < 1e-8);
        }

    double err = grad_check(
        [&](const std::vector<Tensor>& in, GradTape* t) { return cross_entropy(in[0], labels, t); }, {logits});
    CHECK(err < 1e-8);
}

TEST_CASE("grad_check basics") {
    Tensor x = Tensor::from({2}, {1, 2});
    double err = grad_check(
        [](const std::vector<Tensor>& in, GradTape* tape) { return sum(mul(in[0], in[0], tape), tape); }, {x});
    CHECK(err < 1e-8);
    GradTape tape;
    Tensor x2 = Tensor::from({2}, {1, 2}).set_requires_grad(true);
    Tensor loss = sum(mul(x2, x2, &tape), &tape);
    tape.backward(loss);
    CHECK(x2.grad()[0] == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(x2.grad()[1] == doctest::Approx(4.0).epsilon(1e-12));

    // constant function: zero gradient, zero error
    double cerr = grad_check(
        [](const std::vector<Tensor>&, GradTape*) { return Tensor::scalar(3.5); }, {Tensor::from({2}, {1, 2})});
    CHECK(cerr == 0.0);

    // non-scalar output rejected
    CHECK_THROWS_AS(grad_check([](const std::vector<Tensor>& in, GradTape*) { return in[0]; },
                               {Tensor::from({2}, {1, 2})}),
                    std::invalid_argument);
}

TEST_CASE("every backward rule passes grad_check on random shapes") {
    // >= 100 randomized cases across the op set, all in double precision.
    Rng rng(2024);
    int cases = 0;
    auto dims = [&](int64_t cap) { return 1 + static_cast<int64_t>(rng.below(static_cast<uint64_t>(cap))); };

    for (int iter = 0; iter < 8; ++iter) {
        int64_t m = dims(4), k = dims(4), n = dims(4), b = dims(3);

        // elementwise pair ops
        for (auto op : {0, 1, 2}) {
            Tensor x = random_tensor({m, n}, rng);
            Tensor y = random_tensor({m, n}, rng);
            double err = grad_check(
                [op](const std::vector<Tensor>& in, GradTape* t) {
                    Tensor r = op == 0 ? add(in[0], in[1], t) : op == 1 ? sub(in[0], in[1], t) : mul(in[0], in[1], t);
                    return mean(r, t);
                },
                {x, y});
            CHECK(err < 1e-4);
            ++cases;
        }

        {
            Tensor x = random_tensor({m, n}, rng);
            double c = rng.uniform(-2.0, 2.0);
            CHECK(grad_check([c](const std::vector<Tensor>& in, GradTape* t) { return sum(scale(in[0], c, t), t); },
                             {x}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m, n}, rng);
            Tensor bias = random_tensor({n}, rng);
            CHECK(grad_check(
                      [](const std::vector<Tensor>& in, GradTape* t) { return mean(add_bias(in[0], in[1], t), t); },
                      {x, bias}) < 1e-4);
            ++cases;
        }
        {
            Tensor a = random_tensor({m, k}, rng);
            Tensor bmat = random_tensor({k, n}, rng);
            CHECK(grad_check(
                      [](const std::vector<Tensor>& in, GradTape* t) { return mean(matmul(in[0], in[1], t), t); },
                      {a, bmat}) < 1e-4);
            ++cases;
        }
        {
            Tensor a = random_tensor({b, m, k}, rng);
            Tensor bmat = random_tensor({b, k, n}, rng);
            CHECK(grad_check(
                      [](const std::vector<Tensor>& in, GradTape* t) { return mean(matmul(in[0], in[1], t), t); },
                      {a, bmat}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m, k, n}, rng);
            CHECK(grad_check(
                      [m, k, n](const std::vector<Tensor>& in, GradTape* t) {
                          return mean(reshape(in[0], {k * n, m}, t), t);
                      },
                      {x}) < 1e-4);
            ++cases;
            CHECK(grad_check(
                      [](const std::vector<Tensor>& in, GradTape* t) {
                          Tensor p = permute(in[0], {2, 0, 1}, t);
                          return mean(mul(p, p, t), t);
                      },
                      {x}) < 1e-4);
            ++cases;
            CHECK(grad_check(
                      [](const std::vector<Tensor>& in, GradTape* t) {
                          Tensor p = transpose_last2(in[0], t);
                          return mean(mul(p, p, t), t);
                      },
                      {x}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m, n}, rng, -3.0, 3.0);
            int axis = static_cast<int>(rng.below(2));
            Tensor w = random_tensor({m, n}, rng);
            CHECK(grad_check(
                      [axis, w](const std::vector<Tensor>& in, GradTape* t) {
                          return sum(mul(softmax(in[0], axis, t), w, t), t);
                      },
                      {x}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m, n}, rng, -2.0, 2.0);
            Tensor gamma = random_tensor({n}, rng, 0.5, 1.5);
            Tensor beta = random_tensor({n}, rng);
            Tensor w = random_tensor({m, n}, rng);
            CHECK(grad_check(
                      [w](const std::vector<Tensor>& in, GradTape* t) {
                          return sum(mul(layer_norm(in[0], in[1], in[2], 1e-6, t), w, t), t);
                      },
                      {x, gamma, beta}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m, n}, rng, -3.0, 3.0);
            CHECK(grad_check([](const std::vector<Tensor>& in, GradTape* t) { return sum(gelu(in[0], t), t); },
                             {x}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m, n}, rng);
            uint64_t seed = rng.next_u64();
            CHECK(grad_check(
                      [seed](const std::vector<Tensor>& in, GradTape* t) {
                          return sum(dropout(in[0], 0.4, true, seed, t), t);
                      },
                      {x}) < 1e-4);
            ++cases;
        }
        {
            Tensor x = random_tensor({m + 2, n}, rng);
            std::vector<int64_t> idx = {0, m, m, 1};
            Tensor w = random_tensor({4, n}, rng);
            CHECK(grad_check(
                      [&idx, w](const std::vector<Tensor>& in, GradTape* t) {
                          return sum(mul(gather_rows(in[0], idx, t), w, t), t);
                      },
                      {x}) < 1e-4);
            ++cases;
        }
        {
            Tensor logits = random_tensor({m, 2 + n}, rng, -2.0, 2.0);
            std::vector<int64_t> labels;
            for (int64_t r = 0; r < m; ++r) labels.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(2 + n))));
            CHECK(grad_check(
                      [&labels](const std::vector<Tensor>& in, GradTape* t) { return cross_entropy(in[0], labels, t); },
                      {logits}) < 1e-4);
            ++cases;
        }
    }
    CHECK(cases >= 100);
}

TEST_CASE("backward never mutates forward values") {
    Rng rng(5);
    Tensor x = random_tensor({3, 4}, rng);
    Tensor w = random_tensor({4, 4}, rng);
    x.set_requires_grad(true);
    w.set_requires_grad(true);
    GradTape tape;
    Tensor gamma = Tensor::full({4}, 1.0);
    Tensor beta = Tensor::zeros({4});
    Tensor h = layer_norm(gelu(matmul(x, w, &tape), &tape), gamma, beta, 1e-12, &tape);
    Tensor s = softmax(h, -1, &tape);
    Tensor loss = mean(s, &tape);

    std::vector<std::vector<double>> snapshots = {h.values(), s.values(), loss.values(), x.values(), w.values()};
    tape.backward(loss);
    std::vector<const Tensor*> tensors = {&h, &s, &loss, &x, &w};
    for (size_t i = 0; i < tensors.size(); ++i) {
        REQUIRE(tensors[i]->values().size() == snapshots[i].size());
        CHECK(std::memcmp(tensors[i]->values().data(), snapshots[i].data(),
                          snapshots[i].size() * sizeof(double)) == 0);
    }
}

TEST_CASE("grad accumulates once per backward even when a tensor is reused") {
    Tensor x = Tensor::from({2}, {3.0, -1.5}).set_requires_grad(true);
    GradTape tape;
    Tensor y = add(x, x, &tape);          // 2x
    Tensor z = sum(mul(y, x, &tape), &tape);  // sum(2x^2), dz/dx = 4x
    tape.backward(z);
    CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(-6.0).epsilon(1e-12));

    // a second backward pass re-derives the same gradient, not twice it
    tape.backward(z);
    CHECK(x.grad()[0] == doctest::Approx(12.0).epsilon(1e-12));
}

TEST_CASE("dropout semantics") {
    Rng rng(9);
    Tensor x = random_tensor({4, 8}, rng);
    Tensor eval_out = dropout(x, 0.5, false, 123);
    CHECK(eval_out.same_storage(x));
    Tensor zero_p = dropout(x, 0.0, true, 123);
    CHECK(zero_p.same_storage(x));

    Tensor a = dropout(x, 0.5, true, 42);
    Tensor b = dropout(x, 0.5, true, 42);
    CHECK(a.values() == b.values());
    bool saw_zero = false, saw_scaled = false;
    for (size_t i = 0; i < a.values().size(); ++i) {
        if (a.values()[i] == 0.0) {
            saw_zero = true;
        } else {
            CHECK(a.values()[i] == doctest::Approx(x.values()[i] / 0.5).epsilon(1e-15));
            saw_scaled = true;
        }
    }
    CHECK(saw_zero);
    CHECK(saw_scaled);

    CHECK_THROWS_AS(dropout(x, 1.0, true, 1), std::invalid_argument);
    CHECK_THROWS_AS(dropout(x, -0.1, true, 1), std::invalid_argument);
}

TEST_CASE("forward ops keep finite values on finite inputs") {
    Rng rng(77);
    for (int iter = 0; iter < 10; ++iter) {
        Tensor x = random_tensor({3, 5}, rng, -50.0, 50.0);
        Tensor g = random_tensor({5}, rng, 0.1, 2.0);
        Tensor b = random_tensor({5}, rng);
        for (const Tensor& t : {softmax(x, -1), gelu(x), layer_norm(x, g, b)})
            for (double v : t.values()) CHECK(std::isfinite(v));
    }
}

TEST_CASE("tensor invariants") {
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::zeros({0}), std::invalid_argument);
    CHECK_THROWS_AS(Tensor::zeros({2, -1}), std::invalid_argument);
    Tensor s = Tensor::scalar(2.5);
    CHECK(s.item() == 2.5);
    CHECK_THROWS_AS(Tensor::zeros({2}).item(), std::invalid_argument);
}
