#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "bbh/autograd.hpp"

using namespace bbh;

namespace {

// Independent reference product, plain ijk dot products.
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a.data()[i * k + p] * b.data()[p * n + j];
            out[i * n + j] = acc;
        }
    }
    return Tensor({m, n}, out);
}

Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                     double avoid_below = 0.0) {
    std::vector<double> data(shape_size(shape));
    for (double& v : data) {
        do {
            v = uniform(rng, lo, hi);
        } while (avoid_below > 0.0 && std::abs(v) < avoid_below);
    }
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("matmul identity") {
    Tensor eye({2, 2}, {1, 0, 0, 1});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(eye, b);
    CHECK(c.data() == b.data());
}

TEST_CASE("matmul against triple-loop oracle") {
    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor b({2, 2}, {5, 6, 7, 8});
    Tensor c = matmul(a, b);
    CHECK(c.data() == std::vector<double>{19, 22, 43, 50});

    Rng rng(7);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({3, 5}, rng);
        Tensor y = random_tensor({5, 4}, rng);
        Tensor got = matmul(x, y);
        Tensor want = matmul_oracle(x, y);
        for (std::size_t i = 0; i < got.size(); ++i) {
            CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("matmul shape mismatch") {
    Tensor a({2, 3}, std::vector<double>(6, 1.0));
    Tensor b({2, 3}, std::vector<double>(6, 1.0));
    CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("conv2d identity kernel") {
    Tensor x({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor k({1, 1, 1, 1}, {1.0});
    Tensor y = conv2d(x, k, 1, Padding::valid);
    CHECK(y.shape() == Shape{1, 3, 3, 1});
    CHECK(y.data() == x.data());
}

TEST_CASE("conv2d hand correlation") {
    Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
    Tensor k({2, 2, 1, 1}, {1, 1, 1, 1});
    Tensor y = conv2d(x, k, 1, Padding::valid);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.data()[0] == doctest::Approx(10.0));
}

TEST_CASE("conv2d kernel larger than input") {
    Tensor x({1, 2, 2, 1}, {1, 2, 3, 4});
    Tensor k({3, 3, 1, 1}, std::vector<double>(9, 1.0));
    CHECK_THROWS_AS(conv2d(x, k, 1, Padding::valid), DimensionError);
}

TEST_CASE("conv2d same padding shape") {
    Tensor x({1, 5, 5, 1}, std::vector<double>(25, 1.0));
    Tensor k({3, 3, 1, 2}, std::vector<double>(18, 0.5));
    Tensor y = conv2d(x, k, 1, Padding::same);
    CHECK(y.shape() == Shape{1, 5, 5, 2});
    Tensor y2 = conv2d(x, k, 2, Padding::same);
    CHECK(y2.shape() == Shape{1, 3, 3, 2});
}

TEST_CASE("relu values and kink convention") {
    Tensor x({3}, {-1.0, 0.0, 2.5});
    Tensor y = relu(x);
    CHECK(y.data() == std::vector<double>{0.0, 0.0, 2.5});

    Tape tape;
    Tensor xl = tape.leaf(x);
    Tensor loss = sum(relu(xl));
    Tensor g = tape.backward(loss).at(xl);
    CHECK(g.data() == std::vector<double>{0.0, 0.0, 1.0});  // gradient at 0 is 0
}

TEST_CASE("softmax cross entropy fixtures") {
    Tensor uniform_logits({1, 10}, std::vector<double>(10, 0.3));
    Tensor loss = softmax_cross_entropy(uniform_logits, {4});
    CHECK(loss.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    std::vector<double> saturated(4, 0.0);
    saturated[2] = 1000.0;
    Tensor sat({1, 4}, saturated);
    CHECK(softmax_cross_entropy(sat, {2}).item() < 1e-9);

    Tensor bad({1, 3}, {0, 0, 0});
    CHECK_THROWS_AS(softmax_cross_entropy(bad, {3}), IndexError);
}

TEST_CASE("softmax cross entropy gradient vs finite differences") {
    Rng rng(11);
    Tensor logits = random_tensor({3, 4}, rng);
    std::vector<int> labels = {1, 3, 0};
    double err = gradient_check(
        [&](const Tensor& t) { return softmax_cross_entropy(t, labels); }, logits);
    CHECK(err < 1e-6);
}

TEST_CASE("backward basics") {
    {
        Tape tape;
        Tensor x = tape.leaf(Tensor::scalar(3.0));
        Tensor loss = mul(x, x);
        Tensor g = tape.backward(loss).at(x);
        CHECK(g.item() == doctest::Approx(6.0));
    }
    {
        // loss = x*y + y at (2, 5): dx = 5, dy = 3
        Tape tape;
        Tensor x = tape.leaf(Tensor::scalar(2.0));
        Tensor y = tape.leaf(Tensor::scalar(5.0));
        Tensor loss = add(mul(x, y), y);
        Gradients g = tape.backward(loss);
        CHECK(g.at(x).item() == doctest::Approx(5.0));
        CHECK(g.at(y).item() == doctest::Approx(3.0));
    }
    {
        // leaf not on the loss path gets a zero gradient
        Tape tape;
        Tensor x = tape.leaf(Tensor::scalar(2.0));
        Tensor unused = tape.leaf(Tensor::scalar(7.0));
        Tensor loss = mul(x, x);
        Gradients g = tape.backward(loss);
        CHECK(g.at(unused).item() == 0.0);
        CHECK_FALSE(g.reached(unused));
    }
}

TEST_CASE("backward contract errors") {
    Tape tape;
    Tensor x = tape.leaf(Tensor({2}, {1.0, 2.0}));
    Tensor y = relu(x);
    CHECK_THROWS_AS(tape.backward(y), ContractError);  // non-scalar loss

    Tape tape2;
    Tensor a = tape2.leaf(Tensor::scalar(1.0));
    Tensor loss = mul(a, a);
    tape2.backward(loss);
    CHECK_THROWS_AS(tape2.backward(loss), ContractError);  // one backward per tape
}

TEST_CASE("gradient_check fixtures") {
    Rng rng(3);
    Tensor x = random_tensor({6}, rng);
    CHECK(gradient_check([](const Tensor& t) { return sum(t); }, x) < 1e-9);
    CHECK(gradient_check([](const Tensor& t) { return sum(mul(t, t)); }, x) < 1e-6);
}

TEST_CASE("gradient_check composite MLP loss") {
    Rng rng(5);
    Tensor w1 = random_tensor({4, 8}, rng, -0.5, 0.5);
    Tensor b1 = random_tensor({8}, rng, -0.5, 0.5);
    Tensor w2 = random_tensor({8, 3}, rng, -0.5, 0.5);
    Tensor x = random_tensor({5, 4}, rng, -2.0, 2.0, 1e-3);
    std::vector<int> labels = {0, 2, 1, 1, 0};

    auto f = [&](const Tensor& w) {
        Tensor h = relu(add(matmul(x, reshape(w, {4, 8})), b1));
        Tensor logits = matmul(h, w2);
        return softmax_cross_entropy(logits, labels);
    };
    CHECK(gradient_check(f, reshape(w1, {32})) < 1e-4);
}

TEST_CASE("primitive gradients vs finite differences") {
    Rng rng(17);
    auto check = [&](const char* name, auto f, Tensor x, double tol) {
        INFO(name);
        CHECK(gradient_check(f, x) < tol);
    };

    check("add", [](const Tensor& t) { return sum(add(t, Tensor({4}, {1, 2, 3, 4}))); },
          random_tensor({4}, rng), 1e-6);
    check("add_row_broadcast",
          [](const Tensor& t) {
              Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
              return sum(add(a, t));
          },
          random_tensor({3}, rng), 1e-6);
    check("sub", [](const Tensor& t) { return sum(sub(Tensor({4}, {1, 2, 3, 4}), t)); },
          random_tensor({4}, rng), 1e-6);
    check("mul", [](const Tensor& t) { return sum(mul(t, Tensor({4}, {1, -2, 3, -4}))); },
          random_tensor({4}, rng), 1e-6);
    check("mul_scalar_operand",
          [](const Tensor& t) { return sum(mul(Tensor({3}, {1, 2, 3}), reshape(t, {}))); },
          random_tensor({1}, rng), 1e-6);
    check("matmul",
          [](const Tensor& t) {
              Tensor b({3, 2}, {1, 2, 3, 4, 5, 6});
              return sum(matmul(reshape(t, {2, 3}), b));
          },
          random_tensor({6}, rng), 1e-6);
    check("relu", [](const Tensor& t) { return sum(relu(t)); },
          random_tensor({6}, rng, -2.0, 2.0, 1e-3), 1e-4);
    check("softplus", [](const Tensor& t) { return sum(softplus(t)); },
          random_tensor({6}, rng), 1e-6);
    check("sigmoid", [](const Tensor& t) { return sum(sigmoid(t)); },
          random_tensor({6}, rng), 1e-6);
    check("log", [](const Tensor& t) { return sum(log(t)); },
          random_tensor({6}, rng, 0.2, 2.0), 1e-6);
    check("exp", [](const Tensor& t) { return sum(exp(t)); },
          random_tensor({6}, rng), 1e-6);
    check("mean", [](const Tensor& t) { return mean(mul(t, t)); },
          random_tensor({6}, rng), 1e-6);
    check("slice_concat",
          [](const Tensor& t) {
              std::vector<Tensor> parts = {slice1d(t, 2, 3), slice1d(t, 0, 2)};
              return sum(mul(concat1d(parts), concat1d(parts)));
          },
          random_tensor({5}, rng), 1e-6);
    check("gather",
          [](const Tensor& t) {
              Tensor y = gather1d(t, {0, 2, 2, 1});
              return sum(mul(y, y));
          },
          random_tensor({3}, rng), 1e-6);
    check("stack_rows",
          [](const Tensor& t) {
              std::vector<Tensor> rows = {t, scale(t, 2.0)};
              Tensor m = stack_rows(rows);
              return sum(mul(m, m));
          },
          random_tensor({4}, rng), 1e-6);
    check("conv2d",
          [](const Tensor& t) {
              Tensor k({2, 2, 1, 2}, {0.5, -0.3, 0.2, 0.7, -0.1, 0.4, 0.6, -0.8});
              return sum(conv2d(reshape(t, {1, 3, 3, 1}), k, 1, Padding::same));
          },
          random_tensor({9}, rng), 1e-4);
    check("conv2d_kernel",
          [](const Tensor& t) {
              Tensor x({1, 3, 3, 1}, {1, -2, 3, 0.5, 1.5, -0.5, 2, 0, 1});
              return sum(conv2d(x, reshape(t, {2, 2, 1, 1}), 1, Padding::valid));
          },
          random_tensor({4}, rng), 1e-4);
    check("maxpool2",
          [](const Tensor& t) {
              return sum(maxpool2(reshape(t, {1, 4, 4, 1})));
          },
          random_tensor({16}, rng, -2.0, 2.0, 1e-3), 1e-4);
    check("bce_logits",
          [](const Tensor& t) {
              return binary_cross_entropy_with_logits(t, {1.0, 0.0, 1.0, 0.0});
          },
          random_tensor({4}, rng), 1e-6);
}

TEST_CASE("tape linearity: backward of a sum equals sum of backwards") {
    Rng rng(23);
    Tensor x0 = random_tensor({5}, rng);

    auto grad_of = [&](auto make_loss) {
        Tape tape;
        Tensor x = tape.leaf(x0);
        return tape.backward(make_loss(x)).at(x);
    };
    Tensor g1 = grad_of([](const Tensor& x) { return sum(mul(x, x)); });
    Tensor g2 = grad_of([](const Tensor& x) { return sum(relu(x)); });
    Tensor gsum = grad_of([](const Tensor& x) { return add(sum(mul(x, x)), sum(relu(x))); });
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(gsum.data()[i] == doctest::Approx(g1.data()[i] + g2.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradients accumulate additively at shared nodes") {
    Tape tape;
    Tensor x = tape.leaf(Tensor::scalar(3.0));
    Tensor y = add(mul(x, x), mul(x, x));  // 2x^2, dy/dx = 4x = 12
    CHECK(tape.backward(y).at(x).item() == doctest::Approx(12.0));
}

TEST_CASE("deterministic forward evaluation") {
    Rng rng(31);
    Tensor a = random_tensor({7, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    Tensor c1 = matmul(a, b);
    Tensor c2 = matmul(a, b);
    CHECK(c1.data() == c2.data());  // bit-identical

    Tensor s1 = softplus(a);
    Tensor s2 = softplus(a);
    CHECK(s1.data() == s2.data());
}

TEST_CASE("non-finite forward values are an error") {
    Tensor big = Tensor::full({2}, 1e308);
    CHECK_THROWS_AS(exp(big), NumericError);
    CHECK_THROWS_AS(log(Tensor({1}, {0.0})), NumericError);
    CHECK_THROWS_AS(log(Tensor({1}, {-1.0})), NumericError);
    CHECK_THROWS_AS(mul(big, big), NumericError);
}

TEST_CASE("invariant: shape product equals data length") {
    CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), DimensionError);
    CHECK(Tensor::scalar(4.0).size() == 1);
    CHECK(Tensor::scalar(4.0).rank() == 0);
}
