#include <cmath>
#include <random>

#include "doctest.h"
#include "ivs/autodiff.hpp"
#include "ivs/gradcheck.hpp"
#include "ivs/losses.hpp"
#include "oracles.hpp"

using namespace ivs;

TEST_SUITE("autodiff") {
    TEST_CASE("fc then sum has the outer-product gradient") {
        Tape<double> tape;
        const Var x = tape.leaf(Tensor({2}, std::vector<double>{2, 3}), "x");
        const Var w = tape.leaf(Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}), "w");
        const Var b = tape.leaf(Tensor({2}, 0.0), "b");
        const Var loss = ops::sum(tape, ops::linear(tape, x, w, b));
        CHECK(tape.value(loss).item() == 2 + 6 + 6 + 12);
        tape.backward(loss);
        // dL/dW[i][j] = x[j], dL/dx = column sums of W, dL/db = 1
        CHECK(tape.grad(w).values() == std::vector<double>{2, 3, 2, 3});
        CHECK(tape.grad(x).values() == std::vector<double>{4, 6});
        CHECK(tape.grad(b).values() == std::vector<double>{1, 1});
    }

    TEST_CASE("non-participating parameters get exactly zero") {
        Tape<double> tape;
        const Var x = tape.leaf(Tensor({3}, 1.5), "x");
        const Var unused = tape.leaf(Tensor({2, 2}, 7.0), "unused");
        const Var loss = ops::sum(tape, ops::relu(tape, x));
        tape.backward(loss);
        CHECK(tape.grad(unused) == Tensor({2, 2}, 0.0));
        CHECK(tape.grad(x) == Tensor({3}, 1.0));
    }

    TEST_CASE("a shared leaf accumulates both uses") {
        const Tensor w({2, 2}, std::vector<double>{1, -1, 0.5, 2});
        Tape<double> tape;
        const Var p = tape.leaf_ref(w, "w");
        const Var b = tape.constant(Tensor({2}, 0.0));
        const Var a1 = ops::linear(tape, tape.constant(Tensor({2}, std::vector<double>{1, 0})), p, b);
        const Var a2 = ops::linear(tape, tape.constant(Tensor({2}, std::vector<double>{0, 1})), p, b);
        tape.backward(ops::weighted_sum(tape, {ops::sum(tape, a1), ops::sum(tape, a2)}, {1.0, 1.0}));
        CHECK(tape.grad(p) == Tensor({2, 2}, 1.0));
        CHECK(&tape.value(p) == &w);
    }

    TEST_CASE("errors") {
        Tape<double> tape;
        const Var x = tape.leaf(Tensor({3}, 1.0));
        CHECK_THROWS_AS(tape.backward(x), ShapeError);
        CHECK_THROWS_AS(tape.backward(Var{42}), std::logic_error);
        CHECK_THROWS_AS(tape.grad(x), std::logic_error);
        CHECK_THROWS_AS(tape.leaf(Tensor({1}, std::nan(""))), NumericalError);
        CHECK_THROWS_AS(ops::weighted_sum(tape, {x}, {1.0}), ShapeError);
    }

    TEST_CASE("relu subgradient at zero is zero") {
        Tape<double> tape;
        const Var x = tape.leaf(Tensor({3}, std::vector<double>{-1, 0, 1}));
        tape.backward(ops::sum(tape, ops::relu(tape, x)));
        CHECK(tape.grad(x).values() == std::vector<double>{0, 0, 1});
    }

    TEST_CASE("abs_diff subgradient at equality is zero") {
        Tape<double> tape;
        const Var a = tape.leaf(Tensor({2}, std::vector<double>{1, 2}));
        const Var b = tape.leaf(Tensor({2}, std::vector<double>{1, 0}));
        tape.backward(ops::sum(tape, ops::abs_diff(tape, a, b)));
        CHECK(tape.grad(a).values() == std::vector<double>{0, 1});
        CHECK(tape.grad(b).values() == std::vector<double>{0, -1});
    }
}

TEST_SUITE("gradcheck") {
    TEST_CASE("fc layer") {
        std::mt19937_64 rng(21);
        const ScalarGraph fn = [](Tape<double>& t, std::span<const Var> in) {
            return ops::sum(t, ops::relu(t, ops::linear(t, in[0], in[1], in[2])));
        };
        const auto r = grad_check(fn, {oracle::random_tensor({5}, rng), oracle::random_tensor({4, 5}, rng),
                                       oracle::random_tensor({4}, rng)});
        CHECK(r.checks == 5 + 20 + 4);
        CHECK(r.max_relative_error < 1e-4);
    }

    TEST_CASE("conv3d on 1x3x5x5") {
        std::mt19937_64 rng(22);
        const ConvSpec spec{2, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}};
        // A fixed random projection makes the output scalar.
        const Tensor proj = oracle::random_tensor({1, 2 * 3 * 5 * 5}, rng);
        const ScalarGraph fn = [&](Tape<double>& t, std::span<const Var> in) {
            const Var y = ops::conv3d(t, in[0], in[1], in[2], spec);
            return ops::sum(t, ops::linear(t, ops::flatten(t, y), t.constant(proj), t.constant(Tensor({1}, 0.0))));
        };
        const auto r = grad_check(fn, {oracle::random_tensor({1, 3, 5, 5}, rng),
                                           oracle::random_tensor({2, 1, 3, 3, 3}, rng), oracle::random_tensor({2}, rng)});
        CHECK(r.max_relative_error < 1e-4);
    }

    TEST_CASE("non-scalar function is rejected") {
        const ScalarGraph fn = [](Tape<double>& t, std::span<const Var> in) { return ops::relu(t, in[0]); };
        CHECK_THROWS_AS(grad_check(fn, {Tensor({3}, 1.0)}), ShapeError);
        GradCheckOptions bad;
        bad.epsilon = 0.0;
        CHECK_THROWS_AS(grad_check(fn, {Tensor({1}, 1.0)}, bad), ConfigError);
    }

    TEST_CASE("a wrong gradient is caught") {
        std::mt19937_64 rng(23);
        const ScalarGraph fn = [](Tape<double>& t, std::span<const Var> in) {
            return ops::sum(t, ops::linear(t, in[0], in[1], in[2]));
        };
        GradCheckOptions opt;
        opt.perturb_analytic = [](std::vector<Tensor>& g) { g[1][0] *= 1.01; };
        const auto r = grad_check(fn, {oracle::random_tensor({3}, rng), oracle::random_tensor({2, 3}, rng),
                                       oracle::random_tensor({2}, rng)},
                                  opt);
        CHECK(r.max_relative_error > 1e-3);
        CHECK(r.worst == "input 1 [0]");
    }
}

TEST_SUITE("losses") {
    TEST_CASE("identification") {
        CHECK(identification_loss(std::vector<double>{0, 1, 0}, 1) == 0.0);
        CHECK(identification_loss(std::vector<double>(21, 1.0 / 21), 4) == doctest::Approx(std::log(21.0)));
        CHECK(identification_loss(std::vector<double>{0.7, 0.2, 0.1}, 0) == doctest::Approx(0.3567).epsilon(1e-4));
        CHECK(identification_loss(std::vector<double>{1, 0}, 1) == doctest::Approx(-std::log(1e-12)));
        CHECK_THROWS(identification_loss(std::vector<double>{0.5, 0.5}, 2));
    }

    TEST_CASE("verification") {
        CHECK(verification_loss(std::vector<double>{0, 1}, {true}) == 0.0);
        CHECK(verification_loss(std::vector<double>{0.5, 0.5}, {true}) == doctest::Approx(std::log(2.0)));
        CHECK(verification_loss(std::vector<double>{0.5, 0.5}, {false}) == doctest::Approx(std::log(2.0)));
        CHECK(verification_loss(std::vector<double>{0.9, 0.1}, {true}) == doctest::Approx(2.3026).epsilon(1e-4));
    }

    TEST_CASE("contrastive") {
        const std::vector<double> a{0.3, -0.2}, far{2.0, 2.0};
        CHECK(contrastive_loss(a, a, true) == 0.0);
        CHECK(contrastive_loss(a, far, false, 1.0) == 0.0);
        CHECK(contrastive_loss(std::vector<double>{0.0, 0.0}, std::vector<double>{0.3, 0.4}, false, 1.0) ==
              doctest::Approx(0.25));
        CHECK(contrastive_loss(std::vector<double>{0.0, 0.0}, std::vector<double>{0.3, 0.4}, true, 1.0) ==
              doctest::Approx(0.25));
        CHECK_THROWS(contrastive_loss(a, std::vector<double>{1.0}, true));
    }

    TEST_CASE("overall") {
        CHECK(overall_loss(0.3, 0.4, 0.2, {1.0}) == doctest::Approx(0.9));
        CHECK(overall_loss(0.3, 0.4, 5.0, {0.0}) == 0.3 + 0.4);
        CHECK(LossWeights{}.lambda == 1.0);
        CHECK_THROWS_AS(LossWeights{-1.0}.validate(), ConfigError);
    }

    TEST_CASE("overall loss is linear in lambda") {
        std::mt19937_64 rng(31);
        std::uniform_real_distribution<double> u(0.0, 3.0);
        for (int k = 0; k < 100; ++k) {
            const double i1 = u(rng), i2 = u(rng), v = u(rng), l1 = u(rng), l2 = u(rng);
            const double lhs = overall_loss(i1, i2, v, {l1}) + overall_loss(i1, i2, v, {l2});
            const double rhs = overall_loss(i1, i2, v, {l1 + l2}) + i1 + i2;
            CHECK(std::abs(lhs - rhs) <= 1e-12);
        }
    }

    TEST_CASE("losses are nonnegative") {
        std::mt19937_64 rng(32);
        for (int k = 0; k < 50; ++k) {
            const Tensor p = softmax_forward(oracle::random_tensor({5}, rng, -4, 4));
            CHECK(identification_loss(p.data(), static_cast<std::size_t>(k % 5)) >= 0.0);
            const Tensor q = softmax_forward(oracle::random_tensor({2}, rng, -4, 4));
            CHECK(verification_loss(q.data(), {k % 2 == 0}) >= 0.0);
        }
    }

    TEST_CASE("tape cross entropy matches the plain form") {
        Tape<double> tape;
        const Var p = tape.constant(Tensor({3}, std::vector<double>{0.7, 0.2, 0.1}));
        CHECK(tape.value(ops::cross_entropy(tape, p, 0)).item() == identification_loss(std::vector<double>{0.7, 0.2, 0.1}, 0));
        const Var f1 = tape.constant(Tensor({2}, 0.0));
        const Var f2 = tape.constant(Tensor({2}, std::vector<double>{0.3, 0.4}));
        CHECK(tape.value(ops::contrastive(tape, f1, f2, false, 1.0)).item() == doctest::Approx(0.25));
    }
}
