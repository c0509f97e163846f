#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"
#include "ivs/kernels.hpp"
#include "ivs/network.hpp"
#include "ivs/tensor.hpp"
#include "oracles.hpp"

using namespace ivs;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ivs_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

ConvSpec same_conv(std::size_t filters) { return ConvSpec{filters, {3, 3, 3}, {1, 1, 1}, {1, 1, 1}}; }

}  // namespace

TEST_SUITE("tensor") {
    TEST_CASE("shape checks") {
        CHECK_THROWS_AS(Tensor(Shape{}), ShapeError);
        CHECK_THROWS_AS(Tensor(Shape{2, 0}), ShapeError);
        CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), ShapeError);
        Tensor t({2, 3}, std::vector<double>{0, 1, 2, 3, 4, 5});
        CHECK(t.at({1, 2}) == 5.0);
        CHECK_THROWS_AS(t.at({1}), ShapeError);
        CHECK_THROWS_AS(t.item(), ShapeError);
        CHECK_THROWS_AS(t.reshaped({4}), ShapeError);
        CHECK(t.reshaped({3, 2}).values() == t.values());
        CHECK(Tensor::scalar(2.5).item() == 2.5);
    }

    TEST_CASE("save and load round trip") {
        const auto dir = scratch_dir("tensor");
        std::mt19937_64 rng(3);
        const Tensor t = oracle::random_tensor({2, 3, 4}, rng);
        save_tensor(t, dir / "t");
        CHECK(load_tensor<double>(dir / "t") == t);
        const TensorF f = t.cast<float>();
        save_tensor(f, dir / "f");
        CHECK(load_tensor<float>(dir / "f") == f);
    }

    TEST_CASE("load errors") {
        const auto dir = scratch_dir("tensor_err");
        CHECK_THROWS_AS(load_tensor<double>(dir / "missing"), IoError);
        save_tensor(Tensor({4}, 1.0), dir / "t");
        std::filesystem::resize_file(dir / "t.bin", 8);
        CHECK_THROWS_AS(load_tensor<double>(dir / "t"), IoError);
        std::ofstream(dir / "bad.json") << "{not json";
        CHECK_THROWS_AS(load_tensor<double>(dir / "bad"), IoError);
    }
}

TEST_SUITE("kernels") {
    TEST_CASE("conv3d single multiply-add") {
        const Tensor y = conv3d_forward(Tensor({1, 1, 1, 1}, 2.0), Tensor({1, 1, 1, 1, 1}, 3.0), Tensor({1}, 0.5),
                                        ConvSpec{1, {1, 1, 1}, {1, 1, 1}, {0, 0, 0}});
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y[0] == 6.5);
    }

    TEST_CASE("conv3d sum of ones") {
        const Tensor y = conv3d_forward(Tensor({1, 2, 2, 2}, 1.0), Tensor({1, 1, 2, 2, 2}, 1.0), Tensor({1}, 0.0),
                                        ConvSpec{1, {2, 2, 2}, {1, 1, 1}, {0, 0, 0}});
        CHECK(y.shape() == Shape{1, 1, 1, 1});
        CHECK(y[0] == 8.0);
    }

    TEST_CASE("conv3d matches naive loops") {
        std::mt19937_64 rng(11);
        struct Case {
            Shape input;
            ConvSpec spec;
        };
        const std::vector<Case> cases{
            {{3, 4, 8, 8}, same_conv(2)},
            {{4, 8, 16, 16}, same_conv(3)},
            {{2, 5, 7, 6}, ConvSpec{2, {2, 3, 1}, {2, 1, 2}, {1, 0, 0}}},
            {{1, 3, 5, 5}, ConvSpec{1, {3, 3, 3}, {1, 2, 2}, {0, 1, 1}}},
        };
        for (const auto& c : cases) {
            const Tensor x = oracle::random_tensor(c.input, rng);
            const Tensor w = oracle::random_tensor(
                {c.spec.out_channels, c.input[0], c.spec.kernel.t, c.spec.kernel.h, c.spec.kernel.w}, rng);
            const Tensor b = oracle::random_tensor({c.spec.out_channels}, rng);
            const Tensor got = conv3d_forward(x, w, b, c.spec);
            const Tensor want = oracle::conv3d(x, w, b, c.spec);
            REQUIRE(got.shape() == want.shape());
            double worst = 0.0;
            for (std::size_t i = 0; i < got.size(); ++i) worst = std::max(worst, std::abs(got[i] - want[i]));
            CHECK(worst <= 1e-12);
        }
    }

    TEST_CASE("conv3d shape errors") {
        CHECK_THROWS_AS(conv3d_forward(Tensor({2, 4, 4, 4}), Tensor({1, 3, 3, 3, 3}), Tensor({1}), same_conv(1)),
                        ShapeError);
        CHECK_THROWS_AS(conv3d_forward(Tensor({1, 1, 1, 1}), Tensor({1, 1, 3, 3, 3}), Tensor({1}),
                                       ConvSpec{1, {3, 3, 3}, {1, 1, 1}, {0, 0, 0}}),
                        std::invalid_argument);
    }

    TEST_CASE("first layer of the full preset keeps its extent") {
        const auto full = NetworkConfig::full();
        CHECK(conv3d_output_shape(full.input(), {64, 3, 3, 3, 3}, full.conv_spec(64)) == Shape{64, 16, 112, 112});
        CHECK(maxpool3d_output_shape({64, 16, 112, 112}, full.stages[0].pool) == Shape{64, 16, 56, 56});
    }

    TEST_CASE("maxpool3d of 1..8") {
        Tensor x({1, 2, 2, 2});
        std::iota(x.data().begin(), x.data().end(), 1.0);
        const auto r = maxpool3d_forward(x, PoolSpec{2, 2, 2, 2, 0});
        CHECK(r.output.shape() == Shape{1, 1, 1, 1});
        CHECK(r.output[0] == 8.0);
        CHECK(r.argmax[0] == 7);
    }

    TEST_CASE("maxpool3d matches naive loops exactly") {
        std::mt19937_64 rng(12);
        const std::vector<std::pair<Shape, PoolSpec>> cases{
            {{4, 8, 16, 16}, PoolSpec{2, 2, 2, 2, 0}},
            {{4, 8, 16, 16}, PoolSpec{1, 1, 2, 2, 0}},
            {{3, 5, 7, 7}, PoolSpec{2, 2, 2, 2, 1}},
            {{2, 6, 9, 8}, PoolSpec{3, 1, 3, 2, 1}},
        };
        for (const auto& [shape, spec] : cases) {
            const Tensor x = oracle::random_tensor(shape, rng);
            const auto r = maxpool3d_forward(x, spec);
            CHECK(r.output == oracle::maxpool3d(x, spec));
        }
    }

    TEST_CASE("maxpool3d ties go to the first element in scan order") {
        const auto r = maxpool3d_forward(Tensor({1, 2, 2, 2}, 1.0), PoolSpec{2, 2, 2, 2, 0});
        CHECK(r.argmax[0] == 0);
        const Tensor g = maxpool3d_backward({1, 2, 2, 2}, r.argmax, Tensor({1, 1, 1, 1}, 1.0));
        CHECK(g == Tensor({1, 2, 2, 2}, std::vector<double>{1, 0, 0, 0, 0, 0, 0, 0}));
    }

    TEST_CASE("maxpool3d with padding never picks a padded cell") {
        const auto r = maxpool3d_forward(Tensor({1, 1, 3, 3}, -5.0), PoolSpec{1, 1, 2, 2, 1});
        CHECK(r.output.shape() == Shape{1, 1, 2, 2});
        for (double v : r.output.data()) CHECK(v == -5.0);
    }

    TEST_CASE("fc") {
        const Tensor y = fc_forward(Tensor({2}, 1.0), Tensor({2, 2}, std::vector<double>{1, 2, 3, 4}), Tensor({2}, 0.0));
        CHECK(y.values() == std::vector<double>{3, 7});
        std::mt19937_64 rng(5);
        const Tensor x = oracle::random_tensor({6}, rng);
        Tensor eye({6, 6});
        for (std::size_t i = 0; i < 6; ++i) eye.at({i, i}) = 1.0;
        CHECK(fc_forward(x, eye, Tensor({6}, 0.0)) == x);
        CHECK_THROWS_AS(fc_forward(Tensor({3}), Tensor({2, 2}), Tensor({2})), ShapeError);
    }

    TEST_CASE("relu") {
        CHECK(relu_forward(Tensor({3}, std::vector<double>{-1, 0, 2})).values() == std::vector<double>{0, 0, 2});
        std::mt19937_64 rng(6);
        const Tensor pos = oracle::random_tensor({10}, rng, 0.0, 1.0);
        CHECK(relu_forward(pos) == pos);
        const Tensor x = oracle::random_tensor({20}, rng);
        CHECK(relu_forward(relu_forward(x)) == relu_forward(x));
    }

    TEST_CASE("softmax") {
        const Tensor u = softmax_forward(Tensor({21}, 0.0));
        for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 21).epsilon(1e-12));
        const Tensor p = softmax_forward(Tensor({2}, std::vector<double>{std::log(2.0), 0.0}));
        CHECK(p[0] == doctest::Approx(2.0 / 3).epsilon(1e-12));
        CHECK(p[1] == doctest::Approx(1.0 / 3).epsilon(1e-12));

        std::mt19937_64 rng(7);
        for (int k = 0; k < 20; ++k) {
            const Tensor x = oracle::random_tensor({9}, rng, -5.0, 5.0);
            Tensor shifted = x;
            for (auto& v : shifted.data()) v += 100.0;
            const Tensor a = softmax_forward(x), b = softmax_forward(shifted);
            double sum = 0.0;
            for (std::size_t i = 0; i < a.size(); ++i) {
                CHECK(std::abs(a[i] - b[i]) <= 1e-12);
                CHECK(a[i] > 0.0);
                sum += a[i];
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
        const Tensor big = softmax_forward(Tensor({3}, std::vector<double>{1000, 0, -1000}));
        CHECK(big.all_finite());
    }

    TEST_CASE("abs_diff") {
        CHECK(abs_diff_forward(Tensor({2}, std::vector<double>{3, 1}), Tensor({2}, std::vector<double>{0, 1})).values() ==
              std::vector<double>{3, 0});
        std::mt19937_64 rng(8);
        for (int k = 0; k < 20; ++k) {
            const Tensor a = oracle::random_tensor({7}, rng), b = oracle::random_tensor({7}, rng);
            const Tensor d = abs_diff_forward(a, b);
            CHECK(d == abs_diff_forward(b, a));
            for (double v : d.data()) CHECK(v > 0.0);
            const Tensor zero = abs_diff_forward(a, a);
            for (double v : zero.data()) CHECK(v == 0.0);
        }
        CHECK_THROWS_AS(abs_diff_forward(Tensor({2}), Tensor({3})), ShapeError);
    }
}
