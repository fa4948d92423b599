#include <doctest.h>

#include <cmath>
#include <random>

#include "gptx/autodiff.hpp"
#include "test_support.hpp"

using namespace gptx;
using gptx::test::random_tensor;

namespace {

ad::Var weighted_sum(const ad::Var& y, const Tensor& w) {
    return ad::reduce_sum_all(ad::mul(y, ad::constant(w)));
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("matmul identity") {
    ad::Var a = ad::constant(Tensor({2, 2}, {1, 2, 3, 4}));
    ad::Var eye = ad::constant(Tensor({2, 2}, {1, 0, 0, 1}));
    ad::Var y = ad::matmul(a, eye);
    CHECK(y.value().vec() == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("softmax symmetry") {
    ad::Var y = ad::softmax(ad::constant(Tensor({1, 2}, {0, 0})));
    CHECK(y.value().at(0) == doctest::Approx(0.5));
    CHECK(y.value().at(1) == doctest::Approx(0.5));
}

TEST_CASE("layernorm of a constant vector is zero") {
    ad::Var y = ad::layernorm(ad::constant(Tensor({1, 5}, 3.25f)));
    for (int64_t i = 0; i < 5; ++i) CHECK(y.value().at(i) == 0.0f);
}

TEST_CASE("d/dx x*x at 3 is 6") {
    ad::Var x = ad::leaf(Tensor::scalar(3.0f), true);
    ad::Var loss = ad::reduce_sum_all(ad::mul(x, x));
    ad::backward(loss);
    CHECK(x.grad().at(0) == doctest::Approx(6.0));
}

TEST_CASE("d/dx sum softmax is zero") {
    ad::Var x = ad::leaf(Tensor({1, 4}, {0.3f, -1.2f, 2.0f, 0.7f}), true);
    ad::backward(ad::reduce_sum_all(ad::softmax(x)));
    for (int64_t i = 0; i < 4; ++i) CHECK(std::abs(x.grad().at(i)) < 1e-7f);
}

TEST_CASE("cross-entropy gradient is softmax minus one-hot") {
    std::mt19937_64 rng(11);
    ad::Var z = ad::leaf(random_tensor({1, 5}, rng), true);
    const int64_t target[1] = {3};
    ad::backward(ad::reduce_sum_all(ad::cross_entropy(z, target)));
    ad::Var probs = ad::softmax(z);
    for (int64_t j = 0; j < 5; ++j) {
        const float expected = probs.value().at(j) - (j == 3 ? 1.0f : 0.0f);
        CHECK(z.grad().at(j) == doctest::Approx(expected).epsilon(1e-5));
    }
}

TEST_CASE("frozen leaf receives no gradient storage") {
    ad::Var frozen = ad::leaf(Tensor({2}, {1.0f, 2.0f}), false);
    ad::Var live = ad::leaf(Tensor({2}, {0.5f, -0.5f}), true);
    ad::backward(ad::reduce_sum_all(ad::mul(frozen, live)));
    CHECK(!frozen.has_grad());
    CHECK(live.has_grad());
}

TEST_CASE("finite_diff_check on a quadratic form is exact to roundoff") {
    // float64 evaluation: central differences are exact for quadratics
    std::mt19937_64 rng(5);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor x0 = random_tensor({4}, rng);
    auto value = [&](std::span<const float> p) {
        double acc = 0.0;
        for (int64_t i = 0; i < 4; ++i) {
            for (int64_t j = 0; j < 4; ++j) {
                acc += static_cast<double>(p[static_cast<size_t>(i)]) *
                       static_cast<double>(a.at(i * 4 + j)) * static_cast<double>(p[static_cast<size_t>(j)]);
            }
        }
        return acc;
    };
    auto grad = [&](std::span<const float> p) {
        std::vector<float> g(4, 0.0f);
        for (int64_t i = 0; i < 4; ++i) {
            double acc = 0.0;
            for (int64_t j = 0; j < 4; ++j) {
                acc += (static_cast<double>(a.at(i * 4 + j)) + static_cast<double>(a.at(j * 4 + i))) *
                       static_cast<double>(p[static_cast<size_t>(j)]);
            }
            g[static_cast<size_t>(i)] = static_cast<float>(acc);
        }
        return g;
    };
    CHECK(ad::finite_diff_check(value, grad, x0.vec(), 1e-3) < 1e-6);
}

TEST_CASE("finite_diff_check epsilon range is enforced") {
    auto value = [](std::span<const float> p) { return static_cast<double>(p[0]); };
    auto grad = [](std::span<const float> p) { return std::vector<float>{1.0f}; };
    const std::vector<float> pt{1.0f};
    CHECK_THROWS_AS(ad::finite_diff_check(value, grad, pt, 1e-6), std::invalid_argument);
    CHECK_THROWS_AS(ad::finite_diff_check(value, grad, pt, 0.5), std::invalid_argument);
}

// Every differentiable op, randomized inputs, 100 seeds total.
TEST_CASE("per-op gradients match central differences") {
    int seeds_run = 0;
    auto check_op = [&](auto&& build, Shape xshape, uint64_t seed) {
        std::mt19937_64 rng(seed);
        Tensor x0 = random_tensor(xshape, rng, 0.8f);
        auto make_loss = [&](std::span<const float> p) {
            ad::Var x = ad::leaf(Tensor(xshape, std::vector<float>(p.begin(), p.end())), true);
            return std::pair<ad::Var, ad::Var>(x, build(x, rng));
        };
        auto value = [&](std::span<const float> p) {
            std::mt19937_64 save = rng;
            auto [x, loss] = make_loss(p);
            rng = save;
            return static_cast<double>(loss.value().at(0));
        };
        auto grad = [&](std::span<const float> p) {
            std::mt19937_64 save = rng;
            auto [x, loss] = make_loss(p);
            rng = save;
            ad::backward(loss);
            return x.grad().vec();
        };
        const double err = ad::finite_diff_check(value, grad, x0.vec(), 1e-3);
        CHECK_MESSAGE(err < 1e-4, "seed ", seed, " err ", err);
        ++seeds_run;
    };

    for (uint64_t seed = 1; seed <= 7; ++seed) {
        std::mt19937_64 aux_rng(seed * 977);
        const Tensor w23 = random_tensor({2, 3}, aux_rng);
        const Tensor w34 = random_tensor({3, 4}, aux_rng);
        const Tensor w24 = random_tensor({2, 4}, aux_rng);
        const Tensor w6 = random_tensor({6}, aux_rng);
        const Tensor w33 = random_tensor({3, 3}, aux_rng);
        const Tensor w32 = random_tensor({3, 2}, aux_rng);
        const Tensor w43 = random_tensor({4, 3}, aux_rng);
        const Tensor w22 = random_tensor({2, 2}, aux_rng);
        const Tensor w2 = random_tensor({2}, aux_rng);
        const Tensor w4 = random_tensor({4}, aux_rng);

        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::add(x, ad::constant(w23)), w23);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::mul(x, ad::constant(w23)), w23);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::matmul(x, ad::constant(w34)), w24);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            const int64_t ids[3] = {1, 0, 1};
            return weighted_sum(ad::gather_rows(x, ids), w33);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::softmax(x), w23);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::layernorm(x), w23);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::gelu(x), w23);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::reshape(x, {6}), w6);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            const int perm[2] = {1, 0};
            return weighted_sum(ad::transpose(x, perm), w32);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            const ad::Var parts[] = {x, ad::constant(w23)};
            return weighted_sum(ad::concat(parts, 0), w43);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::slice(x, 1, 1, 3), w22);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            return weighted_sum(ad::reduce_sum_last(x), w2);
        }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) { return ad::reduce_sum_all(x); }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) { return ad::reduce_mean_all(x); }, {2, 3}, seed);
        check_op([&](ad::Var x, std::mt19937_64&) {
            const int64_t targets[4] = {0, 2, 1, 2};
            return weighted_sum(ad::cross_entropy(x, targets), w4);
        }, {4, 3}, seed);
    }
    CHECK(seeds_run >= 100);
}

TEST_CASE("forward is pure") {
    std::mt19937_64 rng(77);
    Tensor x = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({5, 4}, rng);
    ad::Var y1 = ad::gelu(ad::matmul(ad::constant(x), ad::constant(w)));
    ad::Var y2 = ad::gelu(ad::matmul(ad::constant(x), ad::constant(w)));
    CHECK(y1.value().vec() == y2.value().vec());
}

TEST_CASE("fan-out gradients accumulate additively") {
    std::mt19937_64 rng(13);
    Tensor x0 = random_tensor({2, 2}, rng);
    Tensor a = random_tensor({2, 2}, rng);
    Tensor b = random_tensor({2, 2}, rng);

    ad::Var x = ad::leaf(x0, true);
    ad::backward(ad::reduce_sum_all(ad::add(ad::mul(x, ad::constant(a)), ad::mul(x, ad::constant(b)))));
    const std::vector<float> joint = x.grad().vec();

    ad::Var x1 = ad::leaf(x0, true);
    ad::backward(ad::reduce_sum_all(ad::mul(x1, ad::constant(a))));
    ad::Var x2 = ad::leaf(x0, true);
    ad::backward(ad::reduce_sum_all(ad::mul(x2, ad::constant(b))));
    for (int64_t i = 0; i < 4; ++i) {
        CHECK(joint[static_cast<size_t>(i)] ==
              doctest::Approx(x1.grad().at(i) + x2.grad().at(i)).epsilon(1e-6));
    }
}

TEST_CASE("broadcast is limited to leading singleton axes") {
    ad::Var a = ad::constant(Tensor({3, 1}, 1.0f));
    ad::Var b = ad::constant(Tensor({3, 4}, 2.0f));
    CHECK_THROWS_AS(ad::add(a, b), ShapeError);  // [3,1] broadcasts on a trailing axis

    ad::Var c = ad::constant(Tensor({1, 4}, 1.0f));
    ad::Var y = ad::add(c, b);
    CHECK(y.shape() == Shape{3, 4});
    CHECK(y.value().at(0) == 3.0f);

    ad::Var s = ad::constant(Tensor::scalar(2.0f));
    CHECK(ad::mul(b, s).value().at(5) == 4.0f);
}

TEST_CASE("non-finite values raise the error state") {
    ad::Var big = ad::constant(Tensor({2}, 1e38f));
    CHECK_THROWS_AS(ad::mul(big, big), NumericsError);
    CHECK_THROWS_AS(ad::leaf(Tensor({1}, std::numeric_limits<float>::quiet_NaN()), false),
                    NumericsError);
}

TEST_CASE("backward requires a scalar loss") {
    ad::Var x = ad::leaf(Tensor({2, 2}, 1.0f), true);
    CHECK_THROWS_AS(ad::backward(ad::mul(x, x)), ShapeError);
}

TEST_CASE("matmul rejects mismatched inner dims") {
    ad::Var a = ad::constant(Tensor({2, 3}, 1.0f));
    ad::Var b = ad::constant(Tensor({4, 2}, 1.0f));
    CHECK_THROWS_AS(ad::matmul(a, b), ShapeError);
}

}  // TEST_SUITE
