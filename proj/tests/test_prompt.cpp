#include <doctest.h>

#include <cmath>
#include <random>

#include "gptx/metrics.hpp"
#include "gptx/prompt.hpp"
#include "test_support.hpp"

using namespace gptx;
using gptx::test::gather_grads;
using gptx::test::gather_params;
using gptx::test::random_tensor;
using gptx::test::scatter_params;
using gptx::test::zero_grads;

namespace {

PromptConfig small_factorized(int64_t c = 3, int64_t s = 2, int64_t p = 3, int64_t d = 2,
                              int64_t f = 1) {
    PromptConfig cfg;
    cfg.kind = PromptKind::Factorized;
    cfg.conditions = c;
    cfg.prompt_len = s;
    cfg.feature_dim = p;
    cfg.token_dim = d;
    cfg.factors = f;
    return cfg;
}

// numeric rank from singular values of a row-major (rows x cols) matrix
int64_t numeric_rank(const std::vector<double>& m, int64_t rows, int64_t cols, double tol) {
    // eigenvalues of m^T m are squared singular values
    std::vector<double> gram(static_cast<size_t>(cols * cols), 0.0);
    for (int64_t i = 0; i < cols; ++i) {
        for (int64_t j = 0; j < cols; ++j) {
            double acc = 0.0;
            for (int64_t r = 0; r < rows; ++r) {
                acc += m[static_cast<size_t>(r * cols + i)] * m[static_cast<size_t>(r * cols + j)];
            }
            gram[static_cast<size_t>(i * cols + j)] = acc;
        }
    }
    std::vector<double> evals;
    jacobi_eigh(gram, cols, evals);
    int64_t rank = 0;
    for (double ev : evals) {
        if (std::sqrt(std::max(0.0, ev)) > tol) ++rank;
    }
    return rank;
}

}  // namespace

TEST_SUITE("prompt") {

TEST_CASE("closed-form parameter counts reproduce the published figures") {
    PromptConfig base;
    base.kind = PromptKind::Baseline;
    base.feature_dim = 768;
    base.token_dim = 768;
    base.conditions = 100;
    base.prompt_len = 128;
    CHECK(count_params(base) == 10420224);

    PromptConfig fac = base;
    fac.kind = PromptKind::Factorized;
    fac.factors = 1;
    CHECK(count_params(fac) == 764928);

    fac.prompt_len = 1;
    CHECK(count_params(fac) == 667392);
    fac.prompt_len = 16;
    CHECK(count_params(fac) == 678912);

    PromptConfig ar = fac;
    ar.token_dim = 1024;
    ar.prompt_len = 1;
    CHECK(count_params(ar) == 864000);
    ar.prompt_len = 256;
    ar.factors = 16;
    CHECK(count_params(ar) == 5160960);
}

TEST_CASE("baseline-minus-factorized count difference follows the closed form") {
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int64_t> pick(1, 40);
    for (int rep = 0; rep < 50; ++rep) {
        PromptConfig cfg;
        cfg.feature_dim = pick(rng);
        cfg.token_dim = pick(rng);
        cfg.conditions = pick(rng);
        cfg.prompt_len = pick(rng);
        cfg.factors = pick(rng);
        PromptConfig base = cfg;
        base.kind = PromptKind::Baseline;
        PromptConfig fac = cfg;
        fac.kind = PromptKind::Factorized;
        const int64_t diff = count_params(base) - count_params(fac);
        CHECK(diff == cfg.feature_dim * (cfg.conditions * cfg.prompt_len -
                                         cfg.factors * (cfg.conditions + cfg.prompt_len)));
        if (cfg.factors * (cfg.conditions + cfg.prompt_len) < cfg.conditions * cfg.prompt_len) {
            CHECK(diff > 0);
        }
    }
}

TEST_CASE("generation is deterministic per condition") {
    PromptGenerator gen(small_factorized(4, 3, 5, 4, 2), 9);
    CHECK(gen.generate_tensor(2).vec() == gen.generate_tensor(2).vec());
    CHECK(gen.generate_tensor(1).vec() != gen.generate_tensor(2).vec());
}

TEST_CASE("zero factor vector annihilates the condition") {
    PromptGenerator gen(small_factorized(3, 2, 4, 3, 1), 4);
    gen.find("pg.factor")->var.assign_value(Tensor({1}, 0.0f));
    const Tensor a = gen.generate_tensor(0);
    const Tensor b = gen.generate_tensor(1);
    const Tensor c = gen.generate_tensor(2);
    CHECK(a.vec() == b.vec());
    CHECK(b.vec() == c.vec());
}

TEST_CASE("factorized forward equals a hand evaluation of dense(LN(fac*(pos+cls)))") {
    PromptGenerator gen(small_factorized(2, 2, 3, 2, 1), 1);
    const std::vector<float> pos{0.1f, -0.4f, 0.3f, 0.7f, 0.2f, -0.1f};  // [S=2,P=3,F=1]
    const std::vector<float> cls{0.5f, 0.0f, -0.2f, -0.3f, 0.8f, 0.6f};  // [C=2,P=3,F=1]
    const float fac = 1.5f;
    const std::vector<float> g{1.2f, 0.9f, 1.1f}, b{0.05f, -0.02f, 0.1f};
    const std::vector<float> w{0.3f, -0.5f, 0.8f, 0.1f, -0.2f, 0.4f};  // [P=3,D=2]
    const std::vector<float> ob{0.01f, -0.03f};

    gen.find("pg.pos_table")->var.assign_value(Tensor({2, 3, 1}, pos));
    gen.find("pg.class_table")->var.assign_value(Tensor({2, 3, 1}, cls));
    gen.find("pg.factor")->var.assign_value(Tensor({1}, {fac}));
    gen.find("pg.ln_g")->var.assign_value(Tensor({3}, g));
    gen.find("pg.ln_b")->var.assign_value(Tensor({3}, b));
    gen.find("pg.out_w")->var.assign_value(Tensor({3, 2}, w));
    gen.find("pg.out_b")->var.assign_value(Tensor({2}, ob));

    for (int64_t c = 0; c < 2; ++c) {
        const Tensor out = gen.generate_tensor(c);
        for (int64_t s = 0; s < 2; ++s) {
            double v[3];
            for (int64_t p = 0; p < 3; ++p) {
                v[p] = static_cast<double>(fac) *
                       (pos[static_cast<size_t>(s * 3 + p)] + cls[static_cast<size_t>(c * 3 + p)]);
            }
            const double mean = (v[0] + v[1] + v[2]) / 3.0;
            double var = 0.0;
            for (double x : v) var += (x - mean) * (x - mean);
            var /= 3.0;
            const double inv = 1.0 / std::sqrt(var + 1e-5);
            double n[3];
            for (int64_t p = 0; p < 3; ++p) n[p] = (v[p] - mean) * inv * g[static_cast<size_t>(p)] + b[static_cast<size_t>(p)];
            for (int64_t d = 0; d < 2; ++d) {
                double expect = ob[static_cast<size_t>(d)];
                for (int64_t p = 0; p < 3; ++p) expect += n[p] * w[static_cast<size_t>(p * 2 + d)];
                CHECK(out.at(s * 2 + d) == doctest::Approx(expect).epsilon(1e-5));
            }
        }
    }
}

TEST_CASE("baseline generator: distinct classes give distinct prompts; C=1 is unconditional") {
    PromptConfig cfg;
    cfg.kind = PromptKind::Baseline;
    cfg.conditions = 3;
    cfg.prompt_len = 2;
    cfg.feature_dim = 4;
    cfg.token_dim = 3;
    PromptGenerator gen(cfg, 12);
    CHECK(gen.generate_tensor(0).vec() != gen.generate_tensor(1).vec());

    cfg.conditions = 1;
    PromptGenerator uncond(cfg, 12);
    CHECK(uncond.generate_tensor(0).shape() == Shape{2, 3});
}

TEST_CASE("rank structure: baseline slices are full matrices, factorized slices are additive") {
    std::mt19937_64 rng(6);
    const int64_t c = 5, s = 4, p = 3;

    // baseline table slice (class x prompt-position) for one feature: rank <= min(C, S)
    std::vector<double> slice(static_cast<size_t>(c * s));
    for (double& x : slice) x = std::normal_distribution<double>(0, 1)(rng);
    CHECK(numeric_rank(slice, c, s, 1e-9) <= std::min(c, s));

    // factorized pre-norm embedding per feature: fac*(pos_s + cls_c) is a sum of
    // a row term and a column term, so double-centering wipes the interaction
    PromptGenerator gen(small_factorized(c, s, p, 2, 1), 77);
    const Tensor pos = gen.find("pg.pos_table")->var.value();
    const Tensor cls = gen.find("pg.class_table")->var.value();
    for (int64_t feat = 0; feat < p; ++feat) {
        std::vector<double> m(static_cast<size_t>(c * s));
        for (int64_t i = 0; i < c; ++i) {
            for (int64_t j = 0; j < s; ++j) {
                m[static_cast<size_t>(i * s + j)] =
                    static_cast<double>(cls.at(i * p + feat)) + static_cast<double>(pos.at(j * p + feat));
            }
        }
        CHECK(numeric_rank(m, c, s, 1e-9) <= 2);
        std::vector<double> centered = m;
        std::vector<double> row_mean(static_cast<size_t>(c), 0.0), col_mean(static_cast<size_t>(s), 0.0);
        double grand = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            for (int64_t j = 0; j < s; ++j) {
                row_mean[static_cast<size_t>(i)] += m[static_cast<size_t>(i * s + j)] / s;
                col_mean[static_cast<size_t>(j)] += m[static_cast<size_t>(i * s + j)] / c;
                grand += m[static_cast<size_t>(i * s + j)] / (c * s);
            }
        }
        double max_interaction = 0.0;
        for (int64_t i = 0; i < c; ++i) {
            for (int64_t j = 0; j < s; ++j) {
                const double inter = m[static_cast<size_t>(i * s + j)] - row_mean[static_cast<size_t>(i)] -
                                     col_mean[static_cast<size_t>(j)] + grand;
                max_interaction = std::max(max_interaction, std::abs(inter));
            }
        }
        CHECK(max_interaction < 1e-12);
    }
}

TEST_CASE("prompt representation is the class-table row") {
    PromptGenerator gen(small_factorized(4, 2, 5, 3, 1), 21);
    const Tensor rep = gen.representation(2);
    CHECK(rep.shape() == Shape{5, 1});  // F=1 -> dimension P
    const Tensor table = gen.find("pg.class_table")->var.value();
    for (int64_t i = 0; i < 5; ++i) CHECK(rep.at(i) == table.at(2 * 5 + i));

    PromptConfig base;
    base.kind = PromptKind::Baseline;
    base.conditions = 2;
    base.prompt_len = 2;
    base.feature_dim = 3;
    base.token_dim = 2;
    PromptGenerator bgen(base, 3);
    CHECK_THROWS_AS(bgen.representation(0), std::logic_error);
}

TEST_CASE("marquee weight schedule") {
    CHECK(marquee_weight(1, 5) == 0.0);
    CHECK(marquee_weight(2, 3) == 0.25);
    CHECK(marquee_weight(3, 3) == 1.0);
    CHECK(marquee_weight(5, 3) == 1.0);
    for (int64_t t = 1; t < 20; ++t) {
        CHECK(marquee_weight(t + 1, 7) >= marquee_weight(t, 7));
    }
    CHECK_THROWS_AS(marquee_weight(1, 1), std::invalid_argument);
    CHECK_THROWS_AS(marquee_weight(0, 4), std::invalid_argument);
}

TEST_CASE("marquee prompts hit the endpoints bitwise and collapse when conditions match") {
    PromptGenerator gen(small_factorized(4, 3, 6, 4, 2), 31);
    const Tensor a = gen.generate_tensor(1);
    const Tensor b = gen.generate_tensor(3);
    CHECK(gen.marquee_prompt(1, 3, 1, 4).vec() == a.vec());
    CHECK(gen.marquee_prompt(1, 3, 4, 4).vec() == b.vec());
    CHECK(gen.marquee_prompt(1, 3, 9, 4).vec() == b.vec());
    const Tensor mid = gen.marquee_prompt(1, 3, 2, 4);
    CHECK(mid.vec() != a.vec());
    CHECK(mid.vec() != b.vec());
    for (int64_t t = 1; t <= 6; ++t) {
        CHECK(gen.marquee_prompt(2, 2, t, 4).vec() == gen.generate_tensor(2).vec());
    }
}

TEST_CASE("token-level marquee interpolates final prompts") {
    PromptGenerator gen(small_factorized(3, 2, 4, 3, 1), 8);
    const Tensor a = gen.generate_tensor(0);
    const Tensor b = gen.generate_tensor(1);
    const Tensor mid = gen.marquee_prompt(0, 1, 2, 3, /*token_level=*/true);  // w = 0.25
    for (int64_t i = 0; i < mid.size(); ++i) {
        CHECK(mid.at(i) == doctest::Approx(0.75 * a.at(i) + 0.25 * b.at(i)).epsilon(1e-6));
    }
}

TEST_CASE("generator gradients match central differences") {
    for (const PromptKind kind : {PromptKind::Factorized, PromptKind::Baseline}) {
        PromptConfig cfg = small_factorized(3, 2, 4, 3, 2);
        cfg.kind = kind;
        PromptGenerator gen(cfg, 17);
        std::mt19937_64 rng(99);
        const Tensor w = random_tensor({cfg.prompt_len, cfg.token_dim}, rng);

        auto value = [&](std::span<const float> p) {
            scatter_params(gen.params(), p);
            ad::Var loss = ad::reduce_sum_all(ad::mul(gen.generate(1), ad::constant(w)));
            return static_cast<double>(loss.value().at(0));
        };
        auto grad = [&](std::span<const float> p) {
            scatter_params(gen.params(), p);
            zero_grads(gen.params());
            ad::backward(ad::reduce_sum_all(ad::mul(gen.generate(1), ad::constant(w))));
            return gather_grads(gen.params());
        };
        const std::vector<float> point = gather_params(gen.params());
        CHECK(ad::finite_diff_check(value, grad, point, 1e-3) < 1e-4);
    }
}

TEST_CASE("condition ids outside the table are rejected") {
    PromptGenerator gen(small_factorized(3, 2, 4, 3, 1), 2);
    CHECK_THROWS_AS(gen.generate(3), std::out_of_range);
    CHECK_THROWS_AS(gen.generate(-1), std::out_of_range);
}

}  // TEST_SUITE
