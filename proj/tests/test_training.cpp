#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gptx/training.hpp"
#include "test_support.hpp"

using namespace gptx;
using gptx::test::gather_grads;
using gptx::test::gather_params;
using gptx::test::random_tensor;
using gptx::test::scatter_params;
using gptx::test::tiny_model_config;
using gptx::test::zero_grads;

namespace {

TokenGrid random_grid(const ModelConfig& cfg, std::mt19937_64& rng) {
    TokenGrid g;
    g.h = cfg.grid_h;
    g.w = cfg.grid_w;
    std::uniform_int_distribution<int64_t> pick(0, cfg.codebook_size - 1);
    for (int64_t i = 0; i < cfg.positions(); ++i) g.tokens.push_back(pick(rng));
    return g;
}

TrainSet random_set(const ModelConfig& cfg, int64_t n, int64_t classes, std::mt19937_64& rng) {
    TrainSet set;
    set.n_classes = classes;
    for (int64_t i = 0; i < n; ++i) {
        set.grids.push_back(random_grid(cfg, rng));
        set.labels.push_back(i % classes);
    }
    return set;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("uniform logits give a loss of ln(V)") {
    std::mt19937_64 rng(2);
    for (ModelKind kind : {ModelKind::AR, ModelKind::NAR}) {
        TransformerModel model(tiny_model_config(kind), 5);
        // zero the output head so every position predicts the uniform distribution
        model.find("tf.head_w")->var.assign_value(
            Tensor(model.find("tf.head_w")->var.value().shape(), 0.0f));

        PromptConfig pc;
        pc.conditions = 2;
        pc.prompt_len = 2;
        pc.feature_dim = 8;
        pc.token_dim = model.config().embed_dim;
        PromptGenerator gen(pc, 4);

        const std::vector<TokenGrid> grids{random_grid(model.config(), rng)};
        const std::vector<int64_t> conds{1};
        ad::Var loss = kind == ModelKind::AR
                           ? ar_loss(model, gen, grids, conds)
                           : nar_loss(model, gen, grids, conds, rng);
        const double expected = std::log(static_cast<double>(model.config().vocab_size()));
        CHECK(loss.value().at(0) == doctest::Approx(expected).epsilon(1e-4));
    }
}

TEST_CASE("overfitting one repeated grid halves the loss") {
    std::mt19937_64 rng(6);
    ModelConfig cfg = tiny_model_config(ModelKind::AR, 3, 6, 1, 16, 2, 1);
    TransformerModel model(cfg, 11);

    TrainSet set;
    set.n_classes = 1;
    set.grids.push_back(random_grid(cfg, rng));
    set.labels.push_back(0);

    TrainConfig tc;
    tc.mode = TuneMode::Scratch;
    tc.learning_rate = 3e-3;
    tc.batch_size = 1;
    tc.epochs = 120;
    tc.seed = 3;
    const TrainResult res = train_model(model, nullptr, set, tc);
    REQUIRE(!res.diverged);
    CHECK(res.log.back().loss < res.log.front().loss * 0.5);
}

TEST_CASE("training is reproducible bit for bit") {
    std::mt19937_64 rng(10);
    ModelConfig cfg = tiny_model_config(ModelKind::NAR, 3, 6, 1, 16, 2, 2);
    TrainSet set = random_set(cfg, 6, 2, rng);
    TrainConfig tc;
    tc.mode = TuneMode::Prompt;
    tc.learning_rate = 1e-3;
    tc.batch_size = 3;
    tc.epochs = 4;
    tc.seed = 9;

    auto run_once = [&]() {
        TransformerModel model(cfg, 21);
        PromptConfig pc;
        pc.conditions = 2;
        pc.prompt_len = 2;
        pc.feature_dim = 8;
        pc.token_dim = cfg.embed_dim;
        PromptGenerator gen(pc, 33);
        return train_model(model, &gen, set, tc).metrics_text();
    };
    CHECK(run_once() == run_once());
}

TEST_CASE("metrics log format is epoch,loss,lr") {
    TrainResult res;
    res.log.push_back({0, 1.5, 0.001});
    res.log.push_back({1, 0.75, 0.0005});
    CHECK(res.metrics_text() == "0,1.5,0.001\n1,0.75,0.0005\n");
}

TEST_CASE("mask sampling: bounds and Monte Carlo mean of 2/pi") {
    std::mt19937_64 rng(123);
    double total_fraction = 0.0;
    const int64_t draws = 100000;
    for (int64_t i = 0; i < draws; ++i) {
        const MaskSet m = sample_mask(8, 8, rng);
        CHECK(m.positions.size() >= 1);
        CHECK(m.positions.size() <= 64);
        for (size_t j = 1; j < m.positions.size(); ++j) {
            CHECK(m.positions[j] > m.positions[j - 1]);  // sorted, duplicate-free
        }
        total_fraction += static_cast<double>(m.positions.size()) / 64.0;
    }
    const double mean = total_fraction / static_cast<double>(draws);
    CHECK(std::abs(mean - 2.0 / std::numbers::pi) < 0.01);
}

TEST_CASE("condition sampling follows the instance probability") {
    std::mt19937_64 rng(5);
    CHECK(sample_condition(3, 7, 10, 0.0, rng) == 3);
    CHECK(sample_condition(3, 7, 10, 1.0, rng) == 17);
    CHECK_THROWS_AS(sample_condition(3, std::nullopt, 10, 0.5, rng), std::invalid_argument);

    int64_t instances = 0;
    const int64_t draws = 10000;
    for (int64_t i = 0; i < draws; ++i) {
        if (sample_condition(0, 1, 4, 0.5, rng) >= 4) ++instances;
    }
    CHECK(std::abs(static_cast<double>(instances) / draws - 0.5) < 0.02);
}

TEST_CASE("masked loss puts zero gradient on unmasked logits") {
    // weighted cross-entropy with 0/1 mask weights, as the NAR loss composes it
    std::mt19937_64 rng(31);
    ad::Var logits = ad::leaf(random_tensor({4, 5}, rng), true);
    const int64_t targets[4] = {1, 2, 0, 4};
    Tensor w({4});
    w.at(1) = 1.0f;
    w.at(3) = 1.0f;
    ad::Var loss = ad::scale(
        ad::reduce_sum_all(ad::mul(ad::cross_entropy(logits, targets), ad::constant(w))), 0.5f);
    ad::backward(loss);
    for (int64_t v = 0; v < 5; ++v) {
        CHECK(logits.grad().at(0 * 5 + v) == 0.0f);
        CHECK(logits.grad().at(2 * 5 + v) == 0.0f);
        CHECK(logits.grad().at(1 * 5 + v) != 0.0f);
    }
}

TEST_CASE("NAR loss gradient matches central differences on a 2x2 grid") {
    ModelConfig cfg = tiny_model_config(ModelKind::NAR, 2, 4, 1, 8, 2, 2);
    TransformerModel model(cfg, 41);
    PromptConfig pc;
    pc.conditions = 3;
    pc.prompt_len = 2;
    pc.feature_dim = 3;
    pc.token_dim = cfg.embed_dim;
    PromptGenerator gen(pc, 13);
    param_partition(model, gen.params(), TuneMode::Prompt);

    std::mt19937_64 data_rng(7);
    const std::vector<TokenGrid> grids{random_grid(cfg, data_rng)};
    const std::vector<int64_t> conds{1};

    auto value = [&](std::span<const float> p) {
        scatter_params(gen.params(), p);
        std::mt19937_64 rng(99);  // fixed masks per evaluation
        return static_cast<double>(nar_loss(model, gen, grids, conds, rng).value().at(0));
    };
    auto grad = [&](std::span<const float> p) {
        scatter_params(gen.params(), p);
        zero_grads(gen.params());
        std::mt19937_64 rng(99);
        ad::backward(nar_loss(model, gen, grids, conds, rng));
        return gather_grads(gen.params());
    };
    const std::vector<float> point = gather_params(gen.params());
    CHECK(ad::finite_diff_check(value, grad, point, 1e-3) < 1e-4);
}

TEST_CASE("Adam with lr=0 leaves parameters untouched") {
    std::mt19937_64 rng(3);
    ad::Var p = ad::leaf(random_tensor({4, 4}, rng), true);
    const std::vector<float> before = p.value().vec();
    Adam adam;
    adam.add_param(p, 1.0, 0.1);
    for (int step = 0; step < 5; ++step) {
        ad::backward(ad::reduce_sum_all(ad::mul(p, p)));
        adam.step(0.0);
        adam.zero_grad();
    }
    CHECK(p.value().vec() == before);
}

TEST_CASE("prompt tuning leaves every transformer tensor byte-identical") {
    std::mt19937_64 rng(77);
    ModelConfig cfg = tiny_model_config(ModelKind::NAR, 3, 6, 2, 16, 2, 2);
    TransformerModel model(cfg, 10);
    std::vector<uint64_t> hashes;
    for (const NamedParam& p : model.params()) hashes.push_back(hash_tensor(p.var.value()));

    PromptConfig pc;
    pc.conditions = 2;
    pc.prompt_len = 2;
    pc.feature_dim = 8;
    pc.token_dim = cfg.embed_dim;
    PromptGenerator gen(pc, 8);

    TrainSet set = random_set(cfg, 8, 2, rng);
    TrainConfig tc;
    tc.mode = TuneMode::Prompt;
    tc.learning_rate = 1e-3;
    tc.batch_size = 4;
    tc.epochs = 5;
    tc.seed = 2;
    const TrainResult res = train_model(model, &gen, set, tc);
    REQUIRE(!res.diverged);
    size_t i = 0;
    for (const NamedParam& p : model.params()) {
        CHECK(hash_tensor(p.var.value()) == hashes[i++]);
    }
}

TEST_CASE("prompt tuning on a toy set reduces the loss") {
    std::mt19937_64 rng(15);
    ModelConfig cfg = tiny_model_config(ModelKind::NAR, 3, 8, 2, 16, 2, 4);
    TransformerModel model(cfg, 19);
    PromptConfig pc;
    pc.conditions = 4;
    pc.prompt_len = 4;
    pc.feature_dim = 16;
    pc.token_dim = cfg.embed_dim;
    PromptGenerator gen(pc, 77);

    TrainSet set;
    set.n_classes = 4;
    // four class archetypes, slightly perturbed
    std::vector<TokenGrid> protos;
    for (int64_t c = 0; c < 4; ++c) protos.push_back(random_grid(cfg, rng));
    std::uniform_int_distribution<int64_t> pos_pick(0, cfg.positions() - 1);
    std::uniform_int_distribution<int64_t> tok_pick(0, cfg.codebook_size - 1);
    for (int64_t i = 0; i < 32; ++i) {
        TokenGrid g = protos[static_cast<size_t>(i % 4)];
        g.tokens[static_cast<size_t>(pos_pick(rng))] = tok_pick(rng);
        set.grids.push_back(g);
        set.labels.push_back(i % 4);
    }

    TrainConfig tc;
    tc.mode = TuneMode::Prompt;
    tc.learning_rate = 3e-3;
    tc.batch_size = 8;
    tc.epochs = 30;
    tc.seed = 5;
    const TrainResult res = train_model(model, &gen, set, tc);
    REQUIRE(!res.diverged);
    CHECK(res.log.back().loss < res.log.front().loss * 0.8);
}

TEST_CASE("divergence aborts with the last finite parameters") {
    std::mt19937_64 rng(1);
    ModelConfig cfg = tiny_model_config(ModelKind::AR, 3, 6, 1, 16, 2, 1);
    TransformerModel model(cfg, 3);
    TrainSet set = random_set(cfg, 2, 1, rng);
    TrainConfig tc;
    tc.mode = TuneMode::Scratch;
    tc.learning_rate = 1e30;  // guaranteed blow-up
    tc.batch_size = 1;
    tc.epochs = 10;
    tc.seed = 4;
    const TrainResult res = train_model(model, nullptr, set, tc);
    CHECK(res.diverged);
    for (const NamedParam& p : model.params()) CHECK(p.var.value().all_finite());
}

TEST_CASE("learning-rate schedule: warmup then cosine decay") {
    CHECK(lr_at_step(1.0, 0, 100, 10) == doctest::Approx(0.1));
    CHECK(lr_at_step(1.0, 9, 100, 10) == doctest::Approx(1.0));
    CHECK(lr_at_step(1.0, 10, 100, 10) == doctest::Approx(1.0));
    CHECK(lr_at_step(1.0, 55, 100, 10) == doctest::Approx(0.5));
    CHECK(lr_at_step(1.0, 100, 100, 10) == doctest::Approx(0.0));
    for (int64_t s = 10; s < 100; ++s) {
        CHECK(lr_at_step(1.0, s + 1, 100, 10) <= lr_at_step(1.0, s, 100, 10) + 1e-12);
    }
}

TEST_CASE("config validation") {
    TrainConfig tc;
    tc.learning_rate = 0.0;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
    tc.learning_rate = 1e-3;
    tc.instance_sample_prob = 1.5;
    CHECK_THROWS_AS(tc.validate(), std::invalid_argument);
}

}  // TEST_SUITE
