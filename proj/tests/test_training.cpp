#include <cmath>
#include <filesystem>
#include <fstream>

#include "atomtok/data.hpp"
#include "atomtok/checkpoint.hpp"
#include "atomtok/training.hpp"
#include "doctest.h"

using namespace atomtok;

namespace {

TokenizerConfig overfit_config() {
    TokenizerConfig cfg;
    cfg.n_encoder_layers = 1;
    cfg.n_decoder_layers = 2;
    cfg.d_model = 32;
    cfg.d_state = 8;
    cfg.conv_width = 4;
    cfg.expand = 2;
    cfg.seed = 5;
    return cfg;
}

PointCloud cloud50(uint64_t seed) {
    RandomStream rng(seed);
    return synth_polymer(rng, 17, 3, SynthStyle::mixed);  // 51 atoms
}

}  // namespace

TEST_CASE("adam: quadratic bowl converges below 1e-3 within 500 steps at lr 0.1") {
    auto w = TensorF::from({1}, {5.0f}, true);
    std::vector<Tensor<float>*> params = {&w};
    AdamState st;
    for (int step = 0; step < 500; ++step) {
        w.zero_grad();
        w.grad_mut()[0] = 2.0f * w.at(0);  // d/dw w^2
        REQUIRE(adam_step(params, st, 0.1));
    }
    CHECK(std::abs(w.at(0)) < 1e-3);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    auto w = TensorF::from({2}, {1.5f, -2.5f}, true);
    std::vector<Tensor<float>*> params = {&w};
    AdamState st;
    w.zero_grad();
    w.grad_mut();  // populated zeros
    REQUIRE(adam_step(params, st, 0.1));
    CHECK(w.at(0) == doctest::Approx(1.5f));
    CHECK(w.at(1) == doctest::Approx(-2.5f));
}

TEST_CASE("adam: first step matches the bias-corrected formula by hand") {
    auto w = TensorF::from({1}, {1.0f}, true);
    std::vector<Tensor<float>*> params = {&w};
    AdamState st;
    w.zero_grad();
    const double g = 0.5;
    w.grad_mut()[0] = static_cast<float>(g);
    REQUIRE(adam_step(params, st, 0.01));
    // mhat = g, vhat = g^2  =>  update = lr * g / (|g| + eps) ~ lr * sign(g)
    const double expect = 1.0 - 0.01 * g / (std::sqrt(g * g) + 1e-8);
    CHECK(w.at(0) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adam: non-finite gradients skip the update") {
    auto w = TensorF::from({1}, {1.0f}, true);
    std::vector<Tensor<float>*> params = {&w};
    AdamState st;
    w.zero_grad();
    w.grad_mut()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(adam_step(params, st, 0.1));
    CHECK(w.at(0) == doctest::Approx(1.0f));
    CHECK(st.t == 0);
}

TEST_CASE("polynomial schedule: endpoints, midpoint, monotone non-increasing") {
    TrainConfig cfg;
    cfg.lr_start = 3e-4;
    cfg.lr_end = 0.0;
    cfg.poly_power = 1.0;
    cfg.total_steps = 1000;
    CHECK(polynomial_lr(0, cfg) == doctest::Approx(3e-4));
    CHECK(polynomial_lr(1000, cfg) == doctest::Approx(0.0));
    CHECK(polynomial_lr(500, cfg) == doctest::Approx(1.5e-4));
    double prev = polynomial_lr(0, cfg);
    for (int64_t s = 1; s <= 1000; s += 50) {
        const double lr = polynomial_lr(s, cfg);
        CHECK(lr <= prev + 1e-18);
        prev = lr;
    }
    cfg.lr_end = 1e-5;
    cfg.poly_power = 2.0;
    CHECK(polynomial_lr(cfg.total_steps, cfg) == doctest::Approx(1e-5));
}

TEST_CASE("make_batch: pads to the longest structure and keeps the mask") {
    RandomStream rng(81);
    auto a = synth_polymer(rng, 10, 1, SynthStyle::helix);
    auto b = synth_polymer(rng, 20, 1, SynthStyle::helix);
    auto batch = make_batch({&a, &b}, 4160);
    CHECK(batch.padded_len == 20);
    CHECK(batch.items[0].padded.size() == 20);
    CHECK(batch.items[0].n_real == 10);
    CHECK(batch.items[1].n_real == 20);

    auto equal_batch = make_batch({&b, &b}, 4160);
    CHECK(equal_batch.items[0].padded.size() == 20);  // zero padding
    CHECK_THROWS_AS(make_batch({}, 4160), std::invalid_argument);
    CHECK_THROWS_AS(make_batch({&b}, 15), std::invalid_argument);
}

TEST_CASE("masked loss on a padded batch equals the unpadded per-structure losses") {
    RandomStream rng(82);
    auto a = synth_polymer(rng, 12, 2, SynthStyle::mixed);
    auto b = synth_polymer(rng, 25, 2, SynthStyle::mixed);
    auto model = TokenizerModel<float>::init(overfit_config());

    auto batch = make_batch({&a, &b}, 4160);
    NoGradGuard inference;
    for (size_t i = 0; i < batch.items.size(); ++i) {
        const PointCloud direct = i == 0 ? a : b;
        const double unpadded = forward_loss(model, direct).total;
        const double masked = forward_loss(model, unpadded_view(batch.items[i])).total;
        CHECK(masked == doctest::Approx(unpadded));
    }
}

TEST_CASE("single-structure overfit drops below 0.1 A within 2000 steps") {
    auto model = TokenizerModel<float>::init(overfit_config());
    RandomStream rng(83);
    const PointCloud pc = synth_polymer(rng, 50, 1, SynthStyle::helix);  // 50 atoms

    TrainConfig cfg;
    cfg.total_steps = 2000;
    cfg.effective_batch = 1;
    cfg.lr_start = 5e-3;
    cfg.lr_end = 0.0;
    cfg.augment_rotations = false;
    cfg.validate_every = 500;
    cfg.seed = 1;
    auto result = train(model, {pc}, {pc}, cfg);
    MESSAGE("overfit val rmse: ", result.final_val_rmse);
    CHECK(result.final_val_rmse < 0.1);

    // Loss decreases from the start and ends below 0.1 as well.
    auto loss_at = [&](size_t idx) {
        return nlohmann::json::parse(result.metric_lines.at(idx)).at("train_loss").get<double>();
    };
    CHECK(loss_at(199) < loss_at(0));
    NoGradGuard inference;
    CHECK(forward_loss(model, pc).total < 0.1);
}

TEST_CASE("rotation augmentation changes the loss sequence for the same seed") {
    const PointCloud pc = cloud50(84);
    TrainConfig cfg;
    cfg.total_steps = 3;
    cfg.effective_batch = 2;
    cfg.validate_every = 0;
    cfg.seed = 9;

    auto m1 = TokenizerModel<float>::init(overfit_config());
    cfg.augment_rotations = false;
    auto r1 = train(m1, {pc}, {}, cfg);
    auto m2 = TokenizerModel<float>::init(overfit_config());
    cfg.augment_rotations = true;
    auto r2 = train(m2, {pc}, {}, cfg);
    CHECK(r1.metric_lines != r2.metric_lines);
}

TEST_CASE("fixed seed reproduces the metrics log bit-identically; resume matches uninterrupted") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "atomtok_train_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::vector<PointCloud> train_set, val_set;
    RandomStream rng(85);
    for (int i = 0; i < 6; ++i) train_set.push_back(synth_polymer(rng, 8 + i, 2, SynthStyle::mixed));
    val_set.push_back(synth_polymer(rng, 9, 2, SynthStyle::mixed));

    TokenizerConfig mc = overfit_config();
    mc.d_model = 16;
    mc.d_state = 4;

    TrainConfig cfg;
    cfg.total_steps = 30;
    cfg.effective_batch = 2;
    cfg.validate_every = 10;
    cfg.checkpoint_every = 15;
    cfg.seed = 4;
    cfg.out_dir = (dir / "a").string();

    auto model_a = TokenizerModel<float>::init(mc);
    auto run_a = train(model_a, train_set, val_set, cfg);

    // Same-seed rerun: bit-identical metrics.
    cfg.out_dir = (dir / "b").string();
    auto model_b = TokenizerModel<float>::init(mc);
    auto run_b = train(model_b, train_set, val_set, cfg);
    REQUIRE(run_a.metric_lines.size() == run_b.metric_lines.size());
    for (size_t i = 0; i < run_a.metric_lines.size(); ++i)
        CHECK(run_a.metric_lines[i] == run_b.metric_lines[i]);

    // Resume from the step-15 checkpoint and compare the tail.
    auto model_c = load_model((dir / "a" / "ckpt-15.atk").string());
    TrainState st = load_train_state((dir / "a" / "state-15.atk").string(), model_c);
    cfg.out_dir = (dir / "c").string();
    auto run_c = train(model_c, train_set, val_set, cfg, &st);
    REQUIRE(run_c.metric_lines.size() == 15);
    for (size_t i = 0; i < run_c.metric_lines.size(); ++i)
        CHECK(run_c.metric_lines[i] == run_a.metric_lines[15 + i]);
    CHECK(run_c.final_val_rmse == doctest::Approx(run_a.final_val_rmse).epsilon(1e-12));

    // Thread count must not change the result either.
    cfg.out_dir.clear();
    cfg.threads = 2;
    auto model_d = TokenizerModel<float>::init(mc);
    auto run_d = train(model_d, train_set, val_set, cfg);
    for (size_t i = 0; i < run_a.metric_lines.size(); ++i)
        CHECK(run_d.metric_lines[i] == run_a.metric_lines[i]);

    fs::remove_all(dir);
}

TEST_CASE("training rejects an empty dataset") {
    auto model = TokenizerModel<float>::init(overfit_config());
    TrainConfig cfg;
    CHECK_THROWS_AS(train(model, {}, {}, cfg), std::invalid_argument);
}
