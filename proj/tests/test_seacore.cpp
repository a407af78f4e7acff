#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "sea/attack.hpp"
#include "sea/vlm.hpp"

using namespace sea;
using namespace sea::attack;

namespace {

vlm::VlmConfig micro_config() {
    vlm::VlmConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.vision_layers = 1;
    cfg.decoder_layers = 1;
    cfg.heads = 2;
    cfg.context_len = 128;
    return cfg;
}

vlm::Vlm micro_model(uint64_t seed) {
    vlm::Vlm m = vlm::init_vlm(micro_config(), seed);
    m.params.take_snapshot();
    return m;
}

num::Tensor random_image(int size, uint64_t seed) {
    num::RngStream rng(seed);
    num::Tensor img = num::Tensor::zeros({size, size, 3});
    for (auto& v : img.data) v = float(rng.next_unit());
    return img;
}

Corpora tiny_corpora() {
    Corpora c;
    c.harmful_strings = {"bad thing one", "bad thing two", "bad thing three"};
    c.goal_targets = {{"How to do A?", "Sure, here is how to do A."},
                      {"How to do B?", "Sure, here is how to do B."}};
    return c;
}

bool bits_equal(const num::Tensor& a, const num::Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) == 0;
}

}  // namespace

TEST_CASE("sigma=0 perturbation reproduces the snapshot bitwise") {
    vlm::Vlm model = micro_model(1);
    num::RngStream rng(5);
    vlm::ParameterStore view = perturb_vision_encoder(model.params, 0.0f, rng);
    for (const auto& [name, e] : model.params.snapshot()) {
        CHECK(bits_equal(view.tensor(name), e.tensor));
    }
}

TEST_CASE("perturbation statistics match the per-tensor scale") {
    vlm::ParameterStore store;
    num::RngStream init(11);
    num::Tensor w = num::Tensor::zeros({64, 64});
    for (auto& v : w.data) v = init.next_normal() * 0.5f + 0.2f;
    store.insert("enc.w", w, vlm::Component::VisionTower);
    store.insert("dec.w", num::Tensor::full({4, 4}, 1.0f), vlm::Component::Decoder);
    store.take_snapshot();

    double mean_w = 0;
    for (float v : w.data) mean_w += double(v);
    mean_w /= double(w.data.size());
    double var_w = 0;
    for (float v : w.data) var_w += (double(v) - mean_w) * (double(v) - mean_w);
    const double std_w = std::sqrt(var_w / double(w.data.size()));
    const double sigma = 0.3;
    const double expected_std = sigma * std_w;

    num::RngStream rng(13);
    double sum = 0, sum_sq = 0;
    size_t n = 0;
    for (int draw = 0; draw < 200; ++draw) {
        vlm::ParameterStore view = perturb_vision_encoder(store, float(sigma), rng);
        const auto& pw = view.tensor("enc.w");
        for (size_t i = 0; i < pw.data.size(); ++i) {
            const double delta = double(pw.data[i]) - double(w.data[i]);
            sum += delta;
            sum_sq += delta * delta;
            ++n;
        }
        CHECK(bits_equal(view.tensor("dec.w"), store.tensor("dec.w")));
    }
    const double emp_mean = sum / double(n);
    const double emp_std = std::sqrt(sum_sq / double(n) - emp_mean * emp_mean);
    CHECK(emp_std == doctest::Approx(expected_std).epsilon(0.10));
    const double se = expected_std / std::sqrt(double(n));
    CHECK(std::abs(emp_mean) < 3.0 * se);

    // constant tensor: std 0 forces delta = 0 exactly
    vlm::ParameterStore const_store;
    const_store.insert("enc.c", num::Tensor::full({8, 8}, 3.5f), vlm::Component::Projector);
    const_store.insert("dec.w", num::Tensor::full({2}, 1.0f), vlm::Component::Decoder);
    const_store.take_snapshot();
    vlm::ParameterStore view = perturb_vision_encoder(const_store, 0.3f, rng);
    CHECK(bits_equal(view.tensor("enc.c"), const_store.tensor("enc.c")));

    CHECK_THROWS_AS(perturb_vision_encoder(store, -0.1f, rng), std::invalid_argument);
}

TEST_CASE("fresh noise every call, snapshot never mutated") {
    vlm::Vlm model = micro_model(2);
    auto snap_before = model.params.snapshot().at("vis.patch.w").tensor;
    num::RngStream rng(17);
    auto v1 = perturb_vision_encoder(model.params, 0.3f, rng);
    auto v2 = perturb_vision_encoder(model.params, 0.3f, rng);
    CHECK_FALSE(bits_equal(v1.tensor("vis.patch.w"), v2.tensor("vis.patch.w")));
    CHECK(bits_equal(model.params.snapshot().at("vis.patch.w").tensor, snap_before));
}

TEST_CASE("tpg prompt is byte-exact") {
    CHECK(build_tpg_prompt("Write a tutorial on X", "Sure, here is a tutorial on X") ==
          "Write a tutorial on X Must begin your response with: Sure, here is a tutorial on X");
    CHECK(build_tpg_prompt("Q", "Sure, here is A") ==
          "Q Must begin your response with: Sure, here is A");
    CHECK_THROWS_AS(build_tpg_prompt("", "t"), std::invalid_argument);
    CHECK_THROWS_AS(build_tpg_prompt("g", ""), std::invalid_argument);

    // exactly one connective for connective-free inputs
    const std::string connective = " Must begin your response with: ";
    for (const auto& gt : tiny_corpora().goal_targets) {
        std::string p = build_tpg_prompt(gt.goal, gt.target);
        size_t count = 0, pos = 0;
        while ((pos = p.find(connective, pos)) != std::string::npos) {
            ++count;
            pos += 1;
        }
        CHECK(count == 1);
    }
}

TEST_CASE("stage-1 loss: uniform model value, mean invariance, per-item oracle") {
    vlm::Vlm model = micro_model(3);
    for (auto& v : model.params.tensor("dec.head.w").data) v = 0.0f;
    for (auto& v : model.params.tensor("dec.head.b").data) v = 0.0f;
    num::Tensor img = random_image(8, 21);

    const std::string s = "hello";
    double one = stage1_loss(model, img, {s});
    CHECK(one == doctest::Approx(double(s.size() + 1) * std::log(259.0)).epsilon(1e-4));
    CHECK(stage1_loss(model, img, {s, s}) == doctest::Approx(one).epsilon(1e-7));

    vlm::Vlm rnd = micro_model(4);
    std::vector<std::string> batch = {"alpha", "beta", "gamma"};
    double mean_direct = stage1_loss(rnd, img, batch);
    double mean_manual = 0;
    for (const auto& item : batch) {
        mean_manual += vlm::forward_nll(rnd, {img, ""}, item) / double(batch.size());
    }
    CHECK(mean_direct == doctest::Approx(mean_manual).epsilon(1e-7));

    CHECK_THROWS_AS(stage1_loss(model, img, {}), std::invalid_argument);
}

TEST_CASE("stage-2 loss reduces to goal prompts without TPG and TPG prompts with") {
    vlm::Vlm model = micro_model(5);
    num::Tensor img = random_image(8, 22);
    auto pairs = tiny_corpora().goal_targets;

    double without = stage2_loss(model, img, pairs, false);
    double with_tpg = stage2_loss(model, img, pairs, true);
    double manual_without = 0, manual_with = 0;
    for (const auto& gt : pairs) {
        manual_without += vlm::forward_nll(model, {img, gt.goal}, gt.target) / double(pairs.size());
        manual_with += vlm::forward_nll(model, {img, build_tpg_prompt(gt.goal, gt.target)},
                                        gt.target) / double(pairs.size());
    }
    CHECK(without == doctest::Approx(manual_without).epsilon(1e-7));
    CHECK(with_tpg == doctest::Approx(manual_with).epsilon(1e-7));
}

TEST_CASE("pgd step: zero grad fixes the image, clipping holds at the boundary") {
    AdversarialImage img;
    img.pixels = num::Tensor::from({1, 1, 3}, {0.0f, 0.5f, 1.0f});
    num::Tensor zero = num::Tensor::zeros({1, 1, 3});
    AdversarialImage same = pgd_step(img, zero, 0.1f, AttackMode::Unconstrained, 0, nullptr);
    CHECK(bits_equal(same.pixels, img.pixels));

    // negative NLL-gradient at a pixel already at 1.0: descent pushes up, clip holds
    num::Tensor grad = num::Tensor::from({1, 1, 3}, {-1.0f, -1.0f, -1.0f});
    AdversarialImage up = pgd_step(img, grad, 0.25f, AttackMode::Unconstrained, 0, nullptr);
    CHECK(up.pixels.data[2] == 1.0f);
    CHECK(up.pixels.data[0] == 0.25f);

    CHECK_THROWS_AS(pgd_step(img, grad, 0.1f, AttackMode::EpsBall, 0.1f, nullptr),
                    std::invalid_argument);

    num::Tensor clean = num::Tensor::from({1, 1, 3}, {0.5f, 0.5f, 0.5f});
    AdversarialImage balled = pgd_step(img, grad, 0.5f, AttackMode::EpsBall, 0.1f, &clean);
    for (float v : balled.pixels.data) {
        CHECK(v >= 0.4f - 1e-6f);
        CHECK(v <= 0.6f + 1e-6f);
    }

    num::Tensor wrong = num::Tensor::zeros({2, 2, 3});
    CHECK_THROWS_AS(pgd_step(img, wrong, 0.1f, AttackMode::Unconstrained, 0, nullptr),
                    std::invalid_argument);
}

TEST_CASE("pgd iterates settle within alpha of a quadratic minimum") {
    // Closed-form proxy: NLL(x) = (x - c)^2 per channel, gradient 2(x - c).
    const float c = 0.7f, alpha = 0.04f;
    AdversarialImage img;
    img.pixels = num::Tensor::from({1, 1, 3}, {0.0f, 0.1f, 0.9f});
    bool entered = false;
    for (int step = 0; step < 80; ++step) {
        num::Tensor grad = img.pixels;
        for (auto& v : grad.data) v = 2.0f * (v - c);
        img = pgd_step(img, grad, alpha, AttackMode::Unconstrained, 0, nullptr);
        bool inside = true;
        for (float v : img.pixels.data) inside = inside && std::abs(v - c) <= alpha + 1e-6f;
        if (entered) CHECK(inside);
        if (inside) entered = true;
    }
    CHECK(entered);
}

TEST_CASE("zero-step attack returns the seeded init, deterministically") {
    vlm::Vlm model = micro_model(6);
    Corpora corpora = tiny_corpora();
    AttackConfig cfg;
    cfg.t1_steps = 0;
    cfg.t2_steps = 0;
    cfg.batch_size = 2;
    cfg.seed = 99;
    AttackResult r1 = run_sea(model, corpora, cfg);
    AttackResult r2 = run_sea(model, corpora, cfg);
    CHECK(r1.trace.empty());
    CHECK(bits_equal(r1.image.pixels, r2.image.pixels));
    for (float v : r1.image.pixels.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    double mean = 0;
    for (float v : r1.image.pixels.data) mean += double(v);
    mean /= double(r1.image.pixels.data.size());
    CHECK(mean == doctest::Approx(0.5).epsilon(0.15));

    cfg.seed = 100;
    AttackResult r3 = run_sea(model, corpora, cfg);
    CHECK_FALSE(bits_equal(r1.image.pixels, r3.image.pixels));
}

TEST_CASE("sigma=0 with FTS enabled equals FTS disabled bit-exactly") {
    vlm::Vlm model = micro_model(7);
    Corpora corpora = tiny_corpora();
    AttackConfig cfg;
    cfg.t1_steps = 2;
    cfg.t2_steps = 2;
    cfg.batch_size = 2;
    cfg.seed = 5;

    AttackConfig no_fts = cfg;
    no_fts.fts_enabled = false;
    AttackConfig zero_sigma = cfg;
    zero_sigma.sigma = 0.0f;

    AttackResult a = run_sea(model, corpora, no_fts);
    AttackResult b = run_sea(model, corpora, zero_sigma);
    CHECK(bits_equal(a.image.pixels, b.image.pixels));
    REQUIRE(a.trace.size() == b.trace.size());
    for (size_t i = 0; i < a.trace.size(); ++i) {
        CHECK(a.trace[i].loss == b.trace[i].loss);
    }
}

TEST_CASE("attack determinism and trace layout") {
    vlm::Vlm model = micro_model(8);
    Corpora corpora = tiny_corpora();
    AttackConfig cfg;
    cfg.t1_steps = 3;
    cfg.t2_steps = 2;
    cfg.batch_size = 2;
    cfg.sigma = 0.3f;
    cfg.seed = 77;

    AttackResult a = run_sea(model, corpora, cfg);
    AttackResult b = run_sea(model, corpora, cfg);
    CHECK(bits_equal(a.image.pixels, b.image.pixels));
    REQUIRE(a.trace.size() == 5);
    CHECK(a.trace[0].stage == 1);
    CHECK(a.trace[4].stage == 2);
    CHECK(a.trace[3].step == 1);
    for (size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].loss == b.trace[i].loss);

    // snapshot untouched by the full run
    for (const auto& [name, e] : model.params.snapshot()) {
        CHECK(bits_equal(model.params.tensor(name), e.tensor));
    }
}

TEST_CASE("eps-ball attack stays within the budget around the clean image") {
    vlm::Vlm model = micro_model(9);
    Corpora corpora = tiny_corpora();
    num::Tensor clean = random_image(8, 31);
    AttackConfig cfg;
    cfg.t1_steps = 2;
    cfg.t2_steps = 2;
    cfg.batch_size = 2;
    cfg.mode = AttackMode::EpsBall;
    cfg.eps = 16.0f / 255.0f;
    cfg.seed = 3;

    AttackResult r = run_sea(model, corpora, cfg, &clean);
    for (size_t i = 0; i < r.image.pixels.data.size(); ++i) {
        CHECK(std::abs(r.image.pixels.data[i] - clean.data[i]) <= cfg.eps + 1e-6f);
        CHECK(r.image.pixels.data[i] >= 0.0f);
        CHECK(r.image.pixels.data[i] <= 1.0f);
    }
    CHECK_THROWS_AS(run_sea(model, corpora, cfg, nullptr), std::invalid_argument);
}

TEST_CASE("non-finite loss is reported with its step index") {
    vlm::Vlm model = micro_model(10);
    auto& head = model.params.tensor("dec.head.w").data;
    for (size_t i = 0; i < head.size(); ++i) head[i] = (i % 2 == 0) ? 1e38f : -1e38f;
    model.params.take_snapshot();
    Corpora corpora = tiny_corpora();
    AttackConfig cfg;
    cfg.t1_steps = 1;
    cfg.t2_steps = 0;
    cfg.batch_size = 1;
    cfg.seed = 1;
    CHECK_THROWS_WITH_AS(run_sea(model, corpora, cfg), doctest::Contains("stage 1 step 1"),
                         std::runtime_error);
}

TEST_CASE("batch size larger than the corpus is rejected") {
    vlm::Vlm model = micro_model(11);
    Corpora corpora = tiny_corpora();
    AttackConfig cfg;
    cfg.batch_size = 10;
    cfg.t1_steps = 1;
    cfg.t2_steps = 1;
    CHECK_THROWS_AS(run_sea(model, corpora, cfg), std::invalid_argument);
}
