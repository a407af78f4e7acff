#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "sea/vlm.hpp"

using namespace sea;
using namespace sea::vlm;

namespace {

VlmConfig micro_config() {
    VlmConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 8;
    cfg.vision_layers = 1;
    cfg.decoder_layers = 1;
    cfg.heads = 2;
    cfg.context_len = 32;
    return cfg;
}

num::Tensor random_image(int size, uint64_t seed) {
    num::RngStream rng(seed);
    num::Tensor img = num::Tensor::zeros({size, size, 3});
    for (auto& v : img.data) v = float(rng.next_unit());
    return img;
}

void zero_head(Vlm& model) {
    for (auto& v : model.params.tensor("dec.head.w").data) v = 0.0f;
    for (auto& v : model.params.tensor("dec.head.b").data) v = 0.0f;
}

}  // namespace

TEST_CASE("tokenize is the byte identity with control ids on top") {
    CHECK(tokenize("A") == std::vector<int>{65});
    CHECK(tokenize("").empty());
    const std::string s = "Sure, here is";
    CHECK(detokenize(tokenize(s)) == s);
    CHECK_THROWS_AS(detokenize({259}), std::invalid_argument);
    // control ids are dropped, not errors
    CHECK(detokenize({kBos, 65, kEos, kPad}) == "A");
}

TEST_CASE("zeroed output head gives exactly uniform NLL") {
    Vlm model = init_vlm(micro_config(), 42);
    zero_head(model);
    const std::string target = "hello";
    ModelInput in{random_image(8, 1), "hi"};
    double nll = forward_nll(model, in, target);
    double expect = double(target.size() + 1) * std::log(259.0);  // target bytes + EOS
    CHECK(nll == doctest::Approx(expect).epsilon(1e-4));
}

TEST_CASE("empty text conditions on image tokens alone") {
    Vlm model = init_vlm(micro_config(), 43);
    ModelInput in{random_image(8, 2), ""};
    CHECK(std::isfinite(forward_nll(model, in, "x")));
    CHECK_THROWS_AS(forward_nll(model, in, ""), std::invalid_argument);
}

TEST_CASE("two-token zero-layer model matches exhaustive sequence enumeration") {
    VlmConfig cfg = micro_config();
    cfg.vocab_size = 2;
    cfg.vision_layers = 0;
    cfg.decoder_layers = 0;
    Vlm model = init_vlm(cfg, 7);
    num::Tensor img = random_image(8, 3);

    const std::vector<int> prompt = {0};
    const int len = 3;

    // Oracle: next-token chain probabilities, every sequence enumerated.
    auto chain_prob = [&](const std::vector<int>& seq) {
        double p = 1.0;
        std::vector<int> ids = prompt;
        for (int tok : seq) {
            std::vector<float> logits = next_token_logits(model, img, ids, int(prompt.size()));
            double e0 = std::exp(double(logits[0]));
            double e1 = std::exp(double(logits[1]));
            p *= (tok == 0 ? e0 : e1) / (e0 + e1);
            ids.push_back(tok);
        }
        return p;
    };

    double total = 0.0;
    for (int bits = 0; bits < (1 << len); ++bits) {
        std::vector<int> seq;
        for (int i = 0; i < len; ++i) seq.push_back((bits >> i) & 1);
        total += chain_prob(seq);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-5));

    const std::vector<int> target = {1, 0, 1};
    num::Graph g;
    num::Tensor img_copy = img;
    num::ValueId loss = build_seq_nll(g, model, img_copy, prompt, target);
    CHECK(double(g.value(loss).data[0]) ==
          doctest::Approx(-std::log(chain_prob(target))).epsilon(1e-4));
}

TEST_CASE("pixel gradients flow and match finite differences") {
    Vlm model = init_vlm(micro_config(), 99);
    num::Tensor img = random_image(8, 4);
    std::vector<int> prompt = {kBos, 'h', 'i'};
    std::vector<int> target = {'o', 'k', kEos};

    // Analytic pixel grad vs central differences on sampled pixels.
    num::Tensor pixels = img;
    pixels.requires_grad = true;
    num::Graph g;
    num::ValueId loss = build_seq_nll(g, model, pixels, prompt, target);
    g.backward(loss);
    REQUIRE(pixels.grad.size() == pixels.data.size());

    double grad_norm = 0;
    for (float v : pixels.grad) grad_norm += double(v) * double(v);
    CHECK(grad_norm > 0.0);

    num::RngStream pick(5);
    const double h = 1e-3;
    double max_rel = 0;
    for (int trial = 0; trial < 24; ++trial) {
        size_t i = size_t(pick.next_u64() % pixels.data.size());
        auto eval = [&](float delta) {
            num::Tensor p = img;
            p.data[i] = float(double(img.data[i]) + double(delta));
            num::Graph gg;
            num::ValueId l = build_seq_nll(gg, model, p, prompt, target);
            return gg.value_f64(l);
        };
        const double fp = eval(float(h)), fm = eval(float(-h));
        const double numeric = (fp - fm) / (2 * h);
        const double analytic = double(pixels.grad[i]);
        max_rel = std::max(max_rel, std::abs(analytic - numeric) /
                                        std::max({std::abs(analytic), std::abs(numeric), 1e-8}));
    }
    CHECK(max_rel < 1e-2);
}

TEST_CASE("component tags partition the store") {
    Vlm model = init_vlm(micro_config(), 11);
    auto vision = component_params(model.params, {Component::VisionTower});
    auto proj = component_params(model.params, {Component::Projector});
    auto dec = component_params(model.params, {Component::Decoder});
    auto all = component_params(model.params,
                                {Component::VisionTower, Component::Projector, Component::Decoder});
    CHECK(vision.size() + proj.size() + dec.size() == model.params.size());
    CHECK(all.size() == model.params.size());

    std::set<std::string> seen;
    for (const auto& lists : {vision, proj, dec}) {
        for (const auto& name : lists) CHECK(seen.insert(name).second);
    }

    auto encoder = component_params(model.params, {Component::VisionTower, Component::Projector});
    CHECK(encoder.size() == vision.size() + proj.size());
    for (const auto& name : dec) CHECK(model.params.tag(name) == Component::Decoder);

    CHECK_THROWS_AS(component_params(model.params, {}), std::invalid_argument);
    CHECK_THROWS_AS(component_from_string("llm"), std::invalid_argument);
    CHECK_THROWS_AS(component_from_byte(7), std::invalid_argument);
}

TEST_CASE("greedy generate is deterministic and respects max_tokens") {
    Vlm model = init_vlm(micro_config(), 13);
    // Bias the head so 'A' always wins: generation never hits EOS.
    zero_head(model);
    model.params.tensor("dec.head.b").data['A'] = 5.0f;

    ModelInput in{random_image(8, 6), "q"};
    CHECK(generate(model, in, 1) == "A");
    CHECK(generate(model, in, 4) == "AAAA");

    Vlm model2 = init_vlm(micro_config(), 14);
    ModelInput in2{random_image(8, 7), "hello"};
    CHECK(generate(model2, in2, 12) == generate(model2, in2, 12));
    CHECK_THROWS_AS(generate(model2, in2, 0), std::invalid_argument);
}

TEST_CASE("argmax ties break toward the lowest token id") {
    Vlm model = init_vlm(micro_config(), 15);
    zero_head(model);  // all logits equal -> token 0 wins every step
    ModelInput in{random_image(8, 8), ""};
    std::string out = generate(model, in, 3);
    CHECK(out == std::string(3, '\0'));
}

TEST_CASE("context overflow raises an error naming the lengths") {
    Vlm model = init_vlm(micro_config(), 16);  // context 32, 4 image tokens
    ModelInput in{random_image(8, 9), std::string(40, 'x')};
    CHECK_THROWS_WITH_AS(forward_nll(model, in, "y"),
                         doctest::Contains("exceed context_len"), std::invalid_argument);
}

TEST_CASE("snapshot freezes a copy of the entries") {
    Vlm model = init_vlm(micro_config(), 17);
    model.params.take_snapshot();
    const auto& snap = model.params.snapshot();
    CHECK(snap.size() == model.params.size());
    for (const auto& [name, e] : snap) {
        CHECK(e.tensor.data == model.params.tensor(name).data);
    }
    model.params.tensor("proj.b").data[0] += 1.0f;
    CHECK(snap.at("proj.b").tensor.data[0] != model.params.tensor("proj.b").data[0]);
}
