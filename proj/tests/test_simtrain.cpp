#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>

#include "sea/synth.hpp"
#include "sea/train.hpp"

using namespace sea;
using synth::DatasetKind;

namespace {

vlm::VlmConfig micro_config() {
    vlm::VlmConfig cfg;
    cfg.image_size = 8;
    cfg.patch_size = 4;
    cfg.embed_dim = 12;
    cfg.vision_layers = 1;
    cfg.decoder_layers = 1;
    cfg.heads = 2;
    cfg.context_len = 160;
    return cfg;
}

bool bits_equal(const num::Tensor& a, const num::Tensor& b) {
    return a.shape == b.shape &&
           std::memcmp(a.data.data(), b.data.data(), a.data.size() * 4) == 0;
}

double l2_distance(const num::Tensor& a, const num::Tensor& b) {
    double s = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = double(a.data[i]) - double(b.data[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace

TEST_CASE("datasets are deterministic in (kind, n, seed)") {
    auto cfg = micro_config();
    auto a = synth::gen_dataset(DatasetKind::Refusal, 5, 7, cfg);
    auto b = synth::gen_dataset(DatasetKind::Refusal, 5, 7, cfg);
    REQUIRE(a.items.size() == 5);
    for (size_t i = 0; i < a.items.size(); ++i) {
        CHECK(a.items[i].prompt == b.items[i].prompt);
        CHECK(a.items[i].response == b.items[i].response);
        CHECK(bits_equal(a.items[i].image, b.items[i].image));
    }
    auto c = synth::gen_dataset(DatasetKind::Refusal, 5, 8, cfg);
    bool any_diff = false;
    for (size_t i = 0; i < a.items.size(); ++i) {
        any_diff = any_diff || a.items[i].prompt != c.items[i].prompt ||
                   !bits_equal(a.items[i].image, c.items[i].image);
    }
    CHECK(any_diff);
}

TEST_CASE("refusal responses always start with the canonical prefix") {
    auto cfg = micro_config();
    auto ds = synth::gen_dataset(DatasetKind::Refusal, 40, 3, cfg);
    for (const auto& item : ds.items) {
        CHECK(item.response.rfind("I cannot", 0) == 0);
    }
    // safety-extra paraphrases still read as refusals
    auto extra = synth::gen_dataset(DatasetKind::SafetyExtra, 40, 3, cfg);
    for (const auto& item : extra.items) {
        bool refusal_like = item.response.find("I cannot") != std::string::npos ||
                            item.response.find("I'm sorry") != std::string::npos ||
                            item.response.find("I will not") != std::string::npos;
        CHECK(refusal_like);
    }
}

TEST_CASE("caption responses regenerate from stored shape metadata") {
    auto cfg = micro_config();
    auto ds = synth::gen_dataset(DatasetKind::Caption, 24, 11, cfg);
    REQUIRE(ds.meta.size() == ds.items.size());
    for (size_t i = 0; i < ds.items.size(); ++i) {
        CHECK(ds.items[i].response == synth::caption_for(ds.meta[i].shape, ds.meta[i].color));
    }
    // general-extra alternates caption items with qa items
    auto extra = synth::gen_dataset(DatasetKind::GeneralExtra, 10, 11, cfg);
    for (size_t i = 0; i < extra.items.size(); i += 2) {
        CHECK(extra.items[i].response == synth::caption_for(extra.meta[i].shape, extra.meta[i].color));
    }
    CHECK_THROWS_AS(synth::dataset_kind_from_string("nope"), std::invalid_argument);
}

TEST_CASE("dataset images stay in range and pools stay disjoint") {
    auto cfg = micro_config();
    for (auto kind : {DatasetKind::Caption, DatasetKind::BenignQa, DatasetKind::Refusal,
                      DatasetKind::SafetyExtra, DatasetKind::GeneralExtra}) {
        auto ds = synth::gen_dataset(kind, 8, 5, cfg);
        for (const auto& item : ds.items) {
            CHECK_FALSE(item.response.empty());
            for (float v : item.image.data) {
                CHECK(v >= 0.0f);
                CHECK(v <= 1.0f);
            }
        }
    }

    // attack corpus goals and eval goals never appear among trained refusals
    auto trained = synth::gen_dataset(DatasetKind::Refusal, 120, 1, cfg);
    auto corpora = synth::attack_corpora();
    auto goals = synth::eval_goals(20);
    CHECK(corpora.harmful_strings.size() == 50);
    CHECK(corpora.goal_targets.size() == 50);
    for (const auto& item : trained.items) {
        for (const auto& gt : corpora.goal_targets) CHECK(item.prompt != gt.goal);
        for (const auto& gt : goals) CHECK(item.prompt != gt.goal);
    }
    for (const auto& gt : goals) {
        for (const auto& pair : corpora.goal_targets) CHECK(gt.goal != pair.goal);
    }
}

TEST_CASE("training updates only the trainable component") {
    vlm::Vlm model = vlm::init_vlm(micro_config(), 21);
    auto before = model.params.entries();

    auto ds = synth::gen_dataset(DatasetKind::Caption, 6, 2, model.cfg);
    train::TrainOptions opt;
    opt.epochs = 1;
    opt.lr = 1e-3f;
    opt.seed = 3;
    auto curve = train::train(model, ds.items, {vlm::Component::Decoder}, opt);
    REQUIRE(curve.size() == 1);
    CHECK(std::isfinite(curve[0]));

    bool decoder_changed = false;
    for (const auto& [name, e] : model.params.entries()) {
        if (e.tag == vlm::Component::Decoder) {
            decoder_changed = decoder_changed || !bits_equal(e.tensor, before.at(name).tensor);
        } else {
            CHECK(bits_equal(e.tensor, before.at(name).tensor));
        }
    }
    CHECK(decoder_changed);

    CHECK_THROWS_AS(train::train(model, {}, {vlm::Component::Decoder}, opt), std::invalid_argument);
    CHECK_THROWS_AS(train::train(model, ds.items, {}, opt), std::invalid_argument);
}

TEST_CASE("zero learning rate leaves every parameter bit-identical") {
    vlm::Vlm model = vlm::init_vlm(micro_config(), 22);
    auto before = model.params.entries();
    auto ds = synth::gen_dataset(DatasetKind::BenignQa, 4, 9, model.cfg);
    train::TrainOptions opt;
    opt.epochs = 2;
    opt.lr = 0.0f;
    auto curve = train::train(model, ds.items,
                       {vlm::Component::VisionTower, vlm::Component::Projector,
                        vlm::Component::Decoder},
                       opt);
    REQUIRE(curve.size() == 2);
    CHECK(curve[0] == curve[1]);
    for (const auto& [name, e] : model.params.entries()) {
        CHECK(bits_equal(e.tensor, before.at(name).tensor));
    }
}

TEST_CASE("training reduces the loss on a small overfit set") {
    vlm::Vlm model = vlm::init_vlm(micro_config(), 23);
    auto ds = synth::gen_dataset(DatasetKind::Caption, 8, 4, model.cfg);
    train::TrainOptions opt;
    opt.epochs = 10;
    opt.lr = 3e-3f;
    opt.seed = 5;
    auto curve = train::train(model, ds.items,
                       {vlm::Component::VisionTower, vlm::Component::Projector,
                        vlm::Component::Decoder},
                       opt);
    REQUIRE(curve.size() == 10);
    CHECK(curve.back() < curve.front());
}

TEST_CASE("echo-trained model reproduces its constant response") {
    vlm::Vlm model = vlm::init_vlm(micro_config(), 24);
    auto ds = synth::gen_dataset(DatasetKind::Caption, 8, 6, model.cfg);
    const std::string echo = "Sure, here is the thing.";
    for (auto& item : ds.items) item.response = echo;
    train::TrainOptions opt;
    opt.epochs = 60;
    opt.lr = 4e-3f;
    opt.seed = 7;
    train::train(model, ds.items,
          {vlm::Component::VisionTower, vlm::Component::Projector, vlm::Component::Decoder},
          opt);
    std::string out = vlm::generate(model, {ds.items[0].image, ds.items[0].prompt}, 48);
    CHECK(out == echo);
}

TEST_CASE("fine-tune variants freeze exactly what their name says") {
    vlm::Vlm base = vlm::init_vlm(micro_config(), 25);
    base.params.take_snapshot();
    auto base_copy = base.params.entries();

    train::FinetuneConfig cfg = train::FinetuneConfig::make("llm-only", "safety");
    cfg.items = 6;
    cfg.epochs = 1;
    vlm::Vlm variant = train::make_finetune_variant(base, cfg, 31);

    for (const auto& [name, e] : base.params.entries()) {
        CHECK(bits_equal(e.tensor, base_copy.at(name).tensor));  // base untouched
    }
    for (const auto& [name, e] : variant.params.entries()) {
        if (e.tag != vlm::Component::Decoder) {
            CHECK(bits_equal(e.tensor, base.params.tensor(name)));
        }
    }
    CHECK(variant.params.has_snapshot());

    // same seed -> reproducible variant
    vlm::Vlm again = train::make_finetune_variant(base, cfg, 31);
    for (const auto& [name, e] : variant.params.entries()) {
        CHECK(bits_equal(e.tensor, again.params.tensor(name)));
    }

    CHECK_THROWS_WITH_AS(train::FinetuneConfig::make("bad", "safety"), doctest::Contains("llm-only"),
                         std::invalid_argument);
    CHECK_THROWS_AS(train::FinetuneConfig::make("llm-only", "bad"), std::invalid_argument);
}

TEST_CASE("full fine-tuning drifts every component") {
    vlm::Vlm base = vlm::init_vlm(micro_config(), 26);
    base.params.take_snapshot();
    train::FinetuneConfig cfg = train::FinetuneConfig::make("full-ft", "safety");
    cfg.items = 8;
    cfg.epochs = 2;
    vlm::Vlm variant = train::make_finetune_variant(base, cfg, 33);

    double drift[3] = {0, 0, 0};
    for (const auto& [name, e] : variant.params.entries()) {
        drift[size_t(e.tag)] += l2_distance(e.tensor, base.params.tensor(name));
    }
    CHECK(drift[0] > 0);  // vision tower
    CHECK(drift[1] > 0);  // projector
    CHECK(drift[2] > 0);  // decoder
}

TEST_CASE("make_base reports metrics when alignment is unreachable") {
    train::BaseOptions opt;
    opt.seed = 5;
    opt.caption_items = 4;
    opt.qa_items = 4;
    opt.refusal_items = 4;
    opt.held_out_benign = 4;
    opt.held_out_harmful = 4;
    opt.max_epochs = 1;
    opt.min_epochs = 1;
    opt.check_every = 1;
    CHECK_THROWS_WITH_AS(train::make_base(micro_config(), opt), doctest::Contains("refusal_rate"),
                         std::runtime_error);
}
