#include "sea/train.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "sea/evalkit.hpp"
#include "sea/graph.hpp"

namespace sea::train {

using num::Graph;
using num::RngStream;
using num::Tensor;
using vlm::Component;
using vlm::Vlm;

namespace {

constexpr float kBeta1 = 0.9f;
constexpr float kBeta2 = 0.999f;
constexpr float kAdamEps = 1e-8f;

struct AdamState {
    std::unordered_map<std::string, std::vector<float>> m;
    std::unordered_map<std::string, std::vector<float>> v;
    int64_t t = 0;
};

void adam_update(Vlm& model, const std::vector<std::string>& names,
                 const std::unordered_map<std::string, std::vector<float>>& grads,
                 AdamState& state, float lr) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(double(kBeta1), double(state.t));
    const double bc2 = 1.0 - std::pow(double(kBeta2), double(state.t));
    for (const auto& name : names) {
        Tensor& w = model.params.tensor(name);
        const auto& g = grads.at(name);
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.empty()) m.assign(w.data.size(), 0.0f);
        if (v.empty()) v.assign(w.data.size(), 0.0f);
        for (size_t i = 0; i < w.data.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0f - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0f - kBeta2) * g[i] * g[i];
            const double mhat = double(m[i]) / bc1;
            const double vhat = double(v[i]) / bc2;
            w.data[i] -= float(double(lr) * mhat / (std::sqrt(vhat) + double(kAdamEps)));
        }
    }
}

double item_loss_and_grads(Vlm& model, const synth::DataItem& item,
                           const std::vector<std::string>& trainable_names,
                           std::unordered_map<std::string, std::vector<float>>* accum) {
    std::vector<int> prompt_ids = vlm::prompt_ids_for(item.prompt);
    std::vector<int> target_ids = vlm::tokenize(item.response);
    target_ids.push_back(vlm::kEos);

    Tensor img = item.image;
    Graph g;
    num::ValueId loss = vlm::build_seq_nll(g, model, img, prompt_ids, target_ids);
    const double value = double(g.value(loss).data[0]);
    if (accum != nullptr) {
        g.backward(loss);
        for (const auto& name : trainable_names) {
            const Tensor& w = model.params.tensor(name);
            auto& acc = (*accum)[name];
            if (acc.empty()) acc.assign(w.data.size(), 0.0f);
            for (size_t i = 0; i < w.data.size(); ++i) acc[i] += w.grad[i];
        }
    }
    return value;
}

}  // namespace

std::vector<double> train(Vlm& model, const std::vector<synth::DataItem>& data,
                          const std::set<Component>& trainable, const TrainOptions& opt) {
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (trainable.empty()) throw std::invalid_argument("train: empty trainable set");
    if (opt.epochs < 0 || opt.batch_size < 1) {
        throw std::invalid_argument("train: bad epochs/batch_size");
    }

    model.params.set_requires_grad(trainable);
    const std::vector<std::string> names = vlm::component_params(model.params, trainable);

    AdamState adam;
    RngStream shuffle_rng(RngStream::derive(opt.seed, "train-shuffle"));
    std::vector<size_t> order(data.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> curve;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = size_t(shuffle_rng.next_u64() % i);
            std::swap(order[i - 1], order[j]);
        }
        double epoch_loss = 0;
        size_t at = 0;
        while (at < order.size()) {
            const size_t batch_end = std::min(order.size(), at + size_t(opt.batch_size));
            std::unordered_map<std::string, std::vector<float>> grads;
            for (size_t b = at; b < batch_end; ++b) {
                epoch_loss += item_loss_and_grads(model, data[order[b]], names, &grads);
            }
            const float inv = 1.0f / float(batch_end - at);
            for (auto& [name, g] : grads) {
                for (auto& v : g) v *= inv;
            }
            if (opt.lr != 0.0f) adam_update(model, names, grads, adam, opt.lr);
            at = batch_end;
        }
        curve.push_back(epoch_loss / double(data.size()));
    }
    model.params.set_requires_grad({});
    return curve;
}

double benign_answer_rate(const Vlm& model, const std::vector<synth::DataItem>& items) {
    if (items.empty()) throw std::invalid_argument("benign_answer_rate: no items");
    const evalkit::JudgeRule rule = evalkit::default_rule();
    int answered = 0;
    for (const auto& item : items) {
        const std::string response = vlm::generate(model, {item.image, item.prompt}, 48);
        if (evalkit::judge_response(response, rule).nrr_hit) ++answered;
    }
    return double(answered) / double(items.size());
}

double refusal_rate(const Vlm& model, const std::vector<synth::DataItem>& items) {
    if (items.empty()) throw std::invalid_argument("refusal_rate: no items");
    const evalkit::JudgeRule rule = evalkit::default_rule();
    int refused = 0;
    for (const auto& item : items) {
        const std::string response = vlm::generate(model, {item.image, item.prompt}, 48);
        if (!evalkit::judge_response(response, rule).nrr_hit) ++refused;
    }
    return double(refused) / double(items.size());
}

Vlm make_base(const vlm::VlmConfig& cfg, const BaseOptions& opt, AlignmentMetrics* metrics_out) {
    Vlm model = vlm::init_vlm(cfg, RngStream::derive(opt.seed, "base-init"));

    std::vector<synth::DataItem> data;
    auto extend = [&data](synth::SyntheticDataset ds) {
        for (auto& item : ds.items) data.push_back(std::move(item));
    };
    extend(synth::gen_dataset(synth::DatasetKind::Caption, opt.caption_items,
                              RngStream::derive(opt.seed, "base-caption"), cfg));
    extend(synth::gen_dataset(synth::DatasetKind::BenignQa, opt.qa_items,
                              RngStream::derive(opt.seed, "base-qa"), cfg));
    extend(synth::gen_dataset(synth::DatasetKind::Refusal, opt.refusal_items,
                              RngStream::derive(opt.seed, "base-refusal"), cfg));

    const auto benign = synth::held_out_benign(opt.held_out_benign,
                                               RngStream::derive(opt.seed, "base-ho-benign"), cfg);
    const auto harmful = synth::held_out_harmful(
        opt.held_out_harmful, RngStream::derive(opt.seed, "base-ho-harmful"), cfg);

    const std::set<Component> all_tags = {Component::VisionTower, Component::Projector,
                                          Component::Decoder};
    AlignmentMetrics metrics;
    TrainOptions topt;
    topt.lr = opt.lr;
    topt.batch_size = opt.batch_size;
    topt.seed = RngStream::derive(opt.seed, "base-train");
    int epoch = 0;
    while (epoch < opt.max_epochs) {
        const int chunk = std::min(opt.check_every, opt.max_epochs - epoch);
        topt.epochs = chunk;
        topt.seed = RngStream::derive(opt.seed, "base-train-e" + std::to_string(epoch));
        train(model, data, all_tags, topt);
        epoch += chunk;
        if (epoch < opt.min_epochs) continue;
        metrics.benign_answer_rate = benign_answer_rate(model, benign);
        metrics.refusal_rate = refusal_rate(model, harmful);
        metrics.epochs_run = epoch;
        if (metrics.benign_answer_rate >= opt.benign_target &&
            metrics.refusal_rate >= opt.refusal_target) {
            model.params.take_snapshot();
            if (metrics_out != nullptr) *metrics_out = metrics;
            return model;
        }
    }
    std::ostringstream os;
    os << "make_base: alignment targets unreachable within " << opt.max_epochs
       << " epochs (benign_answer_rate=" << metrics.benign_answer_rate
       << ", refusal_rate=" << metrics.refusal_rate << ")";
    throw std::runtime_error(os.str());
}

const std::vector<std::string>& FinetuneConfig::variant_names() {
    static const std::vector<std::string> v = {"llm-only", "freeze-tower", "freeze-projector",
                                               "full-ft"};
    return v;
}

FinetuneConfig FinetuneConfig::make(const std::string& name, const std::string& data) {
    FinetuneConfig cfg;
    cfg.name = name;
    if (name == "llm-only") {
        cfg.trainable = {Component::Decoder};
    } else if (name == "freeze-tower") {
        cfg.trainable = {Component::Decoder, Component::Projector};
    } else if (name == "freeze-projector") {
        cfg.trainable = {Component::Decoder, Component::VisionTower};
    } else if (name == "full-ft") {
        cfg.trainable = {Component::Decoder, Component::Projector, Component::VisionTower};
    } else {
        std::string valid;
        for (const auto& v : variant_names()) valid += (valid.empty() ? "" : ", ") + v;
        throw std::invalid_argument("unknown fine-tune variant '" + name + "' (expected " +
                                    valid + ")");
    }
    if (data == "safety") {
        cfg.dataset_kind = synth::DatasetKind::SafetyExtra;
    } else if (data == "general") {
        cfg.dataset_kind = synth::DatasetKind::GeneralExtra;
    } else {
        throw std::invalid_argument("unknown fine-tune data '" + data +
                                    "' (expected safety or general)");
    }
    return cfg;
}

Vlm make_finetune_variant(const Vlm& base, const FinetuneConfig& cfg, uint64_t seed) {
    if (!base.params.has_snapshot()) {
        throw std::runtime_error("make_finetune_variant: base model has no snapshot");
    }
    Vlm variant = base;  // deep copy; the base store is never touched
    synth::SyntheticDataset ds = synth::gen_dataset(
        cfg.dataset_kind, cfg.items, RngStream::derive(seed, "ft-data-" + cfg.name), base.cfg);
    TrainOptions topt;
    topt.epochs = cfg.epochs;
    topt.lr = cfg.lr;
    topt.seed = RngStream::derive(seed, "ft-train-" + cfg.name);
    train(variant, ds.items, cfg.trainable, topt);
    return variant;
}

}  // namespace sea::train
