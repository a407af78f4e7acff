#include "sea/attack.hpp"

#include <cmath>
#include <stdexcept>

namespace sea::attack {

using num::Graph;
using num::RngStream;
using num::Tensor;
using num::ValueId;
using vlm::Component;
using vlm::ParameterStore;
using vlm::Vlm;

namespace {

constexpr const char* kTargetPrefix = "Sure, here is";
constexpr const char* kTpgConnective = " Must begin your response with: ";

double tensor_std(const Tensor& t) {
    double mean = 0;
    for (float v : t.data) mean += double(v);
    mean /= double(t.data.size());
    double var = 0;
    for (float v : t.data) {
        double d = double(v) - mean;
        var += d * d;
    }
    return std::sqrt(var / double(t.data.size()));
}

}  // namespace

void AdversarialImage::validate(const vlm::VlmConfig& cfg) const {
    const std::vector<int> want = {cfg.image_size, cfg.image_size, 3};
    if (pixels.shape != want) {
        throw std::invalid_argument("adversarial image shape " + num::shape_str(pixels.shape) +
                                    " does not match model input " + num::shape_str(want));
    }
    for (float v : pixels.data) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw std::runtime_error("adversarial image pixel outside [0,1]");
        }
    }
}

void Corpora::validate() const {
    if (harmful_strings.empty()) throw std::invalid_argument("corpora: no harmful strings");
    if (goal_targets.empty()) throw std::invalid_argument("corpora: no goal-target pairs");
    for (const auto& s : harmful_strings) {
        if (s.empty()) throw std::invalid_argument("corpora: empty harmful string");
    }
    for (const auto& gt : goal_targets) {
        if (gt.goal.empty()) throw std::invalid_argument("corpora: empty goal");
        if (gt.target.rfind(kTargetPrefix, 0) != 0) {
            throw std::invalid_argument("corpora: target for goal \"" + gt.goal +
                                        "\" does not begin with \"Sure, here is\"");
        }
    }
}

void AttackConfig::validate(const Corpora& corpora) const {
    if (sigma < 0) throw std::invalid_argument("attack: sigma must be >= 0");
    if (alpha <= 0) throw std::invalid_argument("attack: alpha must be > 0");
    if (batch_size < 1) throw std::invalid_argument("attack: batch_size must be >= 1");
    if (t1_steps < 0 || t2_steps < 0) throw std::invalid_argument("attack: negative step count");
    if (mode == AttackMode::EpsBall && !(eps > 0.0f && eps <= 1.0f)) {
        throw std::invalid_argument("attack: eps must be in (0,1]");
    }
    if (t1_steps > 0 && size_t(batch_size) > corpora.harmful_strings.size()) {
        throw std::invalid_argument("attack: batch_size exceeds harmful string corpus size");
    }
    if (t2_steps > 0 && size_t(batch_size) > corpora.goal_targets.size()) {
        throw std::invalid_argument("attack: batch_size exceeds goal-target corpus size");
    }
}

ParameterStore perturb_vision_encoder(const ParameterStore& params, float sigma,
                                      RngStream& rng) {
    if (sigma < 0) throw std::invalid_argument("perturb_vision_encoder: sigma must be >= 0");
    if (!params.has_snapshot()) {
        throw std::runtime_error("perturb_vision_encoder: parameter store has no snapshot");
    }
    ParameterStore out;
    for (const auto& [name, snap_entry] : params.snapshot()) {
        const bool encoder = snap_entry.tag == Component::VisionTower ||
                             snap_entry.tag == Component::Projector;
        if (!encoder) {
            // Decoder stays untouched: live weights, no noise.
            Tensor t = params.tensor(name);
            t.requires_grad = false;
            t.grad.clear();
            out.insert(name, std::move(t), snap_entry.tag);
            continue;
        }
        Tensor t = snap_entry.tensor;
        t.requires_grad = false;
        t.grad.clear();
        const double scale = double(sigma) * tensor_std(t);
        if (sigma > 0.0f && scale > 0.0) {
            for (auto& v : t.data) v += float(double(rng.next_normal()) * scale);
        }
        out.insert(name, std::move(t), snap_entry.tag);
    }
    return out;
}

std::string build_tpg_prompt(const std::string& goal, const std::string& target) {
    if (goal.empty()) throw std::invalid_argument("build_tpg_prompt: empty goal");
    if (target.empty()) throw std::invalid_argument("build_tpg_prompt: empty target");
    return goal + kTpgConnective + target;
}

namespace {

// Shared batch-NLL path. Computes the mean loss; when `want_grad` is set it
// also averages d(loss)/d(pixels) across items.
LossGrad batch_nll(const Vlm& model, const Tensor& image,
                   const std::vector<std::pair<std::string, std::string>>& prompt_targets,
                   bool want_grad) {
    if (prompt_targets.empty()) throw std::invalid_argument("stage loss: empty batch");
    Vlm& m = const_cast<Vlm&>(model);  // leaves are read-only without requires_grad

    LossGrad out;
    out.loss = 0;
    if (want_grad) {
        out.pixel_grad = Tensor::zeros(image.shape);
    }
    const double inv_b = 1.0 / double(prompt_targets.size());
    for (const auto& [prompt, target] : prompt_targets) {
        std::vector<int> prompt_ids = vlm::prompt_ids_for(prompt);
        std::vector<int> target_ids = vlm::tokenize(target);
        target_ids.push_back(vlm::kEos);

        Tensor img = image;
        img.requires_grad = want_grad;
        img.grad.clear();
        Graph g;
        ValueId loss = vlm::build_seq_nll(g, m, img, prompt_ids, target_ids);
        out.loss += double(g.value(loss).data[0]) * inv_b;
        if (want_grad) {
            g.backward(loss);
            for (size_t i = 0; i < out.pixel_grad.data.size(); ++i) {
                out.pixel_grad.data[i] += float(double(img.grad[i]) * inv_b);
            }
        }
    }
    return out;
}

std::vector<std::pair<std::string, std::string>> stage1_items(
    const std::vector<std::string>& batch) {
    std::vector<std::pair<std::string, std::string>> items;
    items.reserve(batch.size());
    for (const auto& s : batch) items.emplace_back("", s);  // no textual input
    return items;
}

std::vector<std::pair<std::string, std::string>> stage2_items(
    const std::vector<GoalTarget>& batch, bool tpg_enabled) {
    std::vector<std::pair<std::string, std::string>> items;
    items.reserve(batch.size());
    for (const auto& gt : batch) {
        items.emplace_back(tpg_enabled ? build_tpg_prompt(gt.goal, gt.target) : gt.goal,
                           gt.target);
    }
    return items;
}

}  // namespace

double stage1_loss(const Vlm& model, const Tensor& image,
                   const std::vector<std::string>& batch) {
    return batch_nll(model, image, stage1_items(batch), false).loss;
}

double stage2_loss(const Vlm& model, const Tensor& image,
                   const std::vector<GoalTarget>& batch, bool tpg_enabled) {
    return batch_nll(model, image, stage2_items(batch, tpg_enabled), false).loss;
}

LossGrad stage1_loss_grad(const Vlm& model, const Tensor& image,
                          const std::vector<std::string>& batch) {
    return batch_nll(model, image, stage1_items(batch), true);
}

LossGrad stage2_loss_grad(const Vlm& model, const Tensor& image,
                          const std::vector<GoalTarget>& batch, bool tpg_enabled) {
    return batch_nll(model, image, stage2_items(batch, tpg_enabled), true);
}

AdversarialImage pgd_step(const AdversarialImage& image, const Tensor& grad, float alpha,
                          AttackMode mode, float eps, const Tensor* clean_image) {
    if (grad.shape != image.pixels.shape) {
        throw std::invalid_argument("pgd_step: grad shape " + num::shape_str(grad.shape) +
                                    " does not match image " + num::shape_str(image.pixels.shape));
    }
    if (mode == AttackMode::EpsBall && clean_image == nullptr) {
        throw std::invalid_argument("pgd_step: eps-ball mode requires a clean image");
    }
    AdversarialImage out;
    out.pixels = image.pixels;
    for (size_t i = 0; i < out.pixels.data.size(); ++i) {
        const float gv = grad.data[i];
        const float sgn = gv > 0.0f ? 1.0f : (gv < 0.0f ? -1.0f : 0.0f);
        float v = out.pixels.data[i] - alpha * sgn;  // descend the NLL
        if (mode == AttackMode::EpsBall) {
            const float c = clean_image->data[i];
            v = std::min(c + eps, std::max(c - eps, v));
        }
        out.pixels.data[i] = std::min(1.0f, std::max(0.0f, v));
    }
    return out;
}

AttackResult run_sea(const Vlm& model, const Corpora& corpora, const AttackConfig& cfg,
                     const Tensor* clean_image) {
    corpora.validate();
    cfg.validate(corpora);
    if (!model.params.has_snapshot()) {
        throw std::runtime_error("run_sea: model has no reference snapshot");
    }
    if (cfg.mode == AttackMode::EpsBall && clean_image == nullptr) {
        throw std::invalid_argument("run_sea: eps-ball mode requires a clean image");
    }

    Vlm work = model;
    work.params.set_requires_grad({});

    RngStream init_rng(RngStream::derive(cfg.seed, "init"));
    RngStream batch1_rng(RngStream::derive(cfg.seed, "stage1-batch"));
    RngStream batch2_rng(RngStream::derive(cfg.seed, "stage2-batch"));
    RngStream fts_rng(RngStream::derive(cfg.seed, "fts"));

    AttackResult result;
    Tensor& pixels = result.image.pixels;
    if (cfg.start_from_clean && clean_image != nullptr) {
        pixels = *clean_image;
        pixels.requires_grad = false;
        pixels.grad.clear();
    } else {
        pixels = Tensor::zeros({model.cfg.image_size, model.cfg.image_size, 3});
        for (auto& v : pixels.data) v = float(init_rng.next_unit());
    }
    if (cfg.mode == AttackMode::EpsBall) {
        for (size_t i = 0; i < pixels.data.size(); ++i) {
            const float c = clean_image->data[i];
            pixels.data[i] = std::min(1.0f, std::max(0.0f,
                std::min(c + cfg.eps, std::max(c - cfg.eps, pixels.data[i]))));
        }
    }

    const float sigma = cfg.fts_enabled ? cfg.sigma : 0.0f;

    for (int step = 1; step <= cfg.t1_steps; ++step) {
        std::vector<std::string> batch;
        batch.reserve(size_t(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i) {
            batch.push_back(corpora.harmful_strings[size_t(
                batch1_rng.next_u64() % corpora.harmful_strings.size())]);
        }
        Vlm view{work.cfg, perturb_vision_encoder(work.params, sigma, fts_rng)};
        LossGrad lg = stage1_loss_grad(view, pixels, batch);
        if (!std::isfinite(lg.loss)) {
            throw std::runtime_error("run_sea: loss is not finite at stage 1 step " +
                                     std::to_string(step));
        }
        result.image = pgd_step(result.image, lg.pixel_grad, cfg.alpha, cfg.mode, cfg.eps,
                                clean_image);
        result.trace.push_back({step, 1, lg.loss});
    }

    for (int step = 1; step <= cfg.t2_steps; ++step) {
        std::vector<GoalTarget> batch;
        batch.reserve(size_t(cfg.batch_size));
        for (int i = 0; i < cfg.batch_size; ++i) {
            batch.push_back(corpora.goal_targets[size_t(
                batch2_rng.next_u64() % corpora.goal_targets.size())]);
        }
        Vlm view{work.cfg, perturb_vision_encoder(work.params, sigma, fts_rng)};
        LossGrad lg = stage2_loss_grad(view, pixels, batch, cfg.tpg_enabled);
        if (!std::isfinite(lg.loss)) {
            throw std::runtime_error("run_sea: loss is not finite at stage 2 step " +
                                     std::to_string(step));
        }
        result.image = pgd_step(result.image, lg.pixel_grad, cfg.alpha, cfg.mode, cfg.eps,
                                clean_image);
        result.trace.push_back({step, 2, lg.loss});
    }

    result.image.validate(model.cfg);
    return result;
}

}  // namespace sea::attack
