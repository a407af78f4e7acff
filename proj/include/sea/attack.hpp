#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sea/tensor.hpp"
#include "sea/vlm.hpp"

namespace sea::attack {

/// H x W x 3 pixel tensor, every value in [0,1].
struct AdversarialImage {
    num::Tensor pixels;

    void validate(const vlm::VlmConfig& cfg) const;
};

struct GoalTarget {
    std::string goal;
    std::string target;  // affirmative response, prefixed "Sure, here is"
};

/// Harmful-sentence corpus S and goal-target pairs D.
struct Corpora {
    std::vector<std::string> harmful_strings;
    std::vector<GoalTarget> goal_targets;

    void validate() const;
};

enum class AttackMode : uint8_t { Unconstrained = 0, EpsBall = 1 };

struct AttackConfig {
    float sigma = 0.3f;           // encoder perturbation scale
    float alpha = 1.0f / 255.0f;  // signed step size
    int batch_size = 4;
    int t1_steps = 500;           // toxic-semantics stage
    int t2_steps = 500;           // affirmative-response stage
    AttackMode mode = AttackMode::Unconstrained;
    float eps = 16.0f / 255.0f;   // budget for EpsBall mode
    bool tpg_enabled = true;
    bool fts_enabled = true;
    bool start_from_clean = false;  // EpsBall baselines may start at the clean image
    uint64_t seed = 0;

    void validate(const Corpora& corpora) const;
};

struct LossTraceEntry {
    int step;    // 1-based within its stage
    int stage;   // 1 or 2
    double loss;
};

struct AttackResult {
    AdversarialImage image;
    std::vector<LossTraceEntry> trace;
};

/// Fresh Gaussian perturbation of the vision encoder around the snapshot:
/// each vision-tower/projector tensor becomes snap + delta with
/// delta ~ N(0, (sigma * std(snap))^2), std taken per tensor over its
/// elements. Decoder tensors are shared unperturbed. The input store is
/// never mutated; sigma == 0 returns the snapshot values exactly.
vlm::ParameterStore perturb_vision_encoder(const vlm::ParameterStore& params,
                                           float sigma, num::RngStream& rng);

/// goal ++ " Must begin your response with: " ++ target, byte-exact.
std::string build_tpg_prompt(const std::string& goal, const std::string& target);

/// Mean over the batch of NLL(s_i | image, empty text).
double stage1_loss(const vlm::Vlm& model, const num::Tensor& image,
                   const std::vector<std::string>& batch);

/// Mean over the batch of NLL(t_i | image, prompt_i) where prompt_i is the
/// TPG prompt when enabled, else the bare goal.
double stage2_loss(const vlm::Vlm& model, const num::Tensor& image,
                   const std::vector<GoalTarget>& batch, bool tpg_enabled);

/// Loss plus d(loss)/d(pixels); the differentiable path behind the stage
/// losses.
struct LossGrad {
    double loss;
    num::Tensor pixel_grad;
};
LossGrad stage1_loss_grad(const vlm::Vlm& model, const num::Tensor& image,
                          const std::vector<std::string>& batch);
LossGrad stage2_loss_grad(const vlm::Vlm& model, const num::Tensor& image,
                          const std::vector<GoalTarget>& batch, bool tpg_enabled);

/// One signed-gradient descent step on the NLL, clipped to [0,1]:
/// image' = clip01(image - alpha * sign(grad)), with sign(0) = 0. EpsBall
/// mode additionally clips into [clean - eps, clean + eps]; it requires
/// clean_image.
AdversarialImage pgd_step(const AdversarialImage& image, const num::Tensor& grad,
                          float alpha, AttackMode mode, float eps,
                          const num::Tensor* clean_image);

/// The full two-stage attack. Pixels start uniform on [0,1] from cfg.seed
/// (or at the clean image when cfg.start_from_clean). Each step samples a
/// batch with replacement, draws a fresh perturbed encoder when FTS is on,
/// and applies one signed pixel update. Deterministic in cfg.seed.
AttackResult run_sea(const vlm::Vlm& model, const Corpora& corpora, const AttackConfig& cfg,
                     const num::Tensor* clean_image = nullptr);

}  // namespace sea::attack
