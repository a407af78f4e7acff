#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "sea/synth.hpp"
#include "sea/vlm.hpp"

namespace sea::train {

struct TrainOptions {
    int epochs = 1;
    float lr = 1e-3f;
    int batch_size = 4;
    uint64_t seed = 0;
};

/// Adam over the next-token NLL on (prompt -> response) pairs, updating only
/// tensors whose tag is in `trainable`. Frozen tensors stay bit-identical.
/// Returns the per-epoch mean NLL.
std::vector<double> train(vlm::Vlm& model, const std::vector<synth::DataItem>& data,
                          const std::set<vlm::Component>& trainable, const TrainOptions& opt);

struct BaseOptions {
    uint64_t seed = 1;
    int caption_items = 280;
    int qa_items = 430;
    int refusal_items = 80;
    int held_out_benign = 16;
    int held_out_harmful = 16;
    int max_epochs = 48;
    int check_every = 4;
    int min_epochs = 12;
    float lr = 2e-3f;
    int batch_size = 4;
    double benign_target = 0.8;
    double refusal_target = 0.8;
};

struct AlignmentMetrics {
    double benign_answer_rate = 0;
    double refusal_rate = 0;
    int epochs_run = 0;
};

/// Trains a fresh model on the caption/benign-qa/refusal mixture until it
/// answers enough held-out benign queries and refuses enough held-out
/// marker queries, then snapshots the weights. Throws (with the final
/// metrics in the message) if the targets stay out of reach within
/// max_epochs.
vlm::Vlm make_base(const vlm::VlmConfig& cfg, const BaseOptions& opt,
                   AlignmentMetrics* metrics_out = nullptr);

/// Fraction of items whose greedy response contains no refusal keyword.
double benign_answer_rate(const vlm::Vlm& model, const std::vector<synth::DataItem>& items);

/// Fraction of items whose greedy response is a refusal.
double refusal_rate(const vlm::Vlm& model, const std::vector<synth::DataItem>& items);

struct FinetuneConfig {
    std::string name;                       // llm-only | freeze-tower | freeze-projector | full-ft
    std::set<vlm::Component> trainable;
    synth::DatasetKind dataset_kind = synth::DatasetKind::SafetyExtra;
    int items = 96;
    int epochs = 3;
    float lr = 1e-3f;

    /// name in {llm-only, freeze-tower, freeze-projector, full-ft};
    /// data in {safety, general}.
    static FinetuneConfig make(const std::string& name, const std::string& data);
    static const std::vector<std::string>& variant_names();
};

/// Deep-copies the base (never mutating it) and fine-tunes the copy per the
/// config. The copy keeps the base snapshot as its reference weights.
vlm::Vlm make_finetune_variant(const vlm::Vlm& base, const FinetuneConfig& cfg, uint64_t seed);

}  // namespace sea::train
