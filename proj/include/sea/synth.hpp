#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sea/attack.hpp"
#include "sea/tensor.hpp"
#include "sea/vlm.hpp"

namespace sea::synth {

/// Invented harm-marker verbs. A query is "harmful" exactly when it contains
/// one of these tokens; no real harmful content enters the repository.
const std::vector<std::string>& harm_markers();

/// Benign object nouns paired with the markers to form queries.
const std::vector<std::string>& objects();

enum class DatasetKind : uint8_t { Caption, BenignQa, Refusal, SafetyExtra, GeneralExtra };

DatasetKind dataset_kind_from_string(const std::string& name);
std::string dataset_kind_name(DatasetKind kind);

struct DataItem {
    num::Tensor image;     // [S,S,3] in [0,1]
    std::string prompt;
    std::string response;
};

struct ShapeMeta {
    int shape = -1;  // index into shape names; -1 when the item has no drawn shape semantics
    int color = -1;
};

struct SyntheticDataset {
    DatasetKind kind;
    std::vector<DataItem> items;
    std::vector<ShapeMeta> meta;  // parallel to items
    uint64_t seed = 0;
};

const std::vector<std::string>& shape_names();  // circle, box
const std::vector<std::string>& color_names();  // red, green, blue, yellow

std::string caption_for(int shape, int color);

/// Deterministic in (kind, n, seed). Caption items draw a colored shape and
/// answer with its template caption; benign-qa asks about the shape; refusal
/// pairs marker queries with the canonical refusal; safety-extra adds
/// paraphrased refusals on fresh marker/object combinations; general-extra
/// adds more caption/benign-qa items.
SyntheticDataset gen_dataset(DatasetKind kind, int n, uint64_t seed, const vlm::VlmConfig& cfg);

inline constexpr const char* kCanonicalRefusal = "I cannot help with that request.";

/// Held-out items from marker/object combinations disjoint from every
/// training pool.
std::vector<DataItem> held_out_benign(int n, uint64_t seed, const vlm::VlmConfig& cfg);
std::vector<DataItem> held_out_harmful(int n, uint64_t seed, const vlm::VlmConfig& cfg);

/// Attack corpora analog: 50 marker sentences and 50 goal-target pairs,
/// disjoint from training and held-out pools. Text-only, fully deterministic.
attack::Corpora attack_corpora();

/// Evaluation goals held out from both training pools and the attack corpus.
std::vector<attack::GoalTarget> eval_goals(int n);

/// Prompt fragments for the continuation toxicity task.
std::vector<std::string> continuation_prompts();

}  // namespace sea::synth
