#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "sea/graph.hpp"
#include "sea/tensor.hpp"

namespace sea::vlm {

/// Every parameter tensor belongs to exactly one component. The vision
/// tower plus the projector form the "vision encoder"; the decoder is the
/// language side.
enum class Component : uint8_t { VisionTower = 0, Projector = 1, Decoder = 2 };

Component component_from_byte(uint8_t b);
Component component_from_string(const std::string& name);
std::string component_name(Component c);

struct VlmConfig {
    int image_size = 32;
    int patch_size = 8;
    int embed_dim = 64;
    int vision_layers = 2;
    int decoder_layers = 3;
    int heads = 4;
    int vocab_size = 259;  // 256 bytes + BOS/EOS/PAD
    int context_len = 160;

    void validate() const;
    int n_patches() const {
        int per_side = image_size / patch_size;
        return per_side * per_side;
    }
    int patch_dim() const { return patch_size * patch_size * 3; }
};

inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kPad = 258;

/// Byte-level mapping: byte b -> id b. Any string round-trips without a
/// trained vocabulary.
std::vector<int> tokenize(const std::string& text);

/// Prompt-side token sequence: BOS, the prompt bytes, then the fixed
/// response separator ("\n>"). The separator marks where the prompt ends
/// and the model's answer begins; without it a byte-level model cannot
/// tell a finished prompt from a finished response.
std::vector<int> prompt_ids_for(const std::string& text);

/// Inverse of tokenize. Control ids (BOS/EOS/PAD) are dropped; ids >= 259
/// are an error.
std::string detokenize(const std::vector<int>& ids);

struct ParamEntry {
    num::Tensor tensor;
    Component tag;
};

/// Named parameter tensors, each tagged with its component. The optional
/// snapshot holds a frozen copy of all entries (the pre-attack reference
/// weights) and is never mutated after capture.
class ParameterStore {
public:
    void insert(const std::string& name, num::Tensor t, Component tag);
    bool contains(const std::string& name) const;
    num::Tensor& tensor(const std::string& name);
    const num::Tensor& tensor(const std::string& name) const;
    Component tag(const std::string& name) const;

    std::map<std::string, ParamEntry>& entries() { return entries_; }
    const std::map<std::string, ParamEntry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    int64_t total_params() const;

    void take_snapshot();
    bool has_snapshot() const { return snapshot_.has_value(); }
    const std::map<std::string, ParamEntry>& snapshot() const;

    /// Sets requires_grad on tensors whose tag is in `tags`, clears it on
    /// the rest.
    void set_requires_grad(const std::set<Component>& tags);

private:
    std::map<std::string, ParamEntry> entries_;
    std::optional<std::map<std::string, ParamEntry>> snapshot_;
};

/// Names of entries whose tag is in `tags`, in store order. The three tags
/// partition the store.
std::vector<std::string> component_params(const ParameterStore& params,
                                          const std::set<Component>& tags);

struct ModelInput {
    num::Tensor image;  // [H,W,3], values in [0,1]
    std::string text;   // may be empty (image-only conditioning)
};

struct Vlm {
    VlmConfig cfg;
    ParameterStore params;
};

/// Fresh randomly initialized model. Deterministic in `seed`.
Vlm init_vlm(const VlmConfig& cfg, uint64_t seed);

/// Builds the token-level NLL graph: image patches are encoded, projected,
/// and prepended to the text embeddings; a causal mask covers the text
/// region. Returns the scalar loss node: sum over target_ids of
/// -log p(target_i | image tokens, prompt, targets < i).
///
/// `image` and the parameter tensors enter as graph leaves, so gradients
/// flow to whichever of them has requires_grad set.
num::ValueId build_seq_nll(num::Graph& g, Vlm& model, num::Tensor& image,
                           const std::vector<int>& prompt_ids,
                           const std::vector<int>& target_ids);

/// Next-token logits after feeding `ids` (with image tokens prepended).
/// The first `prompt_len` ids take prompt positions; the rest take
/// response-aligned positions (pass -1 to treat everything as prompt).
std::vector<float> next_token_logits(const Vlm& model, const num::Tensor& image,
                                     const std::vector<int>& ids, int prompt_len = -1);

/// NLL of `target` (plus end-of-sequence) given the input. Forward only.
double forward_nll(const Vlm& model, const ModelInput& input, const std::string& target);

/// Greedy decoding from BOS until EOS, max_tokens, or context exhaustion.
/// Ties break toward the lowest token id. Deterministic.
std::string generate(const Vlm& model, const ModelInput& input, int max_tokens);

}  // namespace sea::vlm
