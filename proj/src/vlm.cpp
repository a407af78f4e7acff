#include "sea/vlm.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>

namespace sea::vlm {

using num::Graph;
using num::RngStream;
using num::Tensor;
using num::ValueId;

Component component_from_byte(uint8_t b) {
    switch (b) {
        case 0: return Component::VisionTower;
        case 1: return Component::Projector;
        case 2: return Component::Decoder;
    }
    throw std::invalid_argument("unknown component tag byte " + std::to_string(int(b)));
}

Component component_from_string(const std::string& name) {
    if (name == "vision_tower") return Component::VisionTower;
    if (name == "projector") return Component::Projector;
    if (name == "decoder") return Component::Decoder;
    throw std::invalid_argument("unknown component tag '" + name +
                                "' (expected vision_tower, projector or decoder)");
}

std::string component_name(Component c) {
    switch (c) {
        case Component::VisionTower: return "vision_tower";
        case Component::Projector: return "projector";
        case Component::Decoder: return "decoder";
    }
    throw std::invalid_argument("unknown component tag");
}

void VlmConfig::validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
        throw std::invalid_argument("VlmConfig: image_size must be a positive multiple of patch_size");
    }
    if (embed_dim <= 0 || heads <= 0 || embed_dim % heads != 0) {
        throw std::invalid_argument("VlmConfig: embed_dim must be a positive multiple of heads");
    }
    if (vision_layers < 0 || decoder_layers < 0) {
        throw std::invalid_argument("VlmConfig: layer counts must be non-negative");
    }
    if (vocab_size < 2) throw std::invalid_argument("VlmConfig: vocab_size must be at least 2");
    if (context_len < n_patches() + 2) {
        throw std::invalid_argument("VlmConfig: context_len too small for image tokens");
    }
}

std::vector<int> tokenize(const std::string& text) {
    std::vector<int> ids;
    ids.reserve(text.size());
    for (unsigned char c : text) ids.push_back(int(c));
    return ids;
}

std::vector<int> prompt_ids_for(const std::string& text) {
    std::vector<int> ids = {kBos};
    for (int id : tokenize(text)) ids.push_back(id);
    ids.push_back('\n');
    ids.push_back('>');
    return ids;
}

std::string detokenize(const std::vector<int>& ids) {
    std::string out;
    out.reserve(ids.size());
    for (int id : ids) {
        if (id < 0 || id >= 259) {
            throw std::invalid_argument("detokenize: token id " + std::to_string(id) +
                                        " out of range");
        }
        if (id < 256) out.push_back(char(uint8_t(id)));
        // BOS/EOS/PAD carry no bytes
    }
    return out;
}

void ParameterStore::insert(const std::string& name, Tensor t, Component tag) {
    if (entries_.count(name)) {
        throw std::invalid_argument("ParameterStore: duplicate entry '" + name + "'");
    }
    entries_.emplace(name, ParamEntry{std::move(t), tag});
}

bool ParameterStore::contains(const std::string& name) const {
    return entries_.count(name) > 0;
}

Tensor& ParameterStore::tensor(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw std::invalid_argument("ParameterStore: no entry '" + name + "'");
    }
    return it->second.tensor;
}

const Tensor& ParameterStore::tensor(const std::string& name) const {
    return const_cast<ParameterStore*>(this)->tensor(name);
}

Component ParameterStore::tag(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) {
        throw std::invalid_argument("ParameterStore: no entry '" + name + "'");
    }
    return it->second.tag;
}

int64_t ParameterStore::total_params() const {
    int64_t n = 0;
    for (const auto& [name, e] : entries_) n += e.tensor.numel();
    return n;
}

void ParameterStore::take_snapshot() {
    snapshot_ = entries_;
    for (auto& [name, e] : *snapshot_) {
        e.tensor.requires_grad = false;
        e.tensor.grad.clear();
    }
}

const std::map<std::string, ParamEntry>& ParameterStore::snapshot() const {
    if (!snapshot_) throw std::runtime_error("ParameterStore: no snapshot taken");
    return *snapshot_;
}

void ParameterStore::set_requires_grad(const std::set<Component>& tags) {
    for (auto& [name, e] : entries_) {
        e.tensor.requires_grad = tags.count(e.tag) > 0;
        if (!e.tensor.requires_grad) e.tensor.grad.clear();
    }
}

std::vector<std::string> component_params(const ParameterStore& params,
                                          const std::set<Component>& tags) {
    if (tags.empty()) throw std::invalid_argument("component_params: empty tag set");
    std::vector<std::string> names;
    for (const auto& [name, e] : params.entries()) {
        if (tags.count(e.tag)) names.push_back(name);
    }
    return names;
}

namespace {

Tensor init_normal(std::vector<int> shape, RngStream& rng, float std_dev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.data) v = rng.next_normal() * std_dev;
    return t;
}

void add_block_params(ParameterStore& store, const std::string& prefix, Component tag,
                      int dim, RngStream& rng, float w_std) {
    const int hidden = 4 * dim;
    store.insert(prefix + ".ln1.g", Tensor::full({dim}, 1.0f), tag);
    store.insert(prefix + ".ln1.b", Tensor::zeros({dim}), tag);
    store.insert(prefix + ".wq", init_normal({dim, dim}, rng, w_std), tag);
    store.insert(prefix + ".bq", Tensor::zeros({dim}), tag);
    store.insert(prefix + ".wk", init_normal({dim, dim}, rng, w_std), tag);
    store.insert(prefix + ".bk", Tensor::zeros({dim}), tag);
    store.insert(prefix + ".wv", init_normal({dim, dim}, rng, w_std), tag);
    store.insert(prefix + ".bv", Tensor::zeros({dim}), tag);
    store.insert(prefix + ".wo", init_normal({dim, dim}, rng, w_std), tag);
    store.insert(prefix + ".bo", Tensor::zeros({dim}), tag);
    store.insert(prefix + ".ln2.g", Tensor::full({dim}, 1.0f), tag);
    store.insert(prefix + ".ln2.b", Tensor::zeros({dim}), tag);
    store.insert(prefix + ".mlp.w1", init_normal({dim, hidden}, rng, w_std), tag);
    store.insert(prefix + ".mlp.b1", Tensor::zeros({hidden}), tag);
    store.insert(prefix + ".mlp.w2", init_normal({hidden, dim}, rng, w_std), tag);
    store.insert(prefix + ".mlp.b2", Tensor::zeros({dim}), tag);
}

constexpr float kWeightStd = 0.06f;
constexpr float kPosStd = 0.04f;

// One forward pass: caches leaves so each parameter enters the graph once.
struct ForwardCtx {
    Graph& g;
    ParameterStore& params;
    std::unordered_map<std::string, ValueId> cache;

    ValueId p(const std::string& name) {
        auto it = cache.find(name);
        if (it != cache.end()) return it->second;
        ValueId id = g.leaf(params.tensor(name));
        cache.emplace(name, id);
        return id;
    }
};

ValueId transformer_block(ForwardCtx& ctx, ValueId x, const std::string& prefix,
                          int dim, int heads, ValueId mask) {
    Graph& g = ctx.g;
    const int head_dim = dim / heads;
    const float inv_sqrt = 1.0f / std::sqrt(float(head_dim));

    ValueId ln1 = g.layer_norm(x, ctx.p(prefix + ".ln1.g"), ctx.p(prefix + ".ln1.b"));
    ValueId q = g.add(g.matmul(ln1, ctx.p(prefix + ".wq")), ctx.p(prefix + ".bq"));
    ValueId k = g.add(g.matmul(ln1, ctx.p(prefix + ".wk")), ctx.p(prefix + ".bk"));
    ValueId v = g.add(g.matmul(ln1, ctx.p(prefix + ".wv")), ctx.p(prefix + ".bv"));

    std::vector<ValueId> heads_out;
    heads_out.reserve(size_t(heads));
    for (int h = 0; h < heads; ++h) {
        const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
        ValueId qh = g.slice_cols(q, c0, c1);
        ValueId kh = g.slice_cols(k, c0, c1);
        ValueId vh = g.slice_cols(v, c0, c1);
        ValueId scores = g.scale(g.matmul(qh, g.transpose(kh)), inv_sqrt);
        if (mask >= 0) scores = g.add(scores, mask);
        heads_out.push_back(g.matmul(g.softmax(scores), vh));
    }
    ValueId ctx_all = heads > 1 ? g.concat(heads_out, 1) : heads_out[0];
    ValueId attn = g.add(g.matmul(ctx_all, ctx.p(prefix + ".wo")), ctx.p(prefix + ".bo"));
    x = g.add(x, attn);

    ValueId ln2 = g.layer_norm(x, ctx.p(prefix + ".ln2.g"), ctx.p(prefix + ".ln2.b"));
    ValueId h1 = g.gelu(g.add(g.matmul(ln2, ctx.p(prefix + ".mlp.w1")), ctx.p(prefix + ".mlp.b1")));
    ValueId mlp = g.add(g.matmul(h1, ctx.p(prefix + ".mlp.w2")), ctx.p(prefix + ".mlp.b2"));
    return g.add(x, mlp);
}

// Vision tower + projector: [H,W,3] pixels -> [n_patches, D] image tokens.
// Pixels are standardized from [0,1] to roughly unit scale before the patch
// embedding, as image preprocessors usually do.
ValueId encode_image(ForwardCtx& ctx, const VlmConfig& cfg, ValueId image_leaf) {
    Graph& g = ctx.g;
    ValueId x = g.patchify(image_leaf, cfg.patch_size);
    x = g.scale(g.add(x, g.constant(Tensor::full({1}, -0.5f))), 4.0f);
    x = g.add(g.matmul(x, ctx.p("vis.patch.w")), ctx.p("vis.patch.b"));
    x = g.add(x, ctx.p("vis.pos"));
    for (int l = 0; l < cfg.vision_layers; ++l) {
        x = transformer_block(ctx, x, "vis.l" + std::to_string(l), cfg.embed_dim, cfg.heads, -1);
    }
    x = g.layer_norm(x, ctx.p("vis.lnf.g"), ctx.p("vis.lnf.b"));
    return g.add(g.matmul(x, ctx.p("proj.w")), ctx.p("proj.b"));
}

// Image tokens attend within the image prefix; text position i additionally
// attends to text positions <= i.
Tensor prefix_causal_mask(int total, int n_img) {
    Tensor m = Tensor::zeros({total, total});
    for (int i = 0; i < total; ++i) {
        for (int j = 0; j < total; ++j) {
            const bool allowed = j < n_img || j <= i;
            m.data[size_t(i) * total + j] = allowed ? 0.0f : -1e9f;
        }
    }
    return m;
}

// Response tokens take positions from a fixed base so that "k bytes into
// the answer" is the same learned coordinate under every prompt length.
int response_pos_base(const VlmConfig& cfg) { return (cfg.context_len * 7) / 10; }

// Hidden states for fed ids; returns the decoder output after the final
// layer norm, rows [n_patches + 0, n_patches + fed.size()). `prompt_len`
// is the number of leading prompt tokens; everything after it is response.
ValueId decode_hidden(ForwardCtx& ctx, const VlmConfig& cfg, ValueId image_leaf,
                      const std::vector<int>& fed, int prompt_len) {
    Graph& g = ctx.g;
    const int n_img = cfg.n_patches();
    const int t_text = int(fed.size());
    if (n_img + t_text > cfg.context_len) {
        throw std::invalid_argument(
            "sequence overflow: " + std::to_string(n_img) + " image tokens + " +
            std::to_string(t_text) + " text tokens exceed context_len " +
            std::to_string(cfg.context_len));
    }
    const int base = response_pos_base(cfg);
    if (t_text > prompt_len && base + (t_text - prompt_len) > cfg.context_len) {
        throw std::invalid_argument(
            "sequence overflow: " + std::to_string(t_text - prompt_len) +
            " response tokens exceed the response budget " +
            std::to_string(cfg.context_len - base));
    }
    ValueId img_tokens = encode_image(ctx, cfg, image_leaf);

    std::vector<int> positions(fed.size());
    for (size_t i = 0; i < fed.size(); ++i) {
        positions[i] = int(i) < prompt_len ? std::min(int(i), base - 1)
                                           : base + (int(i) - prompt_len);
    }
    ValueId emb = g.add(g.embedding(ctx.p("dec.tok"), fed),
                        g.embedding(ctx.p("dec.pos"), positions));

    ValueId x = g.concat({img_tokens, emb}, 0);
    ValueId mask = g.constant(prefix_causal_mask(n_img + t_text, n_img));
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        x = transformer_block(ctx, x, "dec.l" + std::to_string(l), cfg.embed_dim, cfg.heads, mask);
    }
    return g.layer_norm(x, ctx.p("dec.lnf.g"), ctx.p("dec.lnf.b"));
}

void check_image(const VlmConfig& cfg, const Tensor& image) {
    const std::vector<int> want = {cfg.image_size, cfg.image_size, 3};
    if (image.shape != want) {
        throw std::invalid_argument("image shape " + num::shape_str(image.shape) +
                                    " does not match model input " + num::shape_str(want));
    }
}

}  // namespace

Vlm init_vlm(const VlmConfig& cfg, uint64_t seed) {
    cfg.validate();
    RngStream rng(RngStream::derive(seed, "vlm-init"));
    Vlm model;
    model.cfg = cfg;
    ParameterStore& s = model.params;
    const int D = cfg.embed_dim;

    s.insert("vis.patch.w", init_normal({cfg.patch_dim(), D}, rng, kWeightStd), Component::VisionTower);
    s.insert("vis.patch.b", Tensor::zeros({D}), Component::VisionTower);
    s.insert("vis.pos", init_normal({cfg.n_patches(), D}, rng, kPosStd), Component::VisionTower);
    for (int l = 0; l < cfg.vision_layers; ++l) {
        add_block_params(s, "vis.l" + std::to_string(l), Component::VisionTower, D, rng, kWeightStd);
    }
    s.insert("vis.lnf.g", Tensor::full({D}, 1.0f), Component::VisionTower);
    s.insert("vis.lnf.b", Tensor::zeros({D}), Component::VisionTower);

    s.insert("proj.w", init_normal({D, D}, rng, kWeightStd), Component::Projector);
    s.insert("proj.b", Tensor::zeros({D}), Component::Projector);

    s.insert("dec.tok", init_normal({cfg.vocab_size, D}, rng, kWeightStd), Component::Decoder);
    s.insert("dec.pos", init_normal({cfg.context_len, D}, rng, kPosStd), Component::Decoder);
    for (int l = 0; l < cfg.decoder_layers; ++l) {
        add_block_params(s, "dec.l" + std::to_string(l), Component::Decoder, D, rng, kWeightStd);
    }
    s.insert("dec.lnf.g", Tensor::full({D}, 1.0f), Component::Decoder);
    s.insert("dec.lnf.b", Tensor::zeros({D}), Component::Decoder);
    s.insert("dec.head.w", init_normal({D, cfg.vocab_size}, rng, kWeightStd), Component::Decoder);
    s.insert("dec.head.b", Tensor::zeros({cfg.vocab_size}), Component::Decoder);
    return model;
}

ValueId build_seq_nll(Graph& g, Vlm& model, Tensor& image,
                      const std::vector<int>& prompt_ids,
                      const std::vector<int>& target_ids) {
    check_image(model.cfg, image);
    if (prompt_ids.empty()) throw std::invalid_argument("build_seq_nll: empty prompt ids");
    if (target_ids.empty()) throw std::invalid_argument("build_seq_nll: empty target ids");

    std::vector<int> fed = prompt_ids;
    fed.insert(fed.end(), target_ids.begin(), target_ids.end() - 1);

    ForwardCtx ctx{g, model.params, {}};
    ValueId image_leaf = g.leaf(image);
    ValueId hidden = decode_hidden(ctx, model.cfg, image_leaf, fed, int(prompt_ids.size()));

    const int n_img = model.cfg.n_patches();
    const int first = int(prompt_ids.size()) - 1;
    ValueId pred = g.slice_rows(hidden, n_img + first, n_img + int(fed.size()));
    ValueId logits = g.add(g.matmul(pred, ctx.p("dec.head.w")), ctx.p("dec.head.b"));
    return g.nll(logits, target_ids);
}

std::vector<float> next_token_logits(const Vlm& model, const Tensor& image,
                                     const std::vector<int>& ids, int prompt_len) {
    check_image(model.cfg, image);
    if (ids.empty()) throw std::invalid_argument("next_token_logits: empty id sequence");
    if (prompt_len < 0 || prompt_len > int(ids.size())) prompt_len = int(ids.size());
    // Forward only: backward is never called, so leaves are read, not written.
    Vlm& m = const_cast<Vlm&>(model);
    Tensor img = image;
    img.requires_grad = false;
    img.grad.clear();
    Graph g;
    ForwardCtx ctx{g, m.params, {}};
    ValueId hidden = decode_hidden(ctx, m.cfg, g.leaf(img), ids, prompt_len);
    const int last = m.cfg.n_patches() + int(ids.size());
    ValueId pred = g.slice_rows(hidden, last - 1, last);
    ValueId logits = g.add(g.matmul(pred, ctx.p("dec.head.w")), ctx.p("dec.head.b"));
    return g.value(logits).data;
}

double forward_nll(const Vlm& model, const ModelInput& input, const std::string& target) {
    if (target.empty()) throw std::invalid_argument("forward_nll: target must be non-empty");
    std::vector<int> prompt_ids = prompt_ids_for(input.text);
    std::vector<int> target_ids = tokenize(target);
    target_ids.push_back(kEos);

    Vlm& m = const_cast<Vlm&>(model);  // forward only
    Tensor img = input.image;
    img.requires_grad = false;
    img.grad.clear();
    Graph g;
    ValueId loss = build_seq_nll(g, m, img, prompt_ids, target_ids);
    return double(g.value(loss).data[0]);
}

std::string generate(const Vlm& model, const ModelInput& input, int max_tokens) {
    if (max_tokens < 1) throw std::invalid_argument("generate: max_tokens must be >= 1");
    std::vector<int> ids = prompt_ids_for(input.text);

    const int prompt_len = int(ids.size());
    std::vector<int> out;
    for (int step = 0; step < max_tokens; ++step) {
        if (model.cfg.n_patches() + int(ids.size()) + 1 > model.cfg.context_len) break;
        const int base = (model.cfg.context_len * 7) / 10;
        if (base + int(ids.size()) - prompt_len + 1 > model.cfg.context_len) break;
        std::vector<float> logits = next_token_logits(model, input.image, ids, prompt_len);
        int best = 0;
        for (int j = 1; j < int(logits.size()); ++j) {
            if (logits[size_t(j)] > logits[size_t(best)]) best = j;  // ties keep lowest id
        }
        if (best == kEos) break;
        out.push_back(best);
        ids.push_back(best);
    }
    return detokenize(out);
}

}  // namespace sea::vlm
