#pragma once

#include <string>
#include <vector>

#include "csense/autograd.hpp"
#include "csense/unet.hpp"  // ForwardCtx, LinearLayerT, LayerNormLayerT

namespace csense::nn {

struct SwinConfig {
    int in_channels = 12;
    int seq_len = 128;
    int patch_size = 4;
    int embed_dim = 48;
    std::vector<int> stage_depths{2, 2};
    std::vector<int> stage_heads{3, 6};
    int window_size = 8;
    int mlp_ratio = 4;
    int num_classes = 11;
};

inline void validate(const SwinConfig& cfg) {
    if (cfg.stage_depths.size() != cfg.stage_heads.size() || cfg.stage_depths.empty())
        throw ShapeMismatch("swin config: depths/heads must align and be non-empty");
    if (cfg.seq_len % cfg.patch_size != 0)
        throw ShapeMismatch("swin config: seq_len must be divisible by patch_size");
    int tokens = cfg.seq_len / cfg.patch_size;
    int dim = cfg.embed_dim;
    for (size_t s = 0; s < cfg.stage_depths.size(); ++s) {
        if (tokens % cfg.window_size != 0 && tokens > cfg.window_size)
            throw ShapeMismatch("swin config: stage " + std::to_string(s) +
                                " token count not divisible by window_size");
        if (dim % cfg.stage_heads[s] != 0)
            throw ShapeMismatch("swin config: embed dim not divisible by head count");
        if (s + 1 < cfg.stage_depths.size()) {
            if (tokens % 2 != 0) throw ShapeMismatch("swin config: odd token count before merge");
            tokens /= 2;
            dim *= 2;
        }
    }
    if (cfg.num_classes < 2) throw ShapeMismatch("swin config: num_classes must be >= 2");
    if (cfg.mlp_ratio < 1) throw ShapeMismatch("swin config: mlp_ratio must be >= 1");
}

// Cyclically rotates tokens [T,D] left by `shift` and chunks them into
// T/window_size windows -> [nw, w, D].
template <typename T>
Var<T> window_partition(const Var<T>& tokens, int window_size, int shift) {
    if (tokens->value.rank() != 2) throw ShapeMismatch("window_partition expects [T,D]");
    const int64_t Tn = tokens->value.dim(0), D = tokens->value.dim(1);
    if (Tn % window_size != 0)
        throw ShapeMismatch("window_partition: T=" + std::to_string(Tn) +
                            " not divisible by window " + std::to_string(window_size));
    if (shift < 0 || shift >= window_size) throw ShapeMismatch("window_partition: bad shift");
    Var<T> x = shift ? roll_axis0(tokens, shift) : tokens;
    return reshape(x, {Tn / window_size, window_size, D});
}

// Inverse of window_partition: restores the original token order exactly.
template <typename T>
Var<T> window_unpartition(const Var<T>& windows, int shift) {
    if (windows->value.rank() != 3) throw ShapeMismatch("window_unpartition expects [nw,w,D]");
    const int64_t Tn = windows->value.dim(0) * windows->value.dim(1);
    const int64_t D = windows->value.dim(2);
    Var<T> x = reshape(windows, {Tn, D});
    return shift ? roll_axis0(x, -shift) : x;
}

// Additive attention mask [nw, w, w] for a shifted partition: in the wrap
// window (the last one), token pairs that were not adjacent before the
// rotation get -1e9 so softmax suppresses their attention.
template <typename T>
TensorT<T> shift_attention_mask(int64_t token_count, int window_size, int shift) {
    const int64_t nw = token_count / window_size;
    TensorT<T> mask({nw, window_size, window_size});
    if (shift == 0) return mask;
    const int64_t boundary = window_size - shift;  // first `boundary` slots are pre-wrap tokens
    for (int64_t i = 0; i < window_size; ++i)
        for (int64_t j = 0; j < window_size; ++j)
            if ((i < boundary) != (j < boundary)) mask(nw - 1, i, j) = T(-1e9);
    return mask;
}

// ---------------------------------------------------------------------------
// 1D hierarchical shifted-window transformer
// ---------------------------------------------------------------------------

template <typename T>
class SwinT {
public:
    SwinT(const SwinConfig& cfg, uint64_t seed) : cfg_(cfg) {
        validate(cfg);
        SplitMix64 rng(derive_seed(seed, "swin-init"));
        const int64_t patch_dim = static_cast<int64_t>(cfg.in_channels) * cfg.patch_size;
        embed_ = LinearLayerT<T>(patch_dim, cfg.embed_dim, rng);
        int64_t dim = cfg.embed_dim;
        int64_t tokens = cfg.seq_len / cfg.patch_size;
        for (size_t s = 0; s < cfg.stage_depths.size(); ++s) {
            Stage st;
            st.tokens = tokens;
            st.dim = dim;
            st.heads = cfg.stage_heads[s];
            st.window = std::min<int64_t>(cfg.window_size, tokens);
            st.rel_bias = ParamT<T>("rel_bias",
                                    TensorT<T>::zeros({st.heads, 2 * st.window - 1}));
            for (int b = 0; b < cfg.stage_depths[s]; ++b) {
                Block blk;
                blk.ln1 = LayerNormLayerT<T>(dim);
                blk.wq = LinearLayerT<T>(dim, dim, rng);
                blk.wk = LinearLayerT<T>(dim, dim, rng);
                blk.wv = LinearLayerT<T>(dim, dim, rng);
                blk.wo = LinearLayerT<T>(dim, dim, rng);
                blk.ln2 = LayerNormLayerT<T>(dim);
                blk.fc1 = LinearLayerT<T>(dim, dim * cfg.mlp_ratio, rng);
                blk.fc2 = LinearLayerT<T>(dim * cfg.mlp_ratio, dim, rng);
                st.blocks.push_back(std::move(blk));
            }
            stages_.push_back(std::move(st));
            if (s + 1 < cfg.stage_depths.size()) {
                Merge m;
                m.ln = LayerNormLayerT<T>(2 * dim);
                m.proj = LinearLayerT<T>(2 * dim, 2 * dim, rng);
                merges_.push_back(std::move(m));
                dim *= 2;
                tokens /= 2;
            }
        }
        head_ = LinearLayerT<T>(dim, cfg.num_classes, rng);
    }

    const SwinConfig& config() const { return cfg_; }

    // x [in_channels, seq_len] -> non-overlapping patches, flattened
    // channel-major, linearly projected to embed_dim -> [T, D]
    Var<T> patch_embed(ForwardCtx<T>& ctx, const Var<T>& x) {
        if (x->value.rank() != 2 || x->value.dim(0) != cfg_.in_channels ||
            x->value.dim(1) != cfg_.seq_len)
            throw ShapeMismatch("patch_embed: expected [" + std::to_string(cfg_.in_channels) +
                                "," + std::to_string(cfg_.seq_len) + "], got " +
                                x->value.shape_str());
        const int64_t C = cfg_.in_channels, P = cfg_.patch_size;
        const int64_t Tn = cfg_.seq_len / P;
        auto patches = reshape(permute(reshape(x, {C, Tn, P}), {1, 0, 2}), {Tn, C * P});
        return embed_.forward(ctx, patches);
    }

    // pre-norm residual block; even block index = W-MSA, odd = SW-MSA
    Var<T> block_forward(ForwardCtx<T>& ctx, Var<T> tokens, size_t stage, int block_index) {
        Stage& st = stages_[stage];
        Block& blk = st.blocks[static_cast<size_t>(block_index)];
        const int shift = (block_index % 2 == 1 && st.window < st.tokens)
                              ? static_cast<int>(st.window / 2)
                              : 0;
        auto attn = windowed_attention(ctx, blk.ln1.forward(ctx, tokens), stage, shift, blk);
        tokens = add(tokens, attn);
        auto h = blk.ln2.forward(ctx, tokens);
        h = blk.fc2.forward(ctx, gelu(blk.fc1.forward(ctx, h)));
        return add(tokens, h);
    }

    // concatenate adjacent token pairs, layer_norm, project to 2D dims
    Var<T> patch_merging(ForwardCtx<T>& ctx, const Var<T>& tokens, size_t merge_index) {
        const int64_t Tn = tokens->value.dim(0), D = tokens->value.dim(1);
        if (Tn % 2 != 0) throw ShapeMismatch("patch_merging: odd token count");
        Merge& m = merges_[merge_index];
        auto merged = reshape(tokens, {Tn / 2, 2 * D});
        return m.proj.forward(ctx, m.ln.forward(ctx, merged));
    }

    // full chain: patch_embed -> stages with merging between -> mean pool ->
    // linear head. Returns raw logits [num_classes].
    Var<T> logits(ForwardCtx<T>& ctx, const Var<T>& x) {
        Var<T> tok = patch_embed(ctx, x);
        for (size_t s = 0; s < stages_.size(); ++s) {
            for (int b = 0; b < cfg_.stage_depths[s]; ++b) tok = block_forward(ctx, tok, s, b);
            if (s + 1 < stages_.size()) tok = patch_merging(ctx, tok, s);
        }
        auto pooled = mean_axis0(tok);
        auto out = head_.forward(ctx, reshape(pooled, {1, pooled->value.numel()}));
        return reshape(out, {cfg_.num_classes});
    }

    std::vector<ParamT<T>*> parameters() {
        std::vector<ParamT<T>*> out;
        for (auto& [name, p] : named_params()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, ParamT<T>*>> named_params() {
        std::vector<std::pair<std::string, ParamT<T>*>> out;
        out.emplace_back("embed.w", &embed_.w);
        out.emplace_back("embed.b", &embed_.b);
        for (size_t s = 0; s < stages_.size(); ++s) {
            const std::string sp = "stage" + std::to_string(s);
            out.emplace_back(sp + ".rel_bias", &stages_[s].rel_bias);
            for (size_t b = 0; b < stages_[s].blocks.size(); ++b) {
                const std::string bp = sp + ".block" + std::to_string(b);
                Block& blk = stages_[s].blocks[b];
                out.emplace_back(bp + ".ln1.gamma", &blk.ln1.gamma);
                out.emplace_back(bp + ".ln1.beta", &blk.ln1.beta);
                out.emplace_back(bp + ".wq.w", &blk.wq.w);
                out.emplace_back(bp + ".wq.b", &blk.wq.b);
                out.emplace_back(bp + ".wk.w", &blk.wk.w);
                out.emplace_back(bp + ".wk.b", &blk.wk.b);
                out.emplace_back(bp + ".wv.w", &blk.wv.w);
                out.emplace_back(bp + ".wv.b", &blk.wv.b);
                out.emplace_back(bp + ".wo.w", &blk.wo.w);
                out.emplace_back(bp + ".wo.b", &blk.wo.b);
                out.emplace_back(bp + ".ln2.gamma", &blk.ln2.gamma);
                out.emplace_back(bp + ".ln2.beta", &blk.ln2.beta);
                out.emplace_back(bp + ".fc1.w", &blk.fc1.w);
                out.emplace_back(bp + ".fc1.b", &blk.fc1.b);
                out.emplace_back(bp + ".fc2.w", &blk.fc2.w);
                out.emplace_back(bp + ".fc2.b", &blk.fc2.b);
            }
        }
        for (size_t m = 0; m < merges_.size(); ++m) {
            const std::string mp = "merge" + std::to_string(m);
            out.emplace_back(mp + ".ln.gamma", &merges_[m].ln.gamma);
            out.emplace_back(mp + ".ln.beta", &merges_[m].ln.beta);
            out.emplace_back(mp + ".proj.w", &merges_[m].proj.w);
            out.emplace_back(mp + ".proj.b", &merges_[m].proj.b);
        }
        out.emplace_back("head.w", &head_.w);
        out.emplace_back("head.b", &head_.b);
        return out;
    }

    std::vector<std::pair<std::string, TensorT<T>*>> state() {
        std::vector<std::pair<std::string, TensorT<T>*>> out;
        for (auto& [name, p] : named_params()) out.emplace_back(name, &p->value);
        return out;
    }

private:
    struct Block {
        LayerNormLayerT<T> ln1;
        LinearLayerT<T> wq, wk, wv, wo;
        LayerNormLayerT<T> ln2;
        LinearLayerT<T> fc1, fc2;
    };

    struct Stage {
        int64_t tokens = 0, dim = 0, heads = 0, window = 0;
        ParamT<T> rel_bias;  // [heads, 2*window-1]
        std::vector<Block> blocks;
    };

    struct Merge {
        LayerNormLayerT<T> ln;
        LinearLayerT<T> proj;
    };

    // learned relative position bias, gathered to [H, w, w];
    // bias[h,i,j] = table[h, i - j + w - 1]
    Var<T> gather_rel_bias(ForwardCtx<T>& ctx, Stage& st) {
        auto table = ctx.bind(st.rel_bias);
        const int64_t H = st.heads, W = st.window;
        TensorT<T> out({H, W, W});
        for (int64_t h = 0; h < H; ++h)
            for (int64_t i = 0; i < W; ++i)
                for (int64_t j = 0; j < W; ++j)
                    out(h, i, j) = table->value(h, i - j + W - 1);
        return make_node<T>("rel_bias_gather", std::move(out), {table}, [table, H, W](Node<T>& n) {
            if (!table->requires_grad) return;
            table->ensure_grad();
            for (int64_t h = 0; h < H; ++h)
                for (int64_t i = 0; i < W; ++i)
                    for (int64_t j = 0; j < W; ++j)
                        table->grad(h, i - j + W - 1) += n.grad(h, i, j);
        });
    }

    Var<T> windowed_attention(ForwardCtx<T>& ctx, Var<T> normed, size_t stage, int shift,
                              Block& blk) {
        Stage& st = stages_[stage];
        const int64_t Tn = st.tokens, D = st.dim, H = st.heads, W = st.window;
        const int64_t nw = Tn / W, hd = D / H;
        auto win = window_partition(normed, static_cast<int>(W), shift);  // [nw, W, D]
        auto flat = reshape(win, {Tn, D});
        auto to_heads = [&](Var<T> v) {
            return permute(reshape(v, {nw, W, H, hd}), {0, 2, 1, 3});  // [nw, H, W, hd]
        };
        auto q = to_heads(blk.wq.forward(ctx, flat));
        auto k = to_heads(blk.wk.forward(ctx, flat));
        auto v = to_heads(blk.wv.forward(ctx, flat));
        auto bias = gather_rel_bias(ctx, st);
        Var<T> out;
        if (shift) {
            TensorT<T> mask = shift_attention_mask<T>(Tn, static_cast<int>(W), shift);
            out = attention(q, k, v, &mask, bias);
        } else {
            out = attention(q, k, v, static_cast<const TensorT<T>*>(nullptr), bias);
        }
        auto merged = reshape(permute(out, {0, 2, 1, 3}), {Tn, D});
        auto proj = blk.wo.forward(ctx, merged);
        return window_unpartition(reshape(proj, {nw, W, D}), shift);
    }

    SwinConfig cfg_;
    LinearLayerT<T> embed_;
    std::vector<Stage> stages_;
    std::vector<Merge> merges_;
    LinearLayerT<T> head_;
};

using Swin = SwinT<float>;

}  // namespace csense::nn
