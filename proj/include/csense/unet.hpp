#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "csense/autograd.hpp"
#include "csense/optim.hpp"
#include "csense/rng.hpp"

namespace csense::nn {

// Shared by all models: binds parameters into a graph as leaf vars (one var
// per parameter per graph, cached so repeated binds share the node) and
// copies gradients back out after backward().
template <typename T>
struct ForwardCtx {
    Mode mode = Mode::Eval;
    bool update_running = false;  // write BN running stats during forward
    bool trainable = true;        // bind parameters with requires_grad

    std::vector<std::pair<ParamT<T>*, Var<T>>> bound;
    std::unordered_map<ParamT<T>*, size_t> index;

    Var<T> bind(ParamT<T>& p) {
        auto it = index.find(&p);
        if (it != index.end()) return bound[it->second].second;
        auto v = make_leaf<T>(p.value, trainable);
        index.emplace(&p, bound.size());
        bound.emplace_back(&p, v);
        return v;
    }

    // accumulate graph gradients into the parameters, in bind order
    void harvest() {
        for (auto& [p, v] : bound) {
            if (!v->grad.numel()) continue;
            T* dst = p->grad.ptr();
            const T* src = v->grad.ptr();
            for (int64_t i = 0, n = v->grad.numel(); i < n; ++i) dst[i] += src[i];
        }
    }
};

template <typename T>
struct Conv1dLayerT {
    ParamT<T> w, b;
    int64_t stride = 1, padding = 0;

    Conv1dLayerT() = default;
    Conv1dLayerT(int64_t cin, int64_t cout, int64_t k, int64_t stride_, int64_t padding_,
                 SplitMix64& rng)
        : w("w", uniform_init<T>({cout, cin, k}, cin * k, rng)),
          b("b", TensorT<T>::zeros({cout})),
          stride(stride_),
          padding(padding_) {}

    Var<T> forward(ForwardCtx<T>& ctx, const Var<T>& x) {
        return conv1d(x, ctx.bind(w), ctx.bind(b), stride, padding);
    }
};

// transposed conv layer; weight stored [Cin, Cout, K]
template <typename T>
struct ConvTranspose1dLayerT {
    ParamT<T> w, b;
    int64_t stride = 1;

    ConvTranspose1dLayerT() = default;
    ConvTranspose1dLayerT(int64_t cin, int64_t cout, int64_t k, int64_t stride_, SplitMix64& rng)
        : w("w", uniform_init<T>({cin, cout, k}, cin * k, rng)),
          b("b", TensorT<T>::zeros({cout})),
          stride(stride_) {}

    Var<T> forward(ForwardCtx<T>& ctx, const Var<T>& x) {
        return conv1d_transposed(x, ctx.bind(w), ctx.bind(b), stride);
    }
};

template <typename T>
struct BatchNorm1dLayerT {
    ParamT<T> gamma, beta;
    TensorT<T> running_mean, running_var;
    double eps = 1e-5, momentum = 0.1;

    BatchNorm1dLayerT() = default;
    explicit BatchNorm1dLayerT(int64_t c)
        : gamma("gamma", TensorT<T>::full({c}, T(1))),
          beta("beta", TensorT<T>::zeros({c})),
          running_mean(TensorT<T>::zeros({c})),
          running_var(TensorT<T>::full({c}, T(1))) {}

    Var<T> forward(ForwardCtx<T>& ctx, const Var<T>& x) {
        TensorT<T>* rm = nullptr;
        TensorT<T>* rv = nullptr;
        if (ctx.mode == Mode::Eval || ctx.update_running) {
            rm = &running_mean;
            rv = &running_var;
        }
        return batch_norm1d(x, ctx.bind(gamma), ctx.bind(beta), rm, rv, ctx.mode, eps, momentum);
    }
};

template <typename T>
struct LinearLayerT {
    ParamT<T> w, b;

    LinearLayerT() = default;
    LinearLayerT(int64_t in, int64_t out, SplitMix64& rng)
        : w("w", uniform_init<T>({in, out}, in, rng)), b("b", TensorT<T>::zeros({out})) {}

    Var<T> forward(ForwardCtx<T>& ctx, const Var<T>& x) {
        return linear(x, ctx.bind(w), ctx.bind(b));
    }
};

template <typename T>
struct LayerNormLayerT {
    ParamT<T> gamma, beta;

    LayerNormLayerT() = default;
    explicit LayerNormLayerT(int64_t d)
        : gamma("gamma", TensorT<T>::full({d}, T(1))), beta("beta", TensorT<T>::zeros({d})) {}

    Var<T> forward(ForwardCtx<T>& ctx, const Var<T>& x) {
        return layer_norm(x, ctx.bind(gamma), ctx.bind(beta));
    }
};

// ---------------------------------------------------------------------------
// 1D U-Net
// ---------------------------------------------------------------------------

struct UNetConfig {
    int in_channels = 12;
    int base_channels = 32;
    int depth = 3;
    int seq_len = 128;
    double mask_ratio = 0.15;
    int mask_segment_len = 8;
};

inline void validate(const UNetConfig& cfg) {
    if (cfg.in_channels <= 0 || cfg.base_channels <= 0 || cfg.depth <= 0 || cfg.seq_len <= 0)
        throw ShapeMismatch("unet config: dimensions must be positive");
    if (cfg.seq_len % (1 << cfg.depth) != 0)
        throw ShapeMismatch("unet config: seq_len must be divisible by 2^depth");
    if (!(cfg.mask_ratio > 0.0 && cfg.mask_ratio < 1.0))
        throw ShapeMismatch("unet config: mask_ratio must be in (0,1)");
    if (cfg.mask_segment_len <= 0) throw ShapeMismatch("unet config: mask_segment_len must be > 0");
}

// Encoder halves the length and doubles the channel count per level; the
// decoder mirrors it with up-convolutions and skip concatenation; a final
// width-1 convolution maps back to the input channels with no activation.
template <typename T>
class UNetT {
public:
    UNetT(const UNetConfig& cfg, uint64_t seed) : cfg_(cfg) {
        validate(cfg);
        SplitMix64 rng(derive_seed(seed, "unet-init"));
        int64_t cin = cfg.in_channels;
        for (int i = 0; i < cfg.depth; ++i) {
            const int64_t cout = static_cast<int64_t>(cfg.base_channels) << i;
            enc_.emplace_back(cin, cout, rng);
            cin = cout;
        }
        const int64_t cbot = static_cast<int64_t>(cfg.base_channels) << cfg.depth;
        bottleneck_ = DoubleConv(cin, cbot, rng);
        for (int i = cfg.depth - 1; i >= 0; --i) {
            const int64_t chi = static_cast<int64_t>(cfg.base_channels) << (i + 1);
            const int64_t clo = static_cast<int64_t>(cfg.base_channels) << i;
            ups_.emplace_back(chi, clo, 2, 2, rng);
            dec_.emplace_back(chi, clo, rng);  // concat doubles channels back to chi
        }
        head_ = Conv1dLayerT<T>(cfg.base_channels, cfg.in_channels, 1, 1, 0, rng);
    }

    const UNetConfig& config() const { return cfg_; }

    // x [B, in_channels, seq_len] -> same shape
    Var<T> forward(ForwardCtx<T>& ctx, Var<T> x) {
        if (x->value.rank() != 3 || x->value.dim(1) != cfg_.in_channels ||
            x->value.dim(2) != cfg_.seq_len)
            throw ShapeMismatch("unet forward: expected [B," + std::to_string(cfg_.in_channels) +
                                "," + std::to_string(cfg_.seq_len) + "], got " +
                                x->value.shape_str());
        std::vector<Var<T>> skips;
        Var<T> cur = x;
        for (auto& level : enc_) {
            cur = level.forward(ctx, cur);
            skips.push_back(cur);
            cur = max_pool1d(cur, 2, 2);
        }
        cur = bottleneck_.forward(ctx, cur);
        for (size_t i = 0; i < ups_.size(); ++i) {
            cur = ups_[i].forward(ctx, cur);
            cur = concat_channels(cur, skips[skips.size() - 1 - i]);
            cur = dec_[i].forward(ctx, cur);
        }
        return head_.forward(ctx, cur);
    }

    std::vector<ParamT<T>*> parameters() {
        std::vector<ParamT<T>*> out;
        for (auto& [name, p] : named_params()) out.push_back(p);
        return out;
    }

    std::vector<std::pair<std::string, ParamT<T>*>> named_params() {
        std::vector<std::pair<std::string, ParamT<T>*>> out;
        for (size_t i = 0; i < enc_.size(); ++i) collect_dconv("enc" + std::to_string(i), enc_[i], out);
        collect_dconv("bottleneck", bottleneck_, out);
        for (size_t i = 0; i < ups_.size(); ++i) {
            const std::string p = "up" + std::to_string(i);
            out.emplace_back(p + ".w", &ups_[i].w);
            out.emplace_back(p + ".b", &ups_[i].b);
            collect_dconv("dec" + std::to_string(i), dec_[i], out);
        }
        out.emplace_back("head.w", &head_.w);
        out.emplace_back("head.b", &head_.b);
        return out;
    }

    // parameters plus BN running buffers, for checkpointing
    std::vector<std::pair<std::string, TensorT<T>*>> state() {
        std::vector<std::pair<std::string, TensorT<T>*>> out;
        for (auto& [name, p] : named_params()) out.emplace_back(name, &p->value);
        for (size_t i = 0; i < enc_.size(); ++i) collect_buffers("enc" + std::to_string(i), enc_[i], out);
        collect_buffers("bottleneck", bottleneck_, out);
        for (size_t i = 0; i < dec_.size(); ++i) collect_buffers("dec" + std::to_string(i), dec_[i], out);
        return out;
    }

    // (channels, length) after each encoder level, then the bottleneck
    static std::vector<std::pair<int, int>> feature_schedule(const UNetConfig& cfg) {
        std::vector<std::pair<int, int>> out;
        for (int i = 0; i < cfg.depth; ++i)
            out.emplace_back(cfg.base_channels << i, cfg.seq_len >> i);
        out.emplace_back(cfg.base_channels << cfg.depth, cfg.seq_len >> cfg.depth);
        return out;
    }

private:
    struct DoubleConv {
        Conv1dLayerT<T> c1, c2;
        BatchNorm1dLayerT<T> b1, b2;

        DoubleConv() = default;
        DoubleConv(int64_t cin, int64_t cout, SplitMix64& rng)
            : c1(cin, cout, 3, 1, 1, rng), c2(cout, cout, 3, 1, 1, rng), b1(cout), b2(cout) {}

        Var<T> forward(ForwardCtx<T>& ctx, Var<T> x) {
            x = relu(b1.forward(ctx, c1.forward(ctx, x)));
            return relu(b2.forward(ctx, c2.forward(ctx, x)));
        }
    };

    static void collect_dconv(const std::string& prefix, DoubleConv& dc,
                              std::vector<std::pair<std::string, ParamT<T>*>>& out) {
        out.emplace_back(prefix + ".conv1.w", &dc.c1.w);
        out.emplace_back(prefix + ".conv1.b", &dc.c1.b);
        out.emplace_back(prefix + ".bn1.gamma", &dc.b1.gamma);
        out.emplace_back(prefix + ".bn1.beta", &dc.b1.beta);
        out.emplace_back(prefix + ".conv2.w", &dc.c2.w);
        out.emplace_back(prefix + ".conv2.b", &dc.c2.b);
        out.emplace_back(prefix + ".bn2.gamma", &dc.b2.gamma);
        out.emplace_back(prefix + ".bn2.beta", &dc.b2.beta);
    }

    static void collect_buffers(const std::string& prefix, DoubleConv& dc,
                                std::vector<std::pair<std::string, TensorT<T>*>>& out) {
        out.emplace_back(prefix + ".bn1.running_mean", &dc.b1.running_mean);
        out.emplace_back(prefix + ".bn1.running_var", &dc.b1.running_var);
        out.emplace_back(prefix + ".bn2.running_mean", &dc.b2.running_mean);
        out.emplace_back(prefix + ".bn2.running_var", &dc.b2.running_var);
    }

    UNetConfig cfg_;
    std::vector<DoubleConv> enc_;
    DoubleConv bottleneck_;
    std::vector<ConvTranspose1dLayerT<T>> ups_;
    std::vector<DoubleConv> dec_;
    Conv1dLayerT<T> head_;
};

using UNet = UNetT<float>;

}  // namespace csense::nn
