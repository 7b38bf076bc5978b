#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>

#include "csense/classifier.hpp"
#include "csense/gradcheck.hpp"
#include "csense/synth.hpp"

using namespace csense;
using namespace csense::nn;
using csense::data::IntakeState;
using csense::data::WindowPair;

namespace {

DTensor randd(std::vector<int64_t> shape, uint64_t seed) {
    DTensor t(std::move(shape));
    SplitMix64 rng(seed);
    for (auto& v : t.data) v = rng.uniform(-1, 1);
    return t;
}

WindowPair random_window(uint64_t seed) {
    WindowPair w;
    w.watch_mat = Tensor({128, 6});
    w.glasses_mat = Tensor({25, 6});
    SplitMix64 rng(seed);
    for (auto& v : w.watch_mat.data) v = static_cast<float>(rng.gaussian());
    for (auto& v : w.glasses_mat.data) v = static_cast<float>(rng.gaussian());
    w.state_label = IntakeState::Eating;
    w.food_label = 0;
    return w;
}

detector::ChannelStats unit_stats() {
    detector::ChannelStats s;
    s.mean.assign(12, 0.0f);
    s.stddev.assign(12, 1.0f);
    return s;
}

template <typename T>
std::map<std::string, ParamT<T>*> param_map(SwinT<T>& model) {
    std::map<std::string, ParamT<T>*> m;
    for (auto& [name, p] : model.named_params()) m[name] = p;
    return m;
}

}  // namespace

TEST_CASE("patch_embed: zero input gives zero tokens; identity passes patches through") {
    SwinConfig cfg;
    SwinT<double> model(cfg, 3);
    auto params = param_map(model);

    ForwardCtx<double> ctx;
    ctx.trainable = false;
    auto zero_tokens = model.patch_embed(ctx, make_leaf<double>(DTensor({12, 128})));
    CHECK(zero_tokens->value.shape == std::vector<int64_t>{32, 48});
    for (double v : zero_tokens->value.data) CHECK(v == 0.0);  // biases init to zero

    // identity projection on the 48-dim flattened patch reproduces raw values
    auto& w = params.at("embed.w")->value;
    for (auto& v : w.data) v = 0.0;
    for (int64_t i = 0; i < 48; ++i) w(i, i) = 1.0;
    DTensor x = randd({12, 128}, 9);
    ForwardCtx<double> ctx2;
    ctx2.trainable = false;
    auto tokens = model.patch_embed(ctx2, make_leaf<double>(x));
    for (int64_t t = 0; t < 32; ++t)
        for (int64_t c = 0; c < 12; ++c)
            for (int64_t p = 0; p < 4; ++p)
                CHECK(tokens->value(t, c * 4 + p) == x(c, t * 4 + p));
}

TEST_CASE("window partition and inverse restore token order exactly") {
    for (auto [T_len, win, shift] : {std::tuple<int, int, int>{32, 8, 0},
                                     std::tuple<int, int, int>{32, 8, 4},
                                     std::tuple<int, int, int>{16, 8, 4},
                                     std::tuple<int, int, int>{8, 4, 2},
                                     std::tuple<int, int, int>{8, 8, 0}}) {
        DTensor tokens = randd({T_len, 5}, static_cast<uint64_t>(T_len * 100 + win + shift));
        auto v = make_leaf<double>(tokens);
        auto parts = window_partition(v, win, shift);
        CHECK(parts->value.shape == std::vector<int64_t>{T_len / win, win, 5});
        auto back = window_unpartition(parts, shift);
        REQUIRE(back->value.shape == tokens.shape);
        CHECK(back->value.data == tokens.data);  // bit-exact
    }
    // plain chunking when shift == 0
    DTensor tokens = randd({8, 2}, 77);
    auto parts = window_partition(make_leaf<double>(tokens), 4, 0);
    for (int64_t i = 0; i < 8; ++i)
        for (int64_t d = 0; d < 2; ++d) CHECK(parts->value(i / 4, i % 4, d) == tokens(i, d));
}

TEST_CASE("shifted partition wrap window and mask (T=8, w=4, shift=2)") {
    // rotated order is [2,3,4,5,6,7,0,1]; the wrap window holds {6,7,0,1}
    DTensor tokens({8, 1});
    for (int64_t i = 0; i < 8; ++i) tokens(i, 0) = static_cast<double>(i);
    auto parts = window_partition(make_leaf<double>(tokens), 4, 2);
    CHECK(parts->value(1, 0, 0) == 6.0);
    CHECK(parts->value(1, 1, 0) == 7.0);
    CHECK(parts->value(1, 2, 0) == 0.0);
    CHECK(parts->value(1, 3, 0) == 1.0);

    auto mask = shift_attention_mask<double>(8, 4, 2);
    REQUIRE(mask.shape == std::vector<int64_t>{2, 4, 4});
    // window 0: no blocking
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) CHECK(mask(0, i, j) == 0.0);
    // window 1: {6,7} (slots 0,1) and {0,1} (slots 2,3) must not attend across
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j) {
            const bool cross = (i < 2) != (j < 2);
            CHECK(mask(1, i, j) == (cross ? -1e9 : 0.0));
        }
}

TEST_CASE("cross-boundary attention is suppressed below 1e-6 after softmax") {
    const int64_t T = 8, W = 4, shift = 2, H = 2, d = 3;
    auto q = make_leaf<double>(randd({T / W, H, W, d}, 21));
    auto k = make_leaf<double>(randd({T / W, H, W, d}, 22));
    auto scores = scale(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(3.0));
    auto mask = shift_attention_mask<double>(T, W, shift);
    auto probs = softmax_lastdim(add_const_mask(scores, mask));
    for (int64_t h = 0; h < H; ++h)
        for (int64_t i = 0; i < W; ++i)
            for (int64_t j = 0; j < W; ++j) {
                const bool cross = (i < W - shift) != (j < W - shift);
                if (cross) CHECK(probs->value(1, h, i, j) < 1e-6);
            }
}

TEST_CASE("zero attention and mlp weights make the block an identity") {
    SwinConfig cfg;
    SwinT<double> model(cfg, 17);
    for (auto& [name, p] : model.named_params()) {
        if (name.rfind("stage0.block0", 0) == 0 || name == "stage0.rel_bias")
            for (auto& v : p->value.data) v = 0.0;
    }
    DTensor tokens = randd({32, 48}, 4);
    ForwardCtx<double> ctx;
    ctx.trainable = false;
    auto out = model.block_forward(ctx, make_leaf<double>(tokens), 0, 0);
    REQUIRE(out->value.shape == tokens.shape);
    for (int64_t i = 0; i < tokens.numel(); ++i)
        CHECK(out->value.data[size_t(i)] == tokens.data[size_t(i)]);
}

TEST_CASE("window covering all tokens equals global attention") {
    // window_size == token count, shift 0: the windowed path must match a
    // straight global-attention computation with the same weights
    SwinConfig cfg;
    cfg.seq_len = 64;
    cfg.patch_size = 4;  // 16 tokens
    cfg.embed_dim = 24;
    cfg.stage_depths = {1};
    cfg.stage_heads = {3};
    cfg.window_size = 16;
    cfg.num_classes = 4;
    SwinT<double> model(cfg, 23);
    auto params = param_map(model);

    DTensor tokens = randd({16, 24}, 55);
    ForwardCtx<double> ctx;
    ctx.trainable = false;
    auto blocked = model.block_forward(ctx, make_leaf<double>(tokens), 0, 0);

    // oracle: same block computed without any window partitioning
    const int64_t T = 16, D = 24, H = 3, hd = D / H;
    ForwardCtx<double> ctx2;
    ctx2.trainable = false;
    auto tok = make_leaf<double>(tokens);
    auto ln = [&](const std::string& p, Var<double> x) {
        return layer_norm(x, make_leaf<double>(params.at(p + ".gamma")->value),
                          make_leaf<double>(params.at(p + ".beta")->value));
    };
    auto lin = [&](const std::string& p, Var<double> x) {
        return linear(x, make_leaf<double>(params.at(p + ".w")->value),
                      make_leaf<double>(params.at(p + ".b")->value));
    };
    auto normed = ln("stage0.block0.ln1", tok);
    auto to_heads = [&](Var<double> v) {
        return permute(reshape(v, {1, T, H, hd}), {0, 2, 1, 3});  // [1,H,T,hd]
    };
    auto qh = to_heads(lin("stage0.block0.wq", normed));
    auto kh = to_heads(lin("stage0.block0.wk", normed));
    auto vh = to_heads(lin("stage0.block0.wv", normed));
    // rel-pos bias gathered by hand
    const auto& table = params.at("stage0.rel_bias")->value;
    DTensor bias_t({H, T, T});
    for (int64_t h = 0; h < H; ++h)
        for (int64_t i = 0; i < T; ++i)
            for (int64_t j = 0; j < T; ++j) bias_t(h, i, j) = table(h, i - j + T - 1);
    auto att = attention(qh, kh, vh, static_cast<const DTensor*>(nullptr),
                         make_leaf<double>(bias_t));
    auto merged = reshape(permute(att, {0, 2, 1, 3}), {T, D});
    auto attn_out = lin("stage0.block0.wo", merged);
    auto res1 = add(tok, attn_out);
    auto mlp = lin("stage0.block0.fc2", gelu(lin("stage0.block0.fc1", ln("stage0.block0.ln2", res1))));
    auto expected = add(res1, mlp);

    REQUIRE(blocked->value.shape == expected->value.shape);
    for (int64_t i = 0; i < expected->value.numel(); ++i)
        CHECK(blocked->value.data[size_t(i)] ==
              doctest::Approx(expected->value.data[size_t(i)]).epsilon(1e-5));
}

TEST_CASE("patch_merging halves tokens and doubles dims") {
    SwinConfig cfg;
    SwinT<double> model(cfg, 29);
    DTensor tokens = randd({32, 48}, 71);
    ForwardCtx<double> ctx;
    ctx.trainable = false;
    auto merged = model.patch_merging(ctx, make_leaf<double>(tokens), 0);
    CHECK(merged->value.shape == std::vector<int64_t>{16, 96});

    // identity projection on duplicated tokens: each output row is the
    // layer_norm of the concatenated identical pair
    auto params = param_map(model);
    auto& w = params.at("merge0.proj.w")->value;
    for (auto& v : w.data) v = 0.0;
    for (int64_t i = 0; i < 96; ++i) w(i, i) = 1.0;
    DTensor dup({32, 48});
    SplitMix64 rng(88);
    for (int64_t t = 0; t < 16; ++t)
        for (int64_t dcol = 0; dcol < 48; ++dcol) {
            const double v = rng.uniform(-1, 1);
            dup(2 * t, dcol) = v;
            dup(2 * t + 1, dcol) = v;
        }
    ForwardCtx<double> ctx2;
    ctx2.trainable = false;
    auto m2 = model.patch_merging(ctx2, make_leaf<double>(dup), 0);
    auto ln_gamma = make_leaf<double>(params.at("merge0.ln.gamma")->value);
    auto ln_beta = make_leaf<double>(params.at("merge0.ln.beta")->value);
    auto expected = layer_norm(reshape(make_leaf<double>(dup), {16, 96}), ln_gamma, ln_beta);
    for (int64_t i = 0; i < m2->value.numel(); ++i)
        CHECK(m2->value.data[size_t(i)] ==
              doctest::Approx(expected->value.data[size_t(i)]).epsilon(1e-9));
}

TEST_CASE("gradient check through a reduced swin block") {
    SwinConfig cfg;
    cfg.seq_len = 16;
    cfg.patch_size = 2;  // 8 tokens
    cfg.embed_dim = 8;
    cfg.stage_depths = {2};
    cfg.stage_heads = {2};
    cfg.window_size = 4;
    cfg.num_classes = 3;
    SwinT<double> model(cfg, 31);
    SplitMix64 rng(6);
    DTensor x0({12, 16});
    for (auto& v : x0.data) v = rng.uniform(-1, 1);
    const std::vector<int> label{1};
    const double err = grad_check(
        [&](const Var<double>& x) {
            ForwardCtx<double> ctx;
            ctx.trainable = false;
            auto logits = model.logits(ctx, x);
            return cross_entropy(reshape(logits, {1, 3}), label);
        },
        x0);
    CHECK(err < 1e-4);
}

TEST_CASE("classify returns a normalized, deterministic probability vector") {
    classifier::FoodClassifier cls(SwinConfig{}, 12);
    cls.set_channel_stats(unit_stats());
    auto w = random_window(5);
    auto p1 = cls.classify(w);
    auto p2 = cls.classify(w);
    CHECK(p1 == p2);
    REQUIRE(p1.size() == 11);
    double sum = 0;
    for (float v : p1) {
        CHECK(v >= 0.0f);
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-5);
}

TEST_CASE("freshly initialized model scores near ln(11) cross-entropy") {
    classifier::FoodClassifier cls(SwinConfig{}, 77);
    cls.set_channel_stats(unit_stats());
    double total = 0;
    const int n = 24;
    SplitMix64 rng(1);
    for (int i = 0; i < n; ++i) {
        auto probs = cls.classify(random_window(1000 + static_cast<uint64_t>(i)));
        const int label = static_cast<int>(rng.next_below(11));
        total += -std::log(std::max(1e-12, static_cast<double>(probs[size_t(label)])));
    }
    CHECK(std::abs(total / n - std::log(11.0)) < 0.1);
}

TEST_CASE("permuting head rows permutes output probabilities") {
    SwinConfig cfg;
    classifier::FoodClassifier cls(cfg, 41);
    cls.set_channel_stats(unit_stats());
    auto w = random_window(7);
    auto base = cls.classify(w);

    // rotate the head columns by 3
    auto params = param_map(cls.model());
    auto& hw = params.at("head.w")->value;
    auto& hb = params.at("head.b")->value;
    Tensor hw_old = hw;
    Tensor hb_old = hb;
    const int C = cfg.num_classes;
    for (int64_t i = 0; i < hw.dim(0); ++i)
        for (int c = 0; c < C; ++c) hw(i, (c + 3) % C) = hw_old(i, c);
    for (int c = 0; c < C; ++c) hb((c + 3) % C) = hb_old(c);

    auto rotated = cls.classify(w);
    for (int c = 0; c < C; ++c)
        CHECK(rotated[size_t((c + 3) % C)] == doctest::Approx(base[size_t(c)]).epsilon(1e-5));
}

TEST_CASE("training input contracts") {
    SwinConfig cfg;
    cfg.num_classes = 3;
    classifier::FoodClassifier cls(cfg, 2);
    classifier::TrainOptions opts;
    opts.epochs = 1;
    opts.seed = 2;

    std::vector<WindowPair> windows;
    for (int i = 0; i < 6; ++i) {
        auto w = random_window(static_cast<uint64_t>(i));
        w.food_label = i % 3;
        windows.push_back(w);
    }
    auto missing = windows;
    missing[3].food_label.reset();
    CHECK_THROWS_AS(cls.train(missing, opts), classifier::MissingLabel);

    auto absent = windows;
    for (auto& w : absent)
        if (w.food_label == 2) w.food_label = 1;
    CHECK_THROWS_AS(cls.train(absent, opts), classifier::ClassAbsent);
}

TEST_CASE("classifier checkpoint round-trip preserves outputs bit-exactly") {
    SwinConfig cfg;
    cfg.num_classes = 5;
    classifier::FoodClassifier cls(cfg, 10);
    cls.set_channel_stats(unit_stats());
    cls.set_class_names({"a", "b", "c", "d", "e"});

    const auto dir = std::filesystem::temp_directory_path() / "csense_cls_test";
    std::filesystem::create_directories(dir);
    cls.save(dir / "cls.ckpt");
    auto back = classifier::FoodClassifier::load(dir / "cls.ckpt");
    CHECK(back.class_names() == cls.class_names());
    CHECK(back.config().num_classes == 5);
    for (uint64_t i = 0; i < 4; ++i) {
        auto w = random_window(900 + i);
        CHECK(back.classify(w) == cls.classify(w));
    }
}
