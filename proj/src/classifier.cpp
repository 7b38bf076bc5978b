#include "csense/classifier.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "csense/checkpoint.hpp"

namespace csense::classifier {

std::vector<std::string> default_class_names(int num_classes) {
    static const std::vector<std::string> kNames{
        "mixed-noodles", "dumplings", "noodle-soup", "stir-fry", "baozi",   "pancake",
        "milk-tea",      "congee",    "fried-rice",  "soup",     "wontons"};
    std::vector<std::string> out;
    for (int i = 0; i < num_classes; ++i) {
        if (i < static_cast<int>(kNames.size()))
            out.push_back(kNames[static_cast<size_t>(i)]);
        else
            out.push_back("class-" + std::to_string(i));
    }
    return out;
}

FoodClassifier::FoodClassifier(const nn::SwinConfig& cfg, uint64_t init_seed)
    : model_(std::make_unique<nn::Swin>(cfg, init_seed)),
      class_names_(default_class_names(cfg.num_classes)) {}

TrainReport FoodClassifier::train(const std::vector<data::WindowPair>& windows,
                                  const TrainOptions& opts) {
    if (windows.empty()) throw MissingLabel("training set is empty");
    const auto& cfg = model_->config();
    std::set<int> present;
    for (const auto& w : windows) {
        if (!w.food_label) throw MissingLabel("window without a food label in the training set");
        if (*w.food_label < 0 || *w.food_label >= cfg.num_classes)
            throw nn::ClassOutOfRange("food label " + std::to_string(*w.food_label));
        present.insert(*w.food_label);
    }
    for (int c = 0; c < cfg.num_classes; ++c)
        if (!present.count(c)) throw ClassAbsent("class " + std::to_string(c) + " has no windows");
    if (opts.epochs < 1 || opts.batch < 1) throw Error("train: epochs and batch must be >= 1");

    stats_ = detector::compute_channel_stats(windows, cfg.seq_len);

    const int64_t n = static_cast<int64_t>(windows.size());
    std::vector<nn::Tensor> fused;
    std::vector<int> labels;
    fused.reserve(static_cast<size_t>(n));
    labels.reserve(static_cast<size_t>(n));
    for (const auto& w : windows) {
        fused.push_back(detector::fuse_window(w, &stats_, cfg.seq_len));
        labels.push_back(*w.food_label);
    }

    auto params = model_->parameters();
    const nn::AdamConfig adam{opts.lr};

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), int64_t{0});

    TrainReport report;
    for (int epoch = 0; epoch < opts.epochs; ++epoch) {
        SplitMix64 shuffle_rng(derive_seed(opts.seed, "shuffle", static_cast<uint64_t>(epoch)));
        for (int64_t i = n - 1; i > 0; --i) {
            const auto j = static_cast<int64_t>(shuffle_rng.next_below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (int64_t start = 0; start < n; start += opts.batch) {
            const int64_t B = std::min<int64_t>(opts.batch, n - start);
            nn::ForwardCtx<float> ctx;
            ctx.mode = nn::Mode::Train;
            std::vector<nn::Var<float>> logits;
            std::vector<int> batch_labels;
            logits.reserve(static_cast<size_t>(B));
            for (int64_t j = 0; j < B; ++j) {
                const int64_t idx = order[static_cast<size_t>(start + j)];
                auto x = nn::make_leaf<float>(fused[static_cast<size_t>(idx)]);
                logits.push_back(model_->logits(ctx, x));
                batch_labels.push_back(labels[static_cast<size_t>(idx)]);
            }
            auto loss = nn::cross_entropy(nn::stack_rows(logits), batch_labels);
            for (auto* p : params) p->zero_grad();
            nn::backward(loss);
            ctx.harvest();
            nn::adam_step(params, adam);
            loss_sum += static_cast<double>(loss->value.data[0]) * static_cast<double>(B);
            loss_count += B;
        }
        report.epoch_loss.push_back(loss_sum / static_cast<double>(loss_count));
    }
    return report;
}

std::vector<float> FoodClassifier::classify(const data::WindowPair& w) const {
    if (!stats_.valid()) throw ConfigError("classifier has no channel stats (train or load first)");
    const auto& cfg = model_->config();
    nn::Tensor fused = detector::fuse_window(w, &stats_, cfg.seq_len);
    nn::ForwardCtx<float> ctx;
    ctx.mode = nn::Mode::Eval;
    ctx.trainable = false;
    auto probs = nn::softmax_lastdim(
        nn::reshape(model_->logits(ctx, nn::make_leaf<float>(std::move(fused))), {1, cfg.num_classes}));
    std::vector<float> out(static_cast<size_t>(cfg.num_classes));
    std::copy_n(probs->value.ptr(), cfg.num_classes, out.begin());
    return out;
}

void FoodClassifier::save(const std::filesystem::path& path) const {
    const auto& cfg = model_->config();
    nlohmann::ordered_json j{
        {"type", "classifier"},
        {"swin",
         {{"in_channels", cfg.in_channels},
          {"seq_len", cfg.seq_len},
          {"patch_size", cfg.patch_size},
          {"embed_dim", cfg.embed_dim},
          {"stage_depths", cfg.stage_depths},
          {"stage_heads", cfg.stage_heads},
          {"window_size", cfg.window_size},
          {"mlp_ratio", cfg.mlp_ratio},
          {"num_classes", cfg.num_classes}}},
        {"class_names", class_names_},
    };
    if (stats_.valid()) j["channel_stats"] = {{"mean", stats_.mean}, {"stddev", stats_.stddev}};

    nn::Checkpoint ckpt;
    ckpt.config_json = j.dump();
    for (auto& [name, tensor] : model_->state()) ckpt.tensors.emplace(name, *tensor);
    nn::save_checkpoint(ckpt, path);
}

FoodClassifier FoodClassifier::load(const std::filesystem::path& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ckpt.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad config block: " + e.what());
    }
    if (j.value("type", "") != "classifier")
        throw ConfigError(path.string() + " is not a classifier checkpoint");
    nn::SwinConfig cfg;
    const auto& js = j.at("swin");
    cfg.in_channels = js.at("in_channels").get<int>();
    cfg.seq_len = js.at("seq_len").get<int>();
    cfg.patch_size = js.at("patch_size").get<int>();
    cfg.embed_dim = js.at("embed_dim").get<int>();
    cfg.stage_depths = js.at("stage_depths").get<std::vector<int>>();
    cfg.stage_heads = js.at("stage_heads").get<std::vector<int>>();
    cfg.window_size = js.at("window_size").get<int>();
    cfg.mlp_ratio = js.at("mlp_ratio").get<int>();
    cfg.num_classes = js.at("num_classes").get<int>();

    FoodClassifier cls(cfg, /*init_seed=*/0);
    for (auto& [name, tensor] : cls.model_->state()) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw IoError(path.string() + ": missing tensor " + name);
        if (it->second.shape != tensor->shape)
            throw IoError(path.string() + ": shape mismatch for " + name);
        *tensor = it->second;
    }
    cls.class_names_ = j.at("class_names").get<std::vector<std::string>>();
    if (j.contains("channel_stats")) {
        cls.stats_.mean = j["channel_stats"].at("mean").get<std::vector<float>>();
        cls.stats_.stddev = j["channel_stats"].at("stddev").get<std::vector<float>>();
    }
    return cls;
}

}  // namespace csense::classifier
