#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "csense/fusion.hpp"
#include "csense/swin.hpp"

namespace csense::classifier {

struct MissingLabel : Error {
    explicit MissingLabel(const std::string& what) : Error("missing label: " + what) {}
};

struct ClassAbsent : Error {
    explicit ClassAbsent(const std::string& what) : Error("class absent: " + what) {}
};

struct TrainOptions {
    int epochs = 100;
    int batch = 16;
    double lr = 1e-4;
    uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> epoch_loss;  // mean cross-entropy per epoch
};

// The default class-name table (11 food types); truncated when the model is
// configured with fewer classes.
std::vector<std::string> default_class_names(int num_classes);

// Stage two: 1D shifted-window transformer mapping an eating window to a
// food-type probability vector.
class FoodClassifier {
public:
    FoodClassifier(const nn::SwinConfig& cfg, uint64_t init_seed);

    // Trains with cross-entropy on eating windows carrying food labels;
    // every class in [0, num_classes) must be present.
    TrainReport train(const std::vector<data::WindowPair>& windows, const TrainOptions& opts);

    // Softmax probability vector over the configured classes.
    std::vector<float> classify(const data::WindowPair& w) const;

    void save(const std::filesystem::path& path) const;
    static FoodClassifier load(const std::filesystem::path& path);

    const nn::SwinConfig& config() const { return model_->config(); }
    const detector::ChannelStats& channel_stats() const { return stats_; }
    void set_channel_stats(detector::ChannelStats s) { stats_ = std::move(s); }
    const std::vector<std::string>& class_names() const { return class_names_; }
    void set_class_names(std::vector<std::string> names) { class_names_ = std::move(names); }
    nn::Swin& model() { return *model_; }
    const nn::Swin& model() const { return *model_; }

private:
    std::unique_ptr<nn::Swin> model_;
    detector::ChannelStats stats_;
    std::vector<std::string> class_names_;
};

}  // namespace csense::classifier
