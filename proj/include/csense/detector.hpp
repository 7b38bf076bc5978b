#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "csense/fusion.hpp"
#include "csense/unet.hpp"

namespace csense::detector {

struct EmptyTrainingSet : Error {
    explicit EmptyTrainingSet(const std::string& what) : Error("training set: " + what) {}
};

struct TooFewSamples : Error {
    explicit TooFewSamples(const std::string& what) : Error("too few samples: " + what) {}
};

// Reconstruction-error cutoff at the nearest-rank percentile of calibration
// errors: sort ascending, tau = e[ceil(p/100 * n)] (1-indexed).
struct ThresholdCalibration {
    double percentile = 80.0;
    double tau = 0.0;
    int64_t calibration_size = 0;
};

double nearest_rank_percentile(std::vector<double> values, double percentile);

// How inference-time masks are drawn: num_seeds == 1 scores one mask whose
// seed derives from the window start time; num_seeds > 1 averages the error
// over that many derived seeds.
struct MaskPolicy {
    int num_seeds = 1;
};

struct TrainOptions {
    int epochs = 100;
    int batch = 16;
    double lr = 1e-4;
    uint64_t seed = 0;
};

struct TrainReport {
    std::vector<double> epoch_loss;  // mean masked MSE per epoch
};

// Stage one: a 1D U-Net trained to reconstruct masked eating windows.
// Windows whose reconstruction error exceeds the calibrated threshold are
// flagged NonEating.
class EatingDetector {
public:
    EatingDetector(const nn::UNetConfig& cfg, uint64_t init_seed);

    // Trains on eating-only windows with per-epoch seeded shuffling,
    // minimizing MSE at masked positions. Computes and stores the channel
    // stats used by every later call.
    TrainReport train(const std::vector<data::WindowPair>& eating_windows,
                      const TrainOptions& opts);

    // Masked reconstruction error per the configured mask policy.
    double reconstruction_error(const data::WindowPair& w) const;
    double reconstruction_error_with_seed(const data::WindowPair& w, uint64_t mask_seed) const;

    // Nearest-rank percentile threshold over eating-only calibration windows.
    const ThresholdCalibration& calibrate(const std::vector<data::WindowPair>& eating_windows,
                                          double percentile = 80.0);

    // Eating iff reconstruction_error(w) <= tau (boundary inclusive).
    data::IntakeState detect(const data::WindowPair& w) const;

    void save(const std::filesystem::path& path) const;
    static EatingDetector load(const std::filesystem::path& path);

    const nn::UNetConfig& config() const { return model_->config(); }
    const ChannelStats& channel_stats() const { return stats_; }
    void set_channel_stats(ChannelStats s) { stats_ = std::move(s); }
    const std::optional<ThresholdCalibration>& calibration() const { return calibration_; }
    void set_calibration(const ThresholdCalibration& c) { calibration_ = c; }
    MaskPolicy mask_policy() const { return mask_policy_; }
    void set_mask_policy(MaskPolicy p) { mask_policy_ = p; }
    bool masked_scoring() const { return masked_scoring_; }
    void set_masked_scoring(bool m) { masked_scoring_ = m; }  // full-signal MSE when false
    uint64_t mask_seed_base() const { return mask_seed_base_; }
    nn::UNet& model() { return *model_; }

private:
    nn::Tensor reconstruct(const nn::Tensor& masked_input) const;

    std::unique_ptr<nn::UNet> model_;
    ChannelStats stats_;
    std::optional<ThresholdCalibration> calibration_;
    MaskPolicy mask_policy_;
    bool masked_scoring_ = true;
    uint64_t mask_seed_base_ = 0;
};

// -- hyperparameter grid search -----------------------------------------------

struct GridCell {
    double ratio = 0.0;
    double percentile = 0.0;
    double accuracy = 0.0;
};

struct SearchResult {
    std::vector<GridCell> grid;    // full grid, row-major over (ratio, percentile)
    std::vector<GridCell> ranked;  // top_k by accuracy; ties by lower ratio then percentile
};

// Trains one reconstructor per mask ratio (calibration is training-free, so
// percentiles reuse the weights), calibrates at each percentile on the
// eating windows of the train set, and scores detection accuracy on the
// validation set.
SearchResult hyperparam_search(const std::vector<double>& ratios,
                               const std::vector<double>& percentiles,
                               const std::vector<data::WindowPair>& train_windows,
                               const std::vector<data::WindowPair>& validation_windows,
                               const nn::UNetConfig& base_cfg, const TrainOptions& opts,
                               int top_k = 20);

void write_gridsearch_csv(const SearchResult& result, const std::filesystem::path& path);

}  // namespace csense::detector
