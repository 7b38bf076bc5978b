#include "csense/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "csense/checkpoint.hpp"

namespace csense::detector {

// ---------------------------------------------------------------------------
// fusion
// ---------------------------------------------------------------------------

nn::Tensor fuse_window(const data::WindowPair& w, const ChannelStats* stats, int seq_len) {
    if (w.watch_mat.rank() != 2 || w.watch_mat.dim(0) != data::kWatchRows || w.watch_mat.dim(1) != 6)
        throw nn::ShapeMismatch("fuse_window: watch matrix must be 128x6");
    if (w.glasses_mat.rank() != 2 || w.glasses_mat.dim(0) != data::kGlassesRows ||
        w.glasses_mat.dim(1) != 6)
        throw nn::ShapeMismatch("fuse_window: glasses matrix must be 25x6");
    if (seq_len != data::kWatchRows)
        throw nn::ShapeMismatch("fuse_window: seq_len must match the watch row count");

    nn::Tensor out({12, seq_len});
    for (int c = 0; c < 6; ++c)
        for (int t = 0; t < seq_len; ++t) out(c, t) = w.watch_mat(t, c);

    // glasses channels: align-corners linear upsample 25 -> seq_len
    const int64_t src_n = data::kGlassesRows;
    for (int c = 0; c < 6; ++c) {
        for (int t = 0; t < seq_len; ++t) {
            const double u = static_cast<double>(t) * static_cast<double>(src_n - 1) /
                             static_cast<double>(seq_len - 1);
            const int64_t i = std::min<int64_t>(static_cast<int64_t>(u), src_n - 2);
            const double alpha = u - static_cast<double>(i);
            const float a = w.glasses_mat(i, c);
            const float b = w.glasses_mat(i + 1, c);
            out(6 + c, t) = alpha == 0.0 ? a : static_cast<float>(a + (b - a) * alpha);
        }
    }

    if (stats) {
        if (!stats->valid()) throw nn::ShapeMismatch("fuse_window: channel stats must have 12 entries");
        for (int c = 0; c < 12; ++c) {
            const float m = stats->mean[static_cast<size_t>(c)];
            const float s = stats->stddev[static_cast<size_t>(c)];
            for (int t = 0; t < seq_len; ++t) out(c, t) = (out(c, t) - m) / s;
        }
    }
    return out;
}

ChannelStats compute_channel_stats(const std::vector<data::WindowPair>& windows, int seq_len) {
    if (windows.empty()) throw EmptyTrainingSet("cannot compute channel stats of an empty set");
    std::vector<double> sum(12, 0.0), sumsq(12, 0.0);
    int64_t count = 0;
    for (const auto& w : windows) {
        nn::Tensor fused = fuse_window(w, nullptr, seq_len);
        for (int c = 0; c < 12; ++c)
            for (int t = 0; t < seq_len; ++t) {
                const double v = static_cast<double>(fused(c, t));
                sum[static_cast<size_t>(c)] += v;
                sumsq[static_cast<size_t>(c)] += v * v;
            }
        count += seq_len;
    }
    ChannelStats stats;
    stats.mean.resize(12);
    stats.stddev.resize(12);
    for (int c = 0; c < 12; ++c) {
        const double m = sum[static_cast<size_t>(c)] / static_cast<double>(count);
        const double var = std::max(0.0, sumsq[static_cast<size_t>(c)] / static_cast<double>(count) - m * m);
        stats.mean[static_cast<size_t>(c)] = static_cast<float>(m);
        // degenerate flat channels standardize to zero instead of dividing by 0
        stats.stddev[static_cast<size_t>(c)] = static_cast<float>(std::max(std::sqrt(var), 1e-6));
    }
    return stats;
}

MaskedWindow mask_window(const nn::Tensor& x, double ratio, int segment_len, uint64_t seed) {
    if (x.rank() != 2) throw nn::ShapeMismatch("mask_window expects [C,L]");
    const int64_t C = x.dim(0), L = x.dim(1);
    const int64_t target = std::llround(ratio * static_cast<double>(L));
    if (target < 1) throw Error("mask_window: ratio * seq_len must be >= 1");

    std::vector<uint8_t> mask(static_cast<size_t>(L), 0);
    SplitMix64 rng(seed);
    int64_t masked = 0;
    auto try_place = [&](int64_t len) {
        for (int attempt = 0; attempt < 2000; ++attempt) {
            const int64_t start = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(L - len + 1)));
            bool free = true;
            for (int64_t i = start; i < start + len; ++i)
                if (mask[static_cast<size_t>(i)]) {
                    free = false;
                    break;
                }
            if (!free) continue;
            for (int64_t i = start; i < start + len; ++i) mask[static_cast<size_t>(i)] = 1;
            masked += len;
            return true;
        }
        return false;
    };

    const int64_t full = std::min<int64_t>(target / segment_len, L / segment_len);
    const int64_t remainder = target - full * segment_len;
    bool ok = true;
    for (int64_t f = 0; f < full && ok; ++f) ok = try_place(segment_len);
    if (ok && remainder > 0) ok = try_place(remainder);
    if (masked < target) {
        // dense masks can defeat rejection sampling; finish deterministically
        const int64_t off = static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(L)));
        for (int64_t i = 0; i < L && masked < target; ++i) {
            const int64_t pos = (off + i) % L;
            if (!mask[static_cast<size_t>(pos)]) {
                mask[static_cast<size_t>(pos)] = 1;
                ++masked;
            }
        }
    }

    MaskedWindow out;
    out.x = x;
    out.mask = std::move(mask);
    for (int64_t t = 0; t < L; ++t)
        if (out.mask[static_cast<size_t>(t)])
            for (int64_t c = 0; c < C; ++c) out.x(c, t) = 0.0f;
    return out;
}

// ---------------------------------------------------------------------------
// threshold
// ---------------------------------------------------------------------------

double nearest_rank_percentile(std::vector<double> values, double percentile) {
    if (values.empty()) throw TooFewSamples("percentile of an empty set");
    if (percentile <= 0.0 || percentile > 100.0)
        throw Error("percentile must be in (0, 100]");
    std::sort(values.begin(), values.end());
    const auto n = static_cast<double>(values.size());
    auto rank = static_cast<int64_t>(std::ceil(percentile / 100.0 * n - 1e-9));
    rank = std::clamp<int64_t>(rank, 1, static_cast<int64_t>(values.size()));
    return values[static_cast<size_t>(rank - 1)];
}

// ---------------------------------------------------------------------------
// EatingDetector
// ---------------------------------------------------------------------------

EatingDetector::EatingDetector(const nn::UNetConfig& cfg, uint64_t init_seed)
    : model_(std::make_unique<nn::UNet>(cfg, init_seed)) {}

TrainReport EatingDetector::train(const std::vector<data::WindowPair>& eating_windows,
                                  const TrainOptions& opts) {
    if (eating_windows.empty()) throw EmptyTrainingSet("no windows");
    for (const auto& w : eating_windows)
        if (w.state_label != data::IntakeState::Eating)
            throw EmptyTrainingSet("contains a non-eating window; stage one trains on eating only");
    if (opts.epochs < 1 || opts.batch < 1) throw Error("train: epochs and batch must be >= 1");

    const auto& cfg = model_->config();
    stats_ = compute_channel_stats(eating_windows, cfg.seq_len);
    mask_seed_base_ = derive_seed(opts.seed, "mask-base");

    const int64_t n = static_cast<int64_t>(eating_windows.size());
    std::vector<nn::Tensor> fused;
    fused.reserve(static_cast<size_t>(n));
    for (const auto& w : eating_windows) fused.push_back(fuse_window(w, &stats_, cfg.seq_len));

    auto params = model_->parameters();
    const nn::AdamConfig adam{opts.lr};
    const int64_t L = cfg.seq_len, C = cfg.in_channels;

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
            nn::Tensor X({B, C, L}), Xm({B, C, L}), M({B, C, L});
            for (int64_t j = 0; j < B; ++j) {
                const int64_t idx = order[static_cast<size_t>(start + j)];
                const nn::Tensor& f = fused[static_cast<size_t>(idx)];
                const uint64_t mseed = derive_seed(
                    opts.seed, "train-mask",
                    static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n) +
                        static_cast<uint64_t>(start + j));
                MaskedWindow mw = mask_window(f, cfg.mask_ratio, cfg.mask_segment_len, mseed);
                std::copy_n(f.ptr(), C * L, X.ptr() + j * C * L);
                std::copy_n(mw.x.ptr(), C * L, Xm.ptr() + j * C * L);
                for (int64_t t = 0; t < L; ++t)
                    if (mw.mask[static_cast<size_t>(t)])
                        for (int64_t c = 0; c < C; ++c) M(j, c, t) = 1.0f;
            }
            nn::ForwardCtx<float> ctx;
            ctx.mode = nn::Mode::Train;
            ctx.update_running = true;
            auto out = model_->forward(ctx, nn::make_leaf<float>(std::move(Xm)));
            auto loss = nn::mse_loss(out, X, &M);
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

nn::Tensor EatingDetector::reconstruct(const nn::Tensor& masked_input) const {
    const auto& cfg = model_->config();
    nn::Tensor batch({1, cfg.in_channels, cfg.seq_len});
    std::copy_n(masked_input.ptr(), masked_input.numel(), batch.ptr());
    nn::ForwardCtx<float> ctx;
    ctx.mode = nn::Mode::Eval;
    ctx.trainable = false;
    auto out = model_->forward(ctx, nn::make_leaf<float>(std::move(batch)));
    nn::Tensor result({cfg.in_channels, cfg.seq_len});
    std::copy_n(out->value.ptr(), result.numel(), result.ptr());
    return result;
}

double EatingDetector::reconstruction_error_with_seed(const data::WindowPair& w,
                                                      uint64_t mask_seed) const {
    if (!stats_.valid()) throw ConfigError("detector has no channel stats (train or load first)");
    const auto& cfg = model_->config();
    nn::Tensor fused = fuse_window(w, &stats_, cfg.seq_len);
    MaskedWindow mw = mask_window(fused, cfg.mask_ratio, cfg.mask_segment_len, mask_seed);
    nn::Tensor rec = reconstruct(mw.x);
    double sum = 0.0;
    int64_t count = 0;
    for (int64_t t = 0; t < cfg.seq_len; ++t) {
        if (masked_scoring_ && !mw.mask[static_cast<size_t>(t)]) continue;
        for (int64_t c = 0; c < cfg.in_channels; ++c) {
            const double d = static_cast<double>(fused(c, t)) - static_cast<double>(rec(c, t));
            sum += d * d;
            ++count;
        }
    }
    return sum / static_cast<double>(count);
}

double EatingDetector::reconstruction_error(const data::WindowPair& w) const {
    const auto key = static_cast<uint64_t>(std::llround(w.start_t * 1e6));
    const int reps = std::max(1, mask_policy_.num_seeds);
    double sum = 0.0;
    for (int i = 0; i < reps; ++i) {
        const uint64_t seed =
            derive_seed(mask_seed_base_, "window-mask", key * 131 + static_cast<uint64_t>(i));
        sum += reconstruction_error_with_seed(w, seed);
    }
    return sum / static_cast<double>(reps);
}

const ThresholdCalibration& EatingDetector::calibrate(
    const std::vector<data::WindowPair>& eating_windows, double percentile) {
    if (eating_windows.size() < 10)
        throw TooFewSamples("calibration needs >= 10 windows, got " +
                            std::to_string(eating_windows.size()));
    for (const auto& w : eating_windows)
        if (w.state_label != data::IntakeState::Eating)
            throw Error("calibrate: calibration set must contain eating windows only");
    std::vector<double> errors;
    errors.reserve(eating_windows.size());
    for (const auto& w : eating_windows) errors.push_back(reconstruction_error(w));
    ThresholdCalibration cal;
    cal.percentile = percentile;
    cal.calibration_size = static_cast<int64_t>(errors.size());
    cal.tau = nearest_rank_percentile(std::move(errors), percentile);
    calibration_ = cal;
    return *calibration_;
}

data::IntakeState EatingDetector::detect(const data::WindowPair& w) const {
    if (!calibration_) throw ConfigError("detector is not calibrated (missing calibration.tau)");
    return reconstruction_error(w) <= calibration_->tau ? data::IntakeState::Eating
                                                        : data::IntakeState::NonEating;
}

// ---------------------------------------------------------------------------
// checkpointing
// ---------------------------------------------------------------------------

void EatingDetector::save(const std::filesystem::path& path) const {
    const auto& cfg = model_->config();
    nlohmann::ordered_json j{
        {"type", "detector"},
        {"unet",
         {{"in_channels", cfg.in_channels},
          {"base_channels", cfg.base_channels},
          {"depth", cfg.depth},
          {"seq_len", cfg.seq_len},
          {"mask_ratio", cfg.mask_ratio},
          {"mask_segment_len", cfg.mask_segment_len}}},
        {"mask_policy", {{"num_seeds", mask_policy_.num_seeds}}},
        {"masked_scoring", masked_scoring_},
        {"mask_seed_base", mask_seed_base_},
    };
    if (stats_.valid()) j["channel_stats"] = {{"mean", stats_.mean}, {"stddev", stats_.stddev}};
    if (calibration_)
        j["calibration"] = {{"percentile", calibration_->percentile},
                            {"tau", calibration_->tau},
                            {"calibration_size", calibration_->calibration_size}};

    nn::Checkpoint ckpt;
    ckpt.config_json = j.dump();
    for (auto& [name, tensor] : model_->state()) ckpt.tensors.emplace(name, *tensor);
    nn::save_checkpoint(ckpt, path);
}

EatingDetector EatingDetector::load(const std::filesystem::path& path) {
    nn::Checkpoint ckpt = nn::load_checkpoint(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ckpt.config_json);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": bad config block: " + e.what());
    }
    if (j.value("type", "") != "detector")
        throw ConfigError(path.string() + " is not a detector checkpoint");
    nn::UNetConfig cfg;
    const auto& ju = j.at("unet");
    cfg.in_channels = ju.at("in_channels").get<int>();
    cfg.base_channels = ju.at("base_channels").get<int>();
    cfg.depth = ju.at("depth").get<int>();
    cfg.seq_len = ju.at("seq_len").get<int>();
    cfg.mask_ratio = ju.at("mask_ratio").get<double>();
    cfg.mask_segment_len = ju.at("mask_segment_len").get<int>();

    EatingDetector det(cfg, /*init_seed=*/0);
    for (auto& [name, tensor] : det.model_->state()) {
        auto it = ckpt.tensors.find(name);
        if (it == ckpt.tensors.end()) throw IoError(path.string() + ": missing tensor " + name);
        if (it->second.shape != tensor->shape)
            throw IoError(path.string() + ": shape mismatch for " + name);
        *tensor = it->second;
    }
    if (j.contains("channel_stats")) {
        det.stats_.mean = j["channel_stats"].at("mean").get<std::vector<float>>();
        det.stats_.stddev = j["channel_stats"].at("stddev").get<std::vector<float>>();
    }
    if (j.contains("calibration")) {
        ThresholdCalibration cal;
        cal.percentile = j["calibration"].at("percentile").get<double>();
        cal.tau = j["calibration"].at("tau").get<double>();
        cal.calibration_size = j["calibration"].at("calibration_size").get<int64_t>();
        det.calibration_ = cal;
    }
    det.mask_policy_.num_seeds = j.at("mask_policy").at("num_seeds").get<int>();
    det.masked_scoring_ = j.at("masked_scoring").get<bool>();
    det.mask_seed_base_ = j.at("mask_seed_base").get<uint64_t>();
    return det;
}

// ---------------------------------------------------------------------------
// grid search
// ---------------------------------------------------------------------------

SearchResult hyperparam_search(const std::vector<double>& ratios,
                               const std::vector<double>& percentiles,
                               const std::vector<data::WindowPair>& train_windows,
                               const std::vector<data::WindowPair>& validation_windows,
                               const nn::UNetConfig& base_cfg, const TrainOptions& opts,
                               int top_k) {
    if (ratios.empty() || percentiles.empty()) throw Error("search: empty grid axis");
    bool has_eat = false, has_noneat = false;
    for (const auto& w : validation_windows)
        (w.state_label == data::IntakeState::Eating ? has_eat : has_noneat) = true;
    if (!has_eat || !has_noneat)
        throw Error("search: validation set must contain both eating and non-eating windows");

    std::vector<data::WindowPair> train_eating;
    for (const auto& w : train_windows)
        if (w.state_label == data::IntakeState::Eating) train_eating.push_back(w);

    SearchResult result;
    for (size_t ri = 0; ri < ratios.size(); ++ri) {
        nn::UNetConfig cfg = base_cfg;
        cfg.mask_ratio = ratios[ri];
        EatingDetector det(cfg, derive_seed(opts.seed, "search-init", ri));
        TrainOptions topts = opts;
        topts.seed = derive_seed(opts.seed, "search-train", ri);
        det.train(train_eating, topts);

        std::vector<double> cal_errors;
        cal_errors.reserve(train_eating.size());
        for (const auto& w : train_eating) cal_errors.push_back(det.reconstruction_error(w));

        std::vector<double> val_errors;
        std::vector<bool> val_truth;
        val_errors.reserve(validation_windows.size());
        for (const auto& w : validation_windows) {
            val_errors.push_back(det.reconstruction_error(w));
            val_truth.push_back(w.state_label == data::IntakeState::Eating);
        }

        for (double p : percentiles) {
            const double tau = nearest_rank_percentile(cal_errors, p);
            int64_t correct = 0;
            for (size_t i = 0; i < val_errors.size(); ++i)
                if ((val_errors[i] <= tau) == static_cast<bool>(val_truth[i])) ++correct;
            GridCell cell;
            cell.ratio = ratios[ri];
            cell.percentile = p;
            cell.accuracy = static_cast<double>(correct) / static_cast<double>(val_errors.size());
            result.grid.push_back(cell);
        }
    }

    result.ranked = result.grid;
    std::stable_sort(result.ranked.begin(), result.ranked.end(), [](const GridCell& a, const GridCell& b) {
        if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
        if (a.ratio != b.ratio) return a.ratio < b.ratio;
        return a.percentile < b.percentile;
    });
    if (top_k > 0 && result.ranked.size() > static_cast<size_t>(top_k))
        result.ranked.resize(static_cast<size_t>(top_k));
    return result;
}

void write_gridsearch_csv(const SearchResult& result, const std::filesystem::path& path) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f << "ratio,percentile,accuracy\n";
        char buf[64];
        for (const auto& cell : result.grid) {
            auto fmt = [&](double v) {
                auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
                (void)ec;
                return std::string(buf, p);
            };
            f << fmt(cell.ratio) << ',' << fmt(cell.percentile) << ',' << fmt(cell.accuracy) << '\n';
        }
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace csense::detector
