#pragma once

#include <vector>

#include "csense/imu_data.hpp"
#include "csense/tensor.hpp"

namespace csense::detector {

// Per-channel standardization statistics of the fused 12-channel input,
// computed on the training set and stored in every checkpoint.
struct ChannelStats {
    std::vector<float> mean;  // size 12
    std::vector<float> stddev;

    bool valid() const { return mean.size() == 12 && stddev.size() == 12; }
};

// Fuses one window into a [12, seq_len] tensor: channels 0-5 are the watch
// columns at native rate, channels 6-11 the glasses columns linearly
// upsampled from 25 to seq_len rows. With stats, each channel is
// standardized to (x - mean) / stddev.
nn::Tensor fuse_window(const data::WindowPair& w, const ChannelStats* stats = nullptr,
                       int seq_len = data::kWatchRows);

ChannelStats compute_channel_stats(const std::vector<data::WindowPair>& windows,
                                   int seq_len = data::kWatchRows);

// Masks round(ratio * seq_len) timesteps with disjoint contiguous segments
// of segment_len (the final segment truncated to hit the count exactly),
// zeroing all channels at the chosen timesteps. Deterministic in the seed.
struct MaskedWindow {
    nn::Tensor x;               // input with masked timesteps zeroed
    std::vector<uint8_t> mask;  // 1 = masked, size seq_len
};

MaskedWindow mask_window(const nn::Tensor& x, double ratio, int segment_len, uint64_t seed);

}  // namespace csense::detector
