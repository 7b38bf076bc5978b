#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "csense/imu_data.hpp"

namespace csense::synth {

// One eating-gesture class: a per-channel harmonic series at base_freq with
// fixed per-channel phases, plus Gaussian noise.
struct GestureSpec {
    int class_id = 0;  // in [0, 11)
    double base_freq = 1.0;
    std::array<double, 6> amp{};
    int harmonics = 0;
    double harmonic_decay = 0.5;  // in (0, 1]
    double noise_sigma = 0.0;
    double duration = 1.0;
};

enum class DistractorKind { Idle, Jitter, GestureBurst };

struct DistractorSpec {
    DistractorKind kind = DistractorKind::Jitter;
    double intensity = 1.0;
    double duration = 1.0;
};

using SegmentSpec = std::variant<GestureSpec, DistractorSpec>;

// Deterministic session synthesis: watch at 50 Hz, glasses at 10 Hz carrying
// the same clean pattern attenuated by 0.3 plus independent noise. One label
// per segment. Identical (specs, seed) gives bit-identical output.
data::Session generate_session(const std::vector<SegmentSpec>& specs, uint64_t seed);

// The class parameter table used by generate_dataset (exposed so tests can
// build single-class sessions with the exact same waveforms).
GestureSpec class_gesture(int class_id, double duration);

struct DatasetParams {
    int class_count = 5;   // 2..11
    int subjects = 4;      // >= 2
    double minutes_per_class = 1.0;
    uint64_t seed = 42;
};

struct DatasetResult {
    std::vector<data::ManifestEntry> entries;
    std::filesystem::path manifest_path;
    double oracle_accuracy = 0.0;  // separability certificate
    int64_t eating_windows = 0;
    int64_t noneating_windows = 0;
};

// Writes one session per (subject, class) with interleaved distractors, the
// manifest, and a fixture_info.json sidecar recording the nearest-centroid
// spectral oracle accuracy over all eating windows.
DatasetResult generate_dataset(const DatasetParams& params, const std::filesystem::path& out_dir);

// Spectral oracle: per-channel DFT magnitudes (bins 1..16 of the 128-row
// watch matrix) normalized to unit length.
std::vector<double> spectral_feature(const data::WindowPair& w);

// Fits per-class centroids on the given eating windows and reports the
// resubstitution accuracy of nearest-centroid classification.
double nearest_centroid_accuracy(const std::vector<data::WindowPair>& eating_windows);

}  // namespace csense::synth
