#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csense/common.hpp"
#include "csense/tensor.hpp"

namespace csense::data {

// -- errors -----------------------------------------------------------------

struct MalformedRow : Error {
    MalformedRow(const std::string& file, size_t line, const std::string& detail)
        : Error(file + ":" + std::to_string(line) + ": malformed row: " + detail) {}
};

struct NonMonotonicTime : Error {
    NonMonotonicTime(const std::string& file, size_t line)
        : Error(file + ":" + std::to_string(line) + ": timestamps must be strictly increasing") {}
};

struct OverlappingLabels : Error {
    OverlappingLabels(size_t i, size_t j)
        : Error("label intervals " + std::to_string(i) + " and " + std::to_string(j) + " overlap") {}
};

struct InvalidSession : Error {
    explicit InvalidSession(const std::string& what) : Error("invalid session: " + what) {}
};

struct OutOfRange : Error {
    explicit OutOfRange(const std::string& what) : Error("resample out of range: " + what) {}
};

struct SessionTooShort : Error {
    explicit SessionTooShort(const std::string& what) : Error("session too short: " + what) {}
};

// -- domain types -------------------------------------------------------------

// One timestamped 6-axis inertial reading: accel in m/s^2, gyro in rad/s.
struct ImuSample {
    double t = 0.0;
    std::array<double, 3> accel{};
    std::array<double, 3> gyro{};

    double channel(int c) const { return c < 3 ? accel[static_cast<size_t>(c)] : gyro[static_cast<size_t>(c - 3)]; }
    double& channel(int c) { return c < 3 ? accel[static_cast<size_t>(c)] : gyro[static_cast<size_t>(c - 3)]; }
};

enum class Device { Watch, Glasses };

struct SensorStream {
    Device device = Device::Watch;
    double nominal_rate = 50.0;  // Hz
    std::vector<ImuSample> samples;

    double start_time() const { return samples.front().t; }
    double end_time() const { return samples.back().t; }
};

enum class IntakeState { Eating, NonEating };

struct LabelInterval {
    double start = 0.0;
    double end = 0.0;
    IntakeState state = IntakeState::NonEating;
    std::optional<int> food;  // present iff state == Eating, id in [0, 11)
};

enum class Utensil { Chopsticks, Spoon, Hand };

struct Session {
    std::string subject_id;
    Utensil utensil = Utensil::Chopsticks;
    SensorStream watch;
    SensorStream glasses;
    std::vector<LabelInterval> labels;
};

// One synchronized model input: 2.56 s of watch data resampled to 128 rows
// and glasses data resampled to 25 rows, six channels each.
struct WindowPair {
    double start_t = 0.0;
    nn::Tensor watch_mat;    // [128, 6]
    nn::Tensor glasses_mat;  // [25, 6]
    IntakeState state_label = IntakeState::NonEating;
    std::optional<int> food_label;
};

inline constexpr int kWatchRows = 128;
inline constexpr int kGlassesRows = 25;
inline constexpr double kWindowLen = 2.56;
inline constexpr double kWindowHop = 1.28;

// -- operations ----------------------------------------------------------------

// Parses one session from its three CSV files (schemas in the README).
Session parse_session(const std::filesystem::path& watch_path,
                      const std::filesystem::path& glasses_path,
                      const std::filesystem::path& labels_path, const std::string& subject_id,
                      Utensil utensil);

// As above but with an empty label list (used for inference on raw recordings).
Session parse_session_unlabeled(const std::filesystem::path& watch_path,
                                const std::filesystem::path& glasses_path,
                                const std::string& subject_id, Utensil utensil);

// Writes the session back out in the same CSV formats.
void write_session_csv(const SensorStream& stream, const std::filesystem::path& path);
void write_labels_csv(const std::vector<LabelInterval>& labels, const std::filesystem::path& path);

// Per-channel linear interpolation of the stream onto the grid
// t0 + k/rate, k in [0, n). Sample values are reproduced exactly when a
// query time coincides with a sample time.
nn::TensorT<double> resample(const SensorStream& stream, double t0, double rate, int64_t n);

// Slides a window of window_len seconds with the given hop over the span
// covered by both streams and assembles WindowPairs. A window is Eating when
// strictly more than half of its span lies inside Eating intervals (an exact
// half-overlap tie counts as NonEating); the food label comes from the
// Eating interval with the largest overlap, earlier interval on ties.
std::vector<WindowPair> segment(const Session& session, double window_len = kWindowLen,
                                double hop = kWindowHop);

// Windows of one subject (or one independent recording of a subject), in
// time order, for the train/test split.
struct SubjectWindows {
    std::string subject_id;
    std::vector<WindowPair> windows;
};

struct SplitResult {
    std::vector<WindowPair> train;
    std::vector<WindowPair> test;
};

// For every group, the contiguous middle round(n * test_fraction) windows go
// to test and the remainder to train.
SplitResult split_subject_independent(const std::vector<SubjectWindows>& groups,
                                      double test_fraction);

// -- manifest -------------------------------------------------------------------

struct ManifestEntry {
    std::string subject_id;
    Utensil utensil = Utensil::Chopsticks;
    std::filesystem::path watch_csv;
    std::filesystem::path glasses_csv;
    std::filesystem::path labels_csv;
};

// Manifest is a JSON array of entries; relative paths are resolved against
// the manifest's directory.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path);

std::string utensil_name(Utensil u);
Utensil utensil_from_name(const std::string& name);

}  // namespace csense::data
