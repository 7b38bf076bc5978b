#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "csense/classifier.hpp"
#include "csense/detector.hpp"

namespace csense::pipeline {

struct EmptyTestSet : Error {
    explicit EmptyTestSet(const std::string& what) : Error("empty test set: " + what) {}
};

// Label space of the combined task: food ids 0..10, NonEating = 11.
inline constexpr int kNonEatingLabel = 11;
inline constexpr int kLabelCount = 12;

int true_label(const data::WindowPair& w);

// Stage-one gate followed by the food classifier.
class TwoStagePipeline {
public:
    TwoStagePipeline(detector::EatingDetector det, classifier::FoodClassifier cls);

    // NonEating when the detector rejects the window; otherwise the argmax
    // food class (ties broken toward the lowest class id).
    int run_two_stage(const data::WindowPair& w) const;

    const detector::EatingDetector& detector() const { return detector_; }
    const classifier::FoodClassifier& classifier() const { return classifier_; }

private:
    detector::EatingDetector detector_;
    classifier::FoodClassifier classifier_;
};

struct LatencyStats {
    double mean_ms = 0.0;
    double std_ms = 0.0;
    double p95_ms = 0.0;
    int64_t trials = 0;
};

struct PerClassMetrics {
    std::string name;
    double precision = 0.0;
    double recall = 0.0;
};

struct EvalReport {
    double overall_accuracy = 0.0;
    double stage1_accuracy = 0.0;
    std::array<std::array<int64_t, kLabelCount>, kLabelCount> confusion{};  // [true][pred]
    std::vector<PerClassMetrics> per_class;                                 // 12 rows
    std::vector<std::string> label_names;                                   // 12 names
    LatencyStats latency;
};

EvalReport evaluate(const TwoStagePipeline& pipeline, const std::vector<data::WindowPair>& test);

// Single-stage ablation: the classifier runs on every window and a window is
// NonEating when its max class probability falls below the threshold.
struct AblationRow {
    double cst = 0.0;
    double accuracy = 0.0;
};

std::vector<AblationRow> ablate_single_stage(const classifier::FoodClassifier& cls,
                                             const std::vector<data::WindowPair>& test,
                                             const std::vector<double>& thresholds = {
                                                 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});

// Wall-clock per full two-stage inference, single-threaded, after warmup.
LatencyStats measure_latency(const TwoStagePipeline& pipeline, const data::WindowPair& w,
                             int trials = 100, int warmup = 10);

// Writes metrics.json and confusion.csv, plus ablation.csv / gridsearch.csv
// when present. All writes are temp-then-rename.
void export_report(const EvalReport& report, const std::filesystem::path& out_dir,
                   const std::vector<AblationRow>* ablation = nullptr,
                   const detector::SearchResult* grid = nullptr);

}  // namespace csense::pipeline
