#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "csense/pipeline.hpp"
#include "csense/synth.hpp"

using namespace csense;
using namespace csense::pipeline;
using csense::data::IntakeState;
using csense::data::WindowPair;

namespace {

nn::UNetConfig small_unet() {
    nn::UNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    return cfg;
}

nn::SwinConfig small_swin(int classes = 5) {
    nn::SwinConfig cfg;
    cfg.embed_dim = 24;
    cfg.stage_heads = {3, 6};
    cfg.num_classes = classes;
    return cfg;
}

detector::ChannelStats unit_stats() {
    detector::ChannelStats s;
    s.mean.assign(12, 0.0f);
    s.stddev.assign(12, 1.0f);
    return s;
}

std::vector<WindowPair> fixture_windows(int count, uint64_t seed, bool eating) {
    std::vector<WindowPair> out;
    uint64_t session_seed = seed;
    int cls = 0;
    while (static_cast<int>(out.size()) < count) {
        synth::SegmentSpec spec =
            eating ? synth::SegmentSpec(synth::class_gesture(cls % 5, 20.0))
                   : synth::SegmentSpec(synth::DistractorSpec{synth::DistractorKind::Jitter, 1.0, 20.0});
        auto session = synth::generate_session({spec}, session_seed++);
        for (auto& w : data::segment(session)) {
            if (static_cast<int>(out.size()) >= count) break;
            out.push_back(std::move(w));
        }
        ++cls;
    }
    return out;
}

// detector with a hand-set threshold so stage-1 behavior is controllable
detector::EatingDetector gate_detector(double tau) {
    detector::EatingDetector det(small_unet(), 5);
    det.set_channel_stats(unit_stats());
    detector::ThresholdCalibration cal;
    cal.percentile = 80.0;
    cal.tau = tau;
    cal.calibration_size = 10;
    det.set_calibration(cal);
    return det;
}

classifier::FoodClassifier zeroed_classifier(int classes = 5) {
    classifier::FoodClassifier cls(small_swin(classes), 7);
    cls.set_channel_stats(unit_stats());
    for (auto& [name, p] : cls.model().named_params())
        for (auto& v : p->value.data) v = 0.0f;
    return cls;
}

}  // namespace

TEST_CASE("stage-1 gate: rejected windows never reach the classifier") {
    TwoStagePipeline pipe(gate_detector(-1.0), zeroed_classifier());
    auto windows = fixture_windows(4, 11, true);
    for (const auto& w : windows) CHECK(pipe.run_two_stage(w) == kNonEatingLabel);
}

TEST_CASE("stage-1 pass-through: label is the classifier argmax, ties to lowest id") {
    // zeroed classifier emits exact uniform probabilities: an all-way tie
    TwoStagePipeline pipe(gate_detector(1e30), zeroed_classifier());
    auto windows = fixture_windows(4, 13, true);
    for (const auto& w : windows) CHECK(pipe.run_two_stage(w) == 0);
}

TEST_CASE("pipeline requires a calibrated detector") {
    detector::EatingDetector det(small_unet(), 5);
    det.set_channel_stats(unit_stats());
    CHECK_THROWS_AS(TwoStagePipeline(std::move(det), zeroed_classifier()), ConfigError);
}

TEST_CASE("evaluate: degenerate all-reject predictor on an all-eating set") {
    TwoStagePipeline pipe(gate_detector(-1.0), zeroed_classifier());
    auto windows = fixture_windows(12, 17, true);
    for (auto& w : windows) w.food_label = 2;
    auto report = evaluate(pipe, windows);
    CHECK(report.overall_accuracy == 0.0);
    CHECK(report.stage1_accuracy == 0.0);
    // all mass in the (true=2, pred=NonEating) cell
    CHECK(report.confusion[2][kNonEatingLabel] == 12);
    int64_t total = 0;
    for (const auto& row : report.confusion)
        for (int64_t v : row) total += v;
    CHECK(total == 12);
    CHECK(report.per_class[2].recall == 0.0);
}

TEST_CASE("evaluate: all-accept gate with uniform classifier on class 0") {
    TwoStagePipeline pipe(gate_detector(1e30), zeroed_classifier());
    auto windows = fixture_windows(10, 19, true);
    for (auto& w : windows) w.food_label = 0;
    auto report = evaluate(pipe, windows);
    CHECK(report.overall_accuracy == 1.0);  // tie-break lands on class 0
    CHECK(report.stage1_accuracy == 1.0);
    CHECK(report.confusion[0][0] == 10);
    CHECK(report.per_class[0].recall == 1.0);
    CHECK(report.per_class[0].precision == 1.0);
    CHECK_THROWS_AS(evaluate(pipe, {}), EmptyTestSet);
}

TEST_CASE("confusion matrix conserves the test set size") {
    TwoStagePipeline pipe(gate_detector(1e-9), zeroed_classifier());
    auto eat = fixture_windows(9, 23, true);
    auto noneat = fixture_windows(7, 29, false);
    std::vector<WindowPair> all(eat);
    all.insert(all.end(), noneat.begin(), noneat.end());
    auto report = evaluate(pipe, all);
    int64_t total = 0;
    for (int i = 0; i < kLabelCount; ++i) {
        int64_t row = 0;
        for (int j = 0; j < kLabelCount; ++j) row += report.confusion[size_t(i)][size_t(j)];
        total += row;
    }
    CHECK(total == static_cast<int64_t>(all.size()));
}

TEST_CASE("single-stage ablation boundaries and monotonicity") {
    auto cls = zeroed_classifier(5);  // uniform probs: max prob = 1/5 everywhere
    auto eat = fixture_windows(8, 31, true);
    for (auto& w : eat) w.food_label = 0;
    auto noneat = fixture_windows(8, 37, false);
    std::vector<WindowPair> all(eat);
    all.insert(all.end(), noneat.begin(), noneat.end());

    // CST = 0: nothing is ever below threshold, nothing labeled NonEating
    auto rows = ablate_single_stage(cls, all, {0.0, 0.1, 0.19, 0.21, 0.5, 1.01});
    CHECK(rows[0].accuracy == doctest::Approx(0.5));   // eating half right (tie->0)
    CHECK(rows[1].accuracy == doctest::Approx(0.5));   // 1/5 >= 0.1 still
    CHECK(rows[2].accuracy == doctest::Approx(0.5));
    // CST above 1/5: everything NonEating; only the non-eating half is right
    CHECK(rows[3].accuracy == doctest::Approx(0.5));
    CHECK(rows[5].accuracy == doctest::Approx(0.5));

    // non-eating prediction count is nondecreasing in CST
    std::vector<double> csts{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.01};
    int64_t prev = -1;
    for (double cst : csts) {
        int64_t noneat_count = 0;
        for (const auto& w : all) {
            auto probs = cls.classify(w);
            float mx = *std::max_element(probs.begin(), probs.end());
            if (mx < cst) ++noneat_count;
        }
        CHECK(noneat_count >= prev);
        prev = noneat_count;
    }
}

TEST_CASE("latency measurement reports sane sample statistics") {
    TwoStagePipeline pipe(gate_detector(1e30), zeroed_classifier());
    auto w = fixture_windows(1, 41, true)[0];
    auto stats = measure_latency(pipe, w, 30, 3);
    CHECK(stats.trials == 30);
    CHECK(stats.mean_ms > 0.0);
    CHECK(stats.std_ms >= 0.0);
    CHECK(stats.p95_ms >= stats.mean_ms * 0.2);
    // timing varies between runs, labels must not
    const int l1 = pipe.run_two_stage(w);
    const int l2 = pipe.run_two_stage(w);
    CHECK(l1 == l2);
}

TEST_CASE("export_report writes parseable artifacts and overwrites atomically") {
    TwoStagePipeline pipe(gate_detector(1e30), zeroed_classifier());
    auto eat = fixture_windows(6, 43, true);
    for (auto& w : eat) w.food_label = 1;
    auto report = evaluate(pipe, eat);
    report.latency = {1.5, 0.1, 1.8, 50};

    const auto dir = std::filesystem::temp_directory_path() / "csense_report_test";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    // pre-existing junk must be replaced
    {
        std::ofstream f(dir / "metrics.json");
        f << "junk";
    }
    std::vector<AblationRow> ablation{{0.1, 0.5}, {0.9, 0.25}};
    export_report(report, dir, &ablation);

    std::ifstream mf(dir / "metrics.json");
    nlohmann::json metrics;
    mf >> metrics;
    CHECK(metrics.at("overall_accuracy").get<double>() == 0.0);  // uniform tie -> class 0, truth 1
    CHECK(metrics.at("latency_ms").at("mean").get<double>() == 1.5);
    CHECK(metrics.at("per_class").size() == 12);

    // confusion.csv row sums equal per-class counts
    std::ifstream cf(dir / "confusion.csv");
    std::string line;
    std::getline(cf, line);  // header
    int64_t total = 0;
    int rows = 0;
    while (std::getline(cf, line)) {
        ++rows;
        size_t pos = line.find(',');
        int64_t row_sum = 0;
        while (pos != std::string::npos) {
            size_t next = line.find(',', pos + 1);
            row_sum += std::stoll(line.substr(pos + 1, next - pos - 1));
            pos = next;
        }
        total += row_sum;
    }
    CHECK(rows == 12);
    CHECK(total == 6);

    CHECK(std::filesystem::exists(dir / "ablation.csv"));
    CHECK(!std::filesystem::exists(dir / "metrics.json.tmp"));

    // byte-identical on re-export
    auto read_all = [](const std::filesystem::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    const std::string before = read_all(dir / "metrics.json");
    export_report(report, dir, &ablation);
    CHECK(read_all(dir / "metrics.json") == before);
}
