#include "csense/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace csense::pipeline {

namespace {

std::string fmt(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

void write_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc | std::ios::binary);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f << content;
        if (!f) throw IoError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

int argmax_lowest(const std::vector<float>& probs) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(probs.size()); ++i)
        if (probs[static_cast<size_t>(i)] > probs[static_cast<size_t>(best)]) best = i;
    return best;
}

}  // namespace

int true_label(const data::WindowPair& w) {
    if (w.state_label == data::IntakeState::NonEating) return kNonEatingLabel;
    if (!w.food_label) throw Error("eating window without food label in test set");
    return *w.food_label;
}

TwoStagePipeline::TwoStagePipeline(detector::EatingDetector det, classifier::FoodClassifier cls)
    : detector_(std::move(det)), classifier_(std::move(cls)) {
    if (!detector_.calibration())
        throw ConfigError("pipeline: detector checkpoint has no calibration (missing calibration.tau)");
    const auto& dcfg = detector_.config();
    const auto& ccfg = classifier_.config();
    if (dcfg.in_channels != ccfg.in_channels || dcfg.seq_len != ccfg.seq_len)
        throw ConfigError("pipeline: detector and classifier disagree on in_channels/seq_len");
}

int TwoStagePipeline::run_two_stage(const data::WindowPair& w) const {
    if (detector_.detect(w) == data::IntakeState::NonEating) return kNonEatingLabel;
    return argmax_lowest(classifier_.classify(w));
}

EvalReport evaluate(const TwoStagePipeline& pipeline, const std::vector<data::WindowPair>& test) {
    if (test.empty()) throw EmptyTestSet("evaluate needs at least one window");
    EvalReport report;
    int64_t correct = 0, stage1_correct = 0;
    for (const auto& w : test) {
        const int truth = true_label(w);
        const int pred = pipeline.run_two_stage(w);
        report.confusion[static_cast<size_t>(truth)][static_cast<size_t>(pred)]++;
        if (truth == pred) ++correct;
        if ((truth == kNonEatingLabel) == (pred == kNonEatingLabel)) ++stage1_correct;
    }
    const auto n = static_cast<double>(test.size());
    report.overall_accuracy = static_cast<double>(correct) / n;
    report.stage1_accuracy = static_cast<double>(stage1_correct) / n;

    report.label_names.clear();
    const auto& names = pipeline.classifier().class_names();
    for (int i = 0; i < kNonEatingLabel; ++i) {
        if (i < static_cast<int>(names.size()))
            report.label_names.push_back(names[static_cast<size_t>(i)]);
        else
            report.label_names.push_back("class-" + std::to_string(i));
    }
    report.label_names.push_back("non-eating");

    for (int i = 0; i < kLabelCount; ++i) {
        PerClassMetrics m;
        m.name = report.label_names[static_cast<size_t>(i)];
        int64_t row_sum = 0, col_sum = 0;
        for (int j = 0; j < kLabelCount; ++j) {
            row_sum += report.confusion[static_cast<size_t>(i)][static_cast<size_t>(j)];
            col_sum += report.confusion[static_cast<size_t>(j)][static_cast<size_t>(i)];
        }
        const auto diag = report.confusion[static_cast<size_t>(i)][static_cast<size_t>(i)];
        m.recall = row_sum ? static_cast<double>(diag) / static_cast<double>(row_sum) : 0.0;
        m.precision = col_sum ? static_cast<double>(diag) / static_cast<double>(col_sum) : 0.0;
        report.per_class.push_back(std::move(m));
    }
    return report;
}

std::vector<AblationRow> ablate_single_stage(const classifier::FoodClassifier& cls,
                                             const std::vector<data::WindowPair>& test,
                                             const std::vector<double>& thresholds) {
    if (test.empty()) throw EmptyTestSet("ablation needs at least one window");
    // classify once per window, reuse across thresholds
    std::vector<int> truths;
    std::vector<int> argmaxes;
    std::vector<double> maxprobs;
    truths.reserve(test.size());
    for (const auto& w : test) {
        truths.push_back(true_label(w));
        auto probs = cls.classify(w);
        const int am = argmax_lowest(probs);
        argmaxes.push_back(am);
        maxprobs.push_back(static_cast<double>(probs[static_cast<size_t>(am)]));
    }
    std::vector<AblationRow> rows;
    for (double cst : thresholds) {
        int64_t correct = 0;
        for (size_t i = 0; i < test.size(); ++i) {
            const int pred = maxprobs[i] < cst ? kNonEatingLabel : argmaxes[i];
            if (pred == truths[i]) ++correct;
        }
        rows.push_back({cst, static_cast<double>(correct) / static_cast<double>(test.size())});
    }
    return rows;
}

LatencyStats measure_latency(const TwoStagePipeline& pipeline, const data::WindowPair& w,
                             int trials, int warmup) {
    if (trials < 2) throw Error("latency: need at least 2 trials");
    for (int i = 0; i < warmup; ++i) (void)pipeline.run_two_stage(w);
    std::vector<double> ms(static_cast<size_t>(trials));
    for (int i = 0; i < trials; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        volatile int label = pipeline.run_two_stage(w);
        (void)label;
        const auto t1 = std::chrono::steady_clock::now();
        ms[static_cast<size_t>(i)] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }
    LatencyStats stats;
    stats.trials = trials;
    double sum = 0.0;
    for (double v : ms) sum += v;
    stats.mean_ms = sum / static_cast<double>(trials);
    double var = 0.0;
    for (double v : ms) var += (v - stats.mean_ms) * (v - stats.mean_ms);
    stats.std_ms = std::sqrt(var / static_cast<double>(trials - 1));  // sample std
    std::sort(ms.begin(), ms.end());
    const auto rank = static_cast<size_t>(
        std::clamp<int64_t>(static_cast<int64_t>(std::ceil(0.95 * trials)) - 1, 0, trials - 1));
    stats.p95_ms = ms[rank];
    return stats;
}

void export_report(const EvalReport& report, const std::filesystem::path& out_dir,
                   const std::vector<AblationRow>* ablation, const detector::SearchResult* grid) {
    std::filesystem::create_directories(out_dir);

    nlohmann::ordered_json j;
    j["overall_accuracy"] = report.overall_accuracy;
    j["stage1_accuracy"] = report.stage1_accuracy;
    j["per_class"] = nlohmann::ordered_json::array();
    for (const auto& m : report.per_class)
        j["per_class"].push_back(
            {{"name", m.name}, {"precision", m.precision}, {"recall", m.recall}});
    j["latency_ms"] = {{"mean", report.latency.mean_ms},
                       {"std", report.latency.std_ms},
                       {"p95", report.latency.p95_ms}};
    write_atomic(out_dir / "metrics.json", j.dump(2) + "\n");

    std::string csv = "true\\pred";
    for (const auto& name : report.label_names) csv += "," + name;
    csv += "\n";
    for (int i = 0; i < kLabelCount; ++i) {
        csv += report.label_names[static_cast<size_t>(i)];
        for (int jj = 0; jj < kLabelCount; ++jj)
            csv += "," + std::to_string(report.confusion[static_cast<size_t>(i)][static_cast<size_t>(jj)]);
        csv += "\n";
    }
    write_atomic(out_dir / "confusion.csv", csv);

    if (ablation) {
        std::string acsv = "cst,accuracy\n";
        for (const auto& row : *ablation) acsv += fmt(row.cst) + "," + fmt(row.accuracy) + "\n";
        write_atomic(out_dir / "ablation.csv", acsv);
    }
    if (grid) detector::write_gridsearch_csv(*grid, out_dir / "gridsearch.csv");
}

}  // namespace csense::pipeline
