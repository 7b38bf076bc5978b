// csense command-line frontend: synthesis, training, calibration, search,
// evaluation, ablation, inference, latency and gradient checking.

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csense/classifier.hpp"
#include "csense/detector.hpp"
#include "csense/gradcheck_battery.hpp"
#include "csense/pipeline.hpp"
#include "csense/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

std::string hash_hex(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

uint64_t file_hash(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw csense::IoError("cannot hash " + p.string());
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return csense::fnv1a64(bytes);
}

// Every command records its resolved configuration, seed and output hashes.
void write_run_json(const fs::path& out_dir, const std::string& command,
                    const ordered_json& options, std::optional<uint64_t> seed,
                    const std::vector<fs::path>& outputs) {
    ordered_json j;
    j["command"] = command;
    if (seed) j["seed"] = *seed;
    j["options"] = options;
    j["outputs"] = ordered_json::object();
    for (const auto& p : outputs)
        if (fs::exists(p)) j["outputs"][p.generic_string()] = hash_hex(file_hash(p));
    fs::create_directories(out_dir);
    auto tmp = out_dir / "run.json.tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw csense::IoError("cannot write run.json");
        f << j.dump(2) << '\n';
    }
    fs::rename(tmp, out_dir / "run.json");
}

struct Dataset {
    std::vector<csense::data::SubjectWindows> groups;  // one per manifest entry
    std::vector<csense::data::WindowPair> all;
};

Dataset load_dataset(const fs::path& manifest) {
    auto entries = csense::data::load_manifest(manifest);
    if (entries.empty()) throw csense::ConfigError("manifest " + manifest.string() + " is empty");
    Dataset ds;
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        auto session = csense::data::parse_session(e.watch_csv, e.glasses_csv, e.labels_csv,
                                                   e.subject_id, e.utensil);
        csense::data::SubjectWindows g;
        g.subject_id = e.subject_id + "/" + std::to_string(i);
        g.windows = csense::data::segment(session);
        ds.all.insert(ds.all.end(), g.windows.begin(), g.windows.end());
        ds.groups.push_back(std::move(g));
    }
    return ds;
}

std::vector<csense::data::WindowPair> eating_only(const std::vector<csense::data::WindowPair>& ws) {
    std::vector<csense::data::WindowPair> out;
    for (const auto& w : ws)
        if (w.state_label == csense::data::IntakeState::Eating) out.push_back(w);
    return out;
}

void write_loss_csv(const std::vector<double>& losses, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw csense::IoError("cannot write " + path.string());
    f << "epoch,loss\n";
    char buf[64];
    for (size_t i = 0; i < losses.size(); ++i) {
        auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), losses[i]);
        (void)ec;
        f << i << ',' << std::string(buf, p) << '\n';
    }
}

int infer_num_classes(const std::vector<csense::data::WindowPair>& ws) {
    int max_label = -1;
    for (const auto& w : ws)
        if (w.food_label) max_label = std::max(max_label, *w.food_label);
    if (max_label < 1) throw csense::ConfigError("cannot infer class count from labels");
    return max_label + 1;
}

void write_text_atomic(const fs::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw csense::IoError("cannot write " + path.string());
        f << content;
    }
    fs::rename(tmp, path);
}

std::string fmt_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"csense: two-stage food-intake detection from wearable IMU streams"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a key=value config file");
    bool help_config = false;
    app.add_flag("--help-config", help_config, "print the config-file schema and exit");

    // ---- synth ----
    struct {
        int classes = 5;
        int subjects = 4;
        double minutes = 1.0;
        uint64_t seed = 0;
        std::string out_dir;
    } synth_opts;
    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled dataset");
    synth->add_option("--classes", synth_opts.classes, "gesture classes (2-11)")->capture_default_str();
    synth->add_option("--subjects", synth_opts.subjects, "synthetic subjects")->capture_default_str();
    synth->add_option("--minutes", synth_opts.minutes, "eating minutes per class per subject")
        ->capture_default_str();
    synth->add_option("--seed", synth_opts.seed, "generator seed")->required();
    synth->add_option("--out-dir", synth_opts.out_dir, "output directory")->required();

    // ---- train-detector ----
    struct {
        std::string manifest, out_dir;
        uint64_t seed = 0;
        int epochs = 100, batch = 16;
        double lr = 1e-4;
        double mask_ratio = 0.15;
        int segment_len = 8;
        int base_channels = 32, depth = 3;
        double test_fraction = 0.2;
        int mask_seeds = 1;
        bool full_signal_mse = false;
    } det_args;
    auto* traind = app.add_subcommand("train-detector", "train the stage-one reconstructor");
    traind->add_option("--manifest", det_args.manifest, "dataset manifest")->required();
    traind->add_option("--out-dir", det_args.out_dir, "output directory")->required();
    traind->add_option("--seed", det_args.seed, "training seed")->required();
    traind->add_option("--epochs", det_args.epochs)->capture_default_str();
    traind->add_option("--batch", det_args.batch)->capture_default_str();
    traind->add_option("--lr", det_args.lr)->capture_default_str();
    traind->add_option("--mask-ratio", det_args.mask_ratio)->capture_default_str();
    traind->add_option("--segment-len", det_args.segment_len, "mask segment length")
        ->capture_default_str();
    traind->add_option("--base-channels", det_args.base_channels)->capture_default_str();
    traind->add_option("--depth", det_args.depth)->capture_default_str();
    traind->add_option("--test-fraction", det_args.test_fraction)->capture_default_str();
    traind->add_option("--mask-seeds", det_args.mask_seeds, "masks averaged per score (1 = fixed)")
        ->capture_default_str();
    traind->add_flag("--full-signal-mse", det_args.full_signal_mse,
                     "score on the whole window instead of masked positions");

    // ---- calibrate ----
    struct {
        std::string manifest, detector, out;
        double percentile = 80.0;
        double test_fraction = 0.2;
        int mask_seeds = 0;  // 0 = keep checkpoint policy
    } cal_args;
    auto* calibrate = app.add_subcommand("calibrate", "set the detection threshold");
    calibrate->add_option("--manifest", cal_args.manifest)->required();
    calibrate->add_option("--detector", cal_args.detector, "trained detector checkpoint")->required();
    calibrate->add_option("--out", cal_args.out, "calibrated checkpoint path")->required();
    calibrate->add_option("--percentile", cal_args.percentile)->capture_default_str();
    calibrate->add_option("--test-fraction", cal_args.test_fraction)->capture_default_str();
    calibrate->add_option("--mask-seeds", cal_args.mask_seeds, "override mask policy (0 keeps)")
        ->capture_default_str();

    // ---- search ----
    struct {
        std::string manifest, out_dir;
        uint64_t seed = 0;
        std::vector<double> ratios{0.1, 0.15, 0.2};
        std::vector<double> percentiles{70, 80, 90};
        int epochs = 8, batch = 16, top_k = 20;
        double lr = 1e-4;
        double test_fraction = 0.2, val_fraction = 0.25;
        int base_channels = 32, depth = 3, segment_len = 8;
    } search_args;
    auto* search = app.add_subcommand("search", "mask-ratio x percentile grid search");
    search->add_option("--manifest", search_args.manifest)->required();
    search->add_option("--out-dir", search_args.out_dir)->required();
    search->add_option("--seed", search_args.seed)->required();
    search->add_option("--ratios", search_args.ratios)->delimiter(',')->capture_default_str();
    search->add_option("--percentiles", search_args.percentiles)
        ->delimiter(',')
        ->capture_default_str();
    search->add_option("--epochs", search_args.epochs)->capture_default_str();
    search->add_option("--batch", search_args.batch)->capture_default_str();
    search->add_option("--lr", search_args.lr)->capture_default_str();
    search->add_option("--top-k", search_args.top_k)->capture_default_str();
    search->add_option("--test-fraction", search_args.test_fraction)->capture_default_str();
    search->add_option("--val-fraction", search_args.val_fraction,
                       "validation share carved from the train split")
        ->capture_default_str();
    search->add_option("--base-channels", search_args.base_channels)->capture_default_str();
    search->add_option("--depth", search_args.depth)->capture_default_str();
    search->add_option("--segment-len", search_args.segment_len)->capture_default_str();

    // ---- train-classifier ----
    struct {
        std::string manifest, out_dir;
        uint64_t seed = 0;
        int epochs = 100, batch = 16;
        double lr = 1e-4;
        int num_classes = 0;  // 0 = infer from labels
        int embed_dim = 48, patch_size = 4, window_size = 8, mlp_ratio = 4;
        std::vector<int> depths{2, 2}, heads{3, 6};
        double test_fraction = 0.2;
    } cls_args;
    auto* trainc = app.add_subcommand("train-classifier", "train the stage-two food classifier");
    trainc->add_option("--manifest", cls_args.manifest)->required();
    trainc->add_option("--out-dir", cls_args.out_dir)->required();
    trainc->add_option("--seed", cls_args.seed)->required();
    trainc->add_option("--epochs", cls_args.epochs)->capture_default_str();
    trainc->add_option("--batch", cls_args.batch)->capture_default_str();
    trainc->add_option("--lr", cls_args.lr)->capture_default_str();
    trainc->add_option("--num-classes", cls_args.num_classes, "0 infers from the labels")
        ->capture_default_str();
    trainc->add_option("--embed-dim", cls_args.embed_dim)->capture_default_str();
    trainc->add_option("--patch-size", cls_args.patch_size)->capture_default_str();
    trainc->add_option("--window-size", cls_args.window_size)->capture_default_str();
    trainc->add_option("--mlp-ratio", cls_args.mlp_ratio)->capture_default_str();
    trainc->add_option("--depths", cls_args.depths)->delimiter(',')->capture_default_str();
    trainc->add_option("--heads", cls_args.heads)->delimiter(',')->capture_default_str();
    trainc->add_option("--test-fraction", cls_args.test_fraction)->capture_default_str();

    // ---- eval ----
    struct {
        std::string manifest, detector, classifier, out_dir;
        double test_fraction = 0.2;
        int latency_trials = 100;
    } eval_args;
    auto* eval = app.add_subcommand("eval", "evaluate the two-stage pipeline on the test split");
    eval->add_option("--manifest", eval_args.manifest)->required();
    eval->add_option("--detector", eval_args.detector, "calibrated detector checkpoint")->required();
    eval->add_option("--classifier", eval_args.classifier)->required();
    eval->add_option("--out-dir", eval_args.out_dir)->required();
    eval->add_option("--test-fraction", eval_args.test_fraction)->capture_default_str();
    eval->add_option("--latency-trials", eval_args.latency_trials)->capture_default_str();

    // ---- ablate ----
    struct {
        std::string manifest, classifier, out_dir;
        std::vector<double> thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
        double test_fraction = 0.2;
    } abl_args;
    auto* ablate = app.add_subcommand("ablate", "single-stage ablation over score thresholds");
    ablate->add_option("--manifest", abl_args.manifest)->required();
    ablate->add_option("--classifier", abl_args.classifier)->required();
    ablate->add_option("--out-dir", abl_args.out_dir)->required();
    ablate->add_option("--thresholds", abl_args.thresholds)->delimiter(',')->capture_default_str();
    ablate->add_option("--test-fraction", abl_args.test_fraction)->capture_default_str();

    // ---- infer ----
    struct {
        std::string detector, classifier, watch, glasses, labels, out_dir;
        std::string subject = "anonymous";
    } infer_args;
    auto* infer = app.add_subcommand("infer", "label every window of one recording");
    infer->add_option("--detector", infer_args.detector)->required();
    infer->add_option("--classifier", infer_args.classifier)->required();
    infer->add_option("--watch", infer_args.watch, "watch CSV")->required();
    infer->add_option("--glasses", infer_args.glasses, "glasses CSV")->required();
    infer->add_option("--labels", infer_args.labels, "optional labels CSV (not used for prediction)");
    infer->add_option("--subject", infer_args.subject)->capture_default_str();
    infer->add_option("--out-dir", infer_args.out_dir)->required();

    // ---- latency ----
    struct {
        std::string manifest, detector, classifier, out_dir;
        int trials = 200, warmup = 20;
    } lat_args;
    auto* latency = app.add_subcommand("latency", "time single-window two-stage inference");
    latency->add_option("--manifest", lat_args.manifest)->required();
    latency->add_option("--detector", lat_args.detector)->required();
    latency->add_option("--classifier", lat_args.classifier)->required();
    latency->add_option("--out-dir", lat_args.out_dir)->required();
    latency->add_option("--trials", lat_args.trials)->capture_default_str();
    latency->add_option("--warmup", lat_args.warmup)->capture_default_str();

    auto* gradcheck = app.add_subcommand("grad-check", "finite-difference check of every op");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (help_config) {
        std::cout << app.config_to_str(true, true);
        return 0;
    }

    try {
        if (synth->parsed()) {
            csense::synth::DatasetParams params;
            params.class_count = synth_opts.classes;
            params.subjects = synth_opts.subjects;
            params.minutes_per_class = synth_opts.minutes;
            params.seed = synth_opts.seed;
            const fs::path out_dir = synth_opts.out_dir;
            auto result = csense::synth::generate_dataset(params, out_dir);
            std::printf("wrote %zu sessions; %lld eating / %lld non-eating windows\n",
                        result.entries.size(), static_cast<long long>(result.eating_windows),
                        static_cast<long long>(result.noneating_windows));
            std::printf("spectral-oracle accuracy on eating windows: %.4f\n",
                        result.oracle_accuracy);
            std::vector<fs::path> outputs{result.manifest_path, out_dir / "fixture_info.json"};
            for (const auto& e : result.entries) {
                outputs.push_back(out_dir / e.watch_csv);
                outputs.push_back(out_dir / e.glasses_csv);
                outputs.push_back(out_dir / e.labels_csv);
            }
            write_run_json(out_dir, "synth",
                           {{"classes", params.class_count},
                            {"subjects", params.subjects},
                            {"minutes", params.minutes_per_class}},
                           params.seed, outputs);
        } else if (traind->parsed()) {
            auto ds = load_dataset(det_args.manifest);
            auto split = csense::data::split_subject_independent(ds.groups, det_args.test_fraction);
            auto train_eating = eating_only(split.train);
            csense::nn::UNetConfig cfg;
            cfg.base_channels = det_args.base_channels;
            cfg.depth = det_args.depth;
            cfg.mask_ratio = det_args.mask_ratio;
            cfg.mask_segment_len = det_args.segment_len;
            csense::detector::EatingDetector det(cfg, csense::derive_seed(det_args.seed, "init"));
            det.set_mask_policy({det_args.mask_seeds});
            det.set_masked_scoring(!det_args.full_signal_mse);
            csense::detector::TrainOptions topts;
            topts.epochs = det_args.epochs;
            topts.batch = det_args.batch;
            topts.lr = det_args.lr;
            topts.seed = det_args.seed;
            auto report = det.train(train_eating, topts);
            const fs::path out_dir = det_args.out_dir;
            fs::create_directories(out_dir);
            det.save(out_dir / "detector.ckpt");
            write_loss_csv(report.epoch_loss, out_dir / "train_detector_loss.csv");
            std::printf("trained on %zu eating windows; final loss %.6f\n", train_eating.size(),
                        report.epoch_loss.back());
            write_run_json(out_dir, "train-detector",
                           {{"manifest", det_args.manifest},
                            {"epochs", det_args.epochs},
                            {"batch", det_args.batch},
                            {"lr", det_args.lr},
                            {"mask_ratio", det_args.mask_ratio},
                            {"segment_len", det_args.segment_len},
                            {"base_channels", det_args.base_channels},
                            {"depth", det_args.depth},
                            {"test_fraction", det_args.test_fraction},
                            {"mask_seeds", det_args.mask_seeds},
                            {"full_signal_mse", det_args.full_signal_mse}},
                           det_args.seed,
                           {out_dir / "detector.ckpt", out_dir / "train_detector_loss.csv"});
        } else if (calibrate->parsed()) {
            auto det = csense::detector::EatingDetector::load(cal_args.detector);
            if (cal_args.mask_seeds > 0) det.set_mask_policy({cal_args.mask_seeds});
            auto ds = load_dataset(cal_args.manifest);
            auto split = csense::data::split_subject_independent(ds.groups, cal_args.test_fraction);
            auto cal_windows = eating_only(split.train);
            auto cal = det.calibrate(cal_windows, cal_args.percentile);
            const fs::path out = cal_args.out;
            if (out.has_parent_path()) fs::create_directories(out.parent_path());
            det.save(out);
            std::printf("calibrated on %lld windows: percentile %.1f -> tau %.6g\n",
                        static_cast<long long>(cal.calibration_size), cal.percentile, cal.tau);
            const fs::path run_dir = out.has_parent_path() ? out.parent_path() : fs::path(".");
            write_run_json(run_dir, "calibrate",
                           {{"manifest", cal_args.manifest},
                            {"detector", cal_args.detector},
                            {"percentile", cal_args.percentile},
                            {"test_fraction", cal_args.test_fraction},
                            {"mask_seeds", cal_args.mask_seeds}},
                           std::nullopt, {out});
        } else if (search->parsed()) {
            auto ds = load_dataset(search_args.manifest);
            // carve the validation block from each group's train windows
            std::vector<csense::data::SubjectWindows> train_groups;
            for (const auto& g : ds.groups) {
                auto one = csense::data::split_subject_independent({g}, search_args.test_fraction);
                train_groups.push_back({g.subject_id, std::move(one.train)});
            }
            auto val_split =
                csense::data::split_subject_independent(train_groups, search_args.val_fraction);
            csense::nn::UNetConfig cfg;
            cfg.base_channels = search_args.base_channels;
            cfg.depth = search_args.depth;
            cfg.mask_segment_len = search_args.segment_len;
            csense::detector::TrainOptions topts;
            topts.epochs = search_args.epochs;
            topts.batch = search_args.batch;
            topts.lr = search_args.lr;
            topts.seed = search_args.seed;
            auto result = csense::detector::hyperparam_search(
                search_args.ratios, search_args.percentiles, val_split.train, val_split.test, cfg,
                topts, search_args.top_k);
            const fs::path out_dir = search_args.out_dir;
            fs::create_directories(out_dir);
            csense::detector::write_gridsearch_csv(result, out_dir / "gridsearch.csv");
            std::printf("ratio  percentile  accuracy\n");
            for (const auto& cell : result.ranked)
                std::printf("%.3f  %6.1f      %.4f\n", cell.ratio, cell.percentile, cell.accuracy);
            write_run_json(out_dir, "search",
                           {{"manifest", search_args.manifest},
                            {"ratios", search_args.ratios},
                            {"percentiles", search_args.percentiles},
                            {"epochs", search_args.epochs},
                            {"top_k", search_args.top_k},
                            {"test_fraction", search_args.test_fraction},
                            {"val_fraction", search_args.val_fraction}},
                           search_args.seed, {out_dir / "gridsearch.csv"});
        } else if (trainc->parsed()) {
            auto ds = load_dataset(cls_args.manifest);
            auto split = csense::data::split_subject_independent(ds.groups, cls_args.test_fraction);
            auto train_eating = eating_only(split.train);
            csense::nn::SwinConfig cfg;
            cfg.embed_dim = cls_args.embed_dim;
            cfg.patch_size = cls_args.patch_size;
            cfg.window_size = cls_args.window_size;
            cfg.mlp_ratio = cls_args.mlp_ratio;
            cfg.stage_depths = cls_args.depths;
            cfg.stage_heads = cls_args.heads;
            cfg.num_classes =
                cls_args.num_classes > 0 ? cls_args.num_classes : infer_num_classes(train_eating);
            csense::classifier::FoodClassifier cls(cfg, csense::derive_seed(cls_args.seed, "init"));
            csense::classifier::TrainOptions topts;
            topts.epochs = cls_args.epochs;
            topts.batch = cls_args.batch;
            topts.lr = cls_args.lr;
            topts.seed = cls_args.seed;
            auto report = cls.train(train_eating, topts);
            const fs::path out_dir = cls_args.out_dir;
            fs::create_directories(out_dir);
            cls.save(out_dir / "classifier.ckpt");
            write_loss_csv(report.epoch_loss, out_dir / "train_classifier_loss.csv");
            std::printf("trained %d-class model on %zu windows; final loss %.6f\n",
                        cfg.num_classes, train_eating.size(), report.epoch_loss.back());
            write_run_json(out_dir, "train-classifier",
                           {{"manifest", cls_args.manifest},
                            {"epochs", cls_args.epochs},
                            {"batch", cls_args.batch},
                            {"lr", cls_args.lr},
                            {"num_classes", cfg.num_classes},
                            {"embed_dim", cfg.embed_dim},
                            {"patch_size", cfg.patch_size},
                            {"window_size", cfg.window_size},
                            {"mlp_ratio", cfg.mlp_ratio},
                            {"depths", cfg.stage_depths},
                            {"heads", cfg.stage_heads},
                            {"test_fraction", cls_args.test_fraction}},
                           cls_args.seed,
                           {out_dir / "classifier.ckpt", out_dir / "train_classifier_loss.csv"});
        } else if (eval->parsed()) {
            auto det = csense::detector::EatingDetector::load(eval_args.detector);
            auto cls = csense::classifier::FoodClassifier::load(eval_args.classifier);
            csense::pipeline::TwoStagePipeline pipe(std::move(det), std::move(cls));
            auto ds = load_dataset(eval_args.manifest);
            auto split = csense::data::split_subject_independent(ds.groups, eval_args.test_fraction);
            auto report = csense::pipeline::evaluate(pipe, split.test);
            report.latency = csense::pipeline::measure_latency(pipe, split.test.front(),
                                                               eval_args.latency_trials, 10);
            const fs::path out_dir = eval_args.out_dir;
            csense::pipeline::export_report(report, out_dir);
            std::printf("overall accuracy %.4f | stage-1 accuracy %.4f | latency %.3f +- %.3f ms\n",
                        report.overall_accuracy, report.stage1_accuracy, report.latency.mean_ms,
                        report.latency.std_ms);
            write_run_json(out_dir, "eval",
                           {{"manifest", eval_args.manifest},
                            {"detector", eval_args.detector},
                            {"classifier", eval_args.classifier},
                            {"test_fraction", eval_args.test_fraction},
                            {"latency_trials", eval_args.latency_trials}},
                           std::nullopt, {out_dir / "metrics.json", out_dir / "confusion.csv"});
        } else if (ablate->parsed()) {
            auto cls = csense::classifier::FoodClassifier::load(abl_args.classifier);
            auto ds = load_dataset(abl_args.manifest);
            auto split = csense::data::split_subject_independent(ds.groups, abl_args.test_fraction);
            auto rows = csense::pipeline::ablate_single_stage(cls, split.test, abl_args.thresholds);
            const fs::path out_dir = abl_args.out_dir;
            fs::create_directories(out_dir);
            std::string csv = "cst,accuracy\n";
            std::printf("cst    accuracy\n");
            for (const auto& r : rows) {
                std::printf("%.2f   %.4f\n", r.cst, r.accuracy);
                csv += fmt_double(r.cst) + "," + fmt_double(r.accuracy) + "\n";
            }
            write_text_atomic(out_dir / "ablation.csv", csv);
            write_run_json(out_dir, "ablate",
                           {{"manifest", abl_args.manifest},
                            {"classifier", abl_args.classifier},
                            {"thresholds", abl_args.thresholds},
                            {"test_fraction", abl_args.test_fraction}},
                           std::nullopt, {out_dir / "ablation.csv"});
        } else if (infer->parsed()) {
            auto det = csense::detector::EatingDetector::load(infer_args.detector);
            auto cls = csense::classifier::FoodClassifier::load(infer_args.classifier);
            csense::pipeline::TwoStagePipeline pipe(std::move(det), std::move(cls));
            csense::data::Session session =
                infer_args.labels.empty()
                    ? csense::data::parse_session_unlabeled(infer_args.watch, infer_args.glasses,
                                                            infer_args.subject,
                                                            csense::data::Utensil::Chopsticks)
                    : csense::data::parse_session(infer_args.watch, infer_args.glasses,
                                                  infer_args.labels, infer_args.subject,
                                                  csense::data::Utensil::Chopsticks);
            auto windows = csense::data::segment(session);
            const fs::path out_dir = infer_args.out_dir;
            fs::create_directories(out_dir);
            std::string csv = "start_t,label_id,label_name\n";
            int64_t eating = 0;
            for (const auto& w : windows) {
                const int label = pipe.run_two_stage(w);
                const std::string name =
                    label == csense::pipeline::kNonEatingLabel
                        ? "non-eating"
                        : pipe.classifier().class_names()[static_cast<size_t>(label)];
                csv += fmt_double(w.start_t) + "," + std::to_string(label) + "," + name + "\n";
                if (label != csense::pipeline::kNonEatingLabel) ++eating;
            }
            write_text_atomic(out_dir / "predictions.csv", csv);
            std::printf("%lld of %zu windows labeled as intake\n", static_cast<long long>(eating),
                        windows.size());
            write_run_json(out_dir, "infer",
                           {{"detector", infer_args.detector},
                            {"classifier", infer_args.classifier},
                            {"watch", infer_args.watch},
                            {"glasses", infer_args.glasses}},
                           std::nullopt, {out_dir / "predictions.csv"});
        } else if (latency->parsed()) {
            auto det = csense::detector::EatingDetector::load(lat_args.detector);
            auto cls = csense::classifier::FoodClassifier::load(lat_args.classifier);
            csense::pipeline::TwoStagePipeline pipe(std::move(det), std::move(cls));
            auto ds = load_dataset(lat_args.manifest);
            auto stats = csense::pipeline::measure_latency(pipe, ds.all.front(), lat_args.trials,
                                                           lat_args.warmup);
            std::printf("latency over %lld trials: mean %.3f ms, std %.3f ms, p95 %.3f ms\n",
                        static_cast<long long>(stats.trials), stats.mean_ms, stats.std_ms,
                        stats.p95_ms);
            const fs::path out_dir = lat_args.out_dir;
            fs::create_directories(out_dir);
            ordered_json j{{"trials", stats.trials},
                           {"mean_ms", stats.mean_ms},
                           {"std_ms", stats.std_ms},
                           {"p95_ms", stats.p95_ms}};
            write_text_atomic(out_dir / "latency.json", j.dump(2) + "\n");
            write_run_json(out_dir, "latency",
                           {{"manifest", lat_args.manifest},
                            {"trials", lat_args.trials},
                            {"warmup", lat_args.warmup}},
                           std::nullopt, {out_dir / "latency.json"});
        } else if (gradcheck->parsed()) {
            auto checks = csense::nn::run_gradcheck_battery();
            const bool ok = csense::nn::report_gradcheck_battery(std::cout, checks);
            return ok ? 0 : 1;
        }
    } catch (const csense::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
