#include "csense/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "csense/rng.hpp"

namespace csense::synth {

namespace {

constexpr double kTwoPi = 6.28318530717958647692528676655900577;
constexpr double kGlassesAttenuation = 0.3;
constexpr double kBurstFreq = 3.7;

double channel_phase(int c) { return static_cast<double>(c) * kTwoPi / 12.0; }  // c * pi/6

double segment_duration(const SegmentSpec& s) {
    return std::visit([](const auto& v) { return v.duration; }, s);
}

void validate(const SegmentSpec& s) {
    if (const auto* g = std::get_if<GestureSpec>(&s)) {
        if (g->class_id < 0 || g->class_id >= 11) throw Error("gesture class_id must be in [0,11)");
        if (g->base_freq <= 0) throw Error("gesture base_freq must be > 0");
        if (g->duration <= 0) throw Error("gesture duration must be > 0");
        if (g->noise_sigma < 0) throw Error("gesture noise_sigma must be >= 0");
        if (g->harmonics < 0) throw Error("gesture harmonics must be >= 0");
        if (g->harmonic_decay <= 0 || g->harmonic_decay > 1)
            throw Error("gesture harmonic_decay must be in (0,1]");
    } else {
        const auto& d = std::get<DistractorSpec>(s);
        if (d.duration <= 0) throw Error("distractor duration must be > 0");
    }
}

// Clean (noise-free) watch-channel value at local time tl within a segment.
double clean_value(const SegmentSpec& s, int c, double tl) {
    if (const auto* g = std::get_if<GestureSpec>(&s)) {
        double v = 0.0;
        double gain = 1.0;
        for (int h = 0; h <= g->harmonics; ++h) {
            v += gain * std::sin(kTwoPi * g->base_freq * static_cast<double>(h + 1) * tl +
                                 channel_phase(c));
            gain *= g->harmonic_decay;
        }
        return g->amp[static_cast<size_t>(c)] * v;
    }
    const auto& d = std::get<DistractorSpec>(s);
    switch (d.kind) {
        case DistractorKind::Idle:
            return 0.0;
        case DistractorKind::Jitter:
            return 0.0;  // all-noise distractor
        case DistractorKind::GestureBurst: {
            const double gate = std::fmod(tl, 1.0) < 0.4 ? 1.0 : 0.0;
            return gate * d.intensity * std::sin(kTwoPi * kBurstFreq * tl + channel_phase(c));
        }
    }
    return 0.0;
}

double noise_sigma_of(const SegmentSpec& s) {
    if (const auto* g = std::get_if<GestureSpec>(&s)) return g->noise_sigma;
    const auto& d = std::get<DistractorSpec>(s);
    switch (d.kind) {
        case DistractorKind::Idle: return 0.02 * d.intensity;
        case DistractorKind::Jitter: return d.intensity;
        case DistractorKind::GestureBurst: return 0.05;
    }
    return 0.0;
}

data::SensorStream synthesize_stream(const std::vector<SegmentSpec>& specs,
                                     const std::vector<double>& starts, double total,
                                     data::Device device, double rate, double gain,
                                     uint64_t stream_seed) {
    SplitMix64 rng(stream_seed);
    data::SensorStream stream;
    stream.device = device;
    stream.nominal_rate = rate;
    const int64_t n = static_cast<int64_t>(std::ceil(total * rate - 1e-9)) + 1;
    stream.samples.reserve(static_cast<size_t>(n));
    size_t seg = 0;
    for (int64_t i = 0; i < n; ++i) {
        const double t = static_cast<double>(i) / rate;
        while (seg + 1 < specs.size() && t >= starts[seg + 1]) ++seg;
        const double tl = t - starts[seg];
        const double sigma = noise_sigma_of(specs[seg]);
        data::ImuSample s;
        s.t = t;
        for (int c = 0; c < 6; ++c)
            s.channel(c) = gain * clean_value(specs[seg], c, tl) + sigma * rng.gaussian();
        stream.samples.push_back(s);
    }
    return stream;
}

}  // namespace

data::Session generate_session(const std::vector<SegmentSpec>& specs, uint64_t seed) {
    if (specs.empty()) throw Error("generate_session: spec list is empty");
    for (const auto& s : specs) validate(s);

    std::vector<double> starts(specs.size(), 0.0);
    double total = 0.0;
    for (size_t i = 0; i < specs.size(); ++i) {
        starts[i] = total;
        total += segment_duration(specs[i]);
    }

    data::Session session;
    session.watch = synthesize_stream(specs, starts, total, data::Device::Watch, 50.0, 1.0,
                                      derive_seed(seed, "watch"));
    session.glasses = synthesize_stream(specs, starts, total, data::Device::Glasses, 10.0,
                                        kGlassesAttenuation, derive_seed(seed, "glasses"));
    for (size_t i = 0; i < specs.size(); ++i) {
        data::LabelInterval li;
        li.start = starts[i];
        li.end = starts[i] + segment_duration(specs[i]);
        if (const auto* g = std::get_if<GestureSpec>(&specs[i])) {
            li.state = data::IntakeState::Eating;
            li.food = g->class_id;
        } else {
            li.state = data::IntakeState::NonEating;
        }
        session.labels.push_back(li);
    }
    return session;
}

GestureSpec class_gesture(int class_id, double duration) {
    GestureSpec g;
    g.class_id = class_id;
    g.base_freq = 0.9 + 0.35 * static_cast<double>(class_id);
    g.harmonics = 1 + class_id % 3;
    g.harmonic_decay = 0.5;
    g.noise_sigma = 0.05;
    g.duration = duration;
    for (int c = 0; c < 6; ++c) {
        const double base = 0.75 + 0.1 * static_cast<double>((class_id + 2 * c) % 4);
        g.amp[static_cast<size_t>(c)] = base * (c < 3 ? 1.0 : 0.8);
    }
    return g;
}

DatasetResult generate_dataset(const DatasetParams& params, const std::filesystem::path& out_dir) {
    if (params.class_count < 2 || params.class_count > 11)
        throw Error("generate_dataset: class_count must be in [2,11]");
    if (params.subjects < 2) throw Error("generate_dataset: subjects must be >= 2");
    if (params.minutes_per_class <= 0) throw Error("generate_dataset: minutes_per_class must be > 0");

    std::filesystem::create_directories(out_dir / "sessions");

    // Segment lengths are multiples of the 1.28 s window hop so windows never
    // straddle a boundary with a lopsided content mix; the label guard keeps
    // the one half-and-half window per boundary decisively non-eating.
    constexpr double kGestureChunk = 12.8;     // 10 hops
    constexpr double kDistractorChunk = 10.24;  // 8 hops
    constexpr double kLabelGuard = 0.2;
    const double eating_total = params.minutes_per_class * 60.0;
    const int chunks = std::max<int>(1, static_cast<int>(std::llround(eating_total / kGestureChunk)));

    DatasetResult result;
    std::vector<data::WindowPair> eating_windows;
    for (int s = 0; s < params.subjects; ++s) {
        // small per-subject drift in tempo and vigor
        SplitMix64 perturb(derive_seed(params.seed, "subject-perturb", static_cast<uint64_t>(s)));
        const double freq_mult = 1.0 + 0.02 * perturb.uniform(-1.0, 1.0);
        const double amp_mult = 1.0 + 0.05 * perturb.uniform(-1.0, 1.0);

        for (int c = 0; c < params.class_count; ++c) {
            GestureSpec g = class_gesture(c, kGestureChunk);
            g.base_freq *= freq_mult;
            for (auto& a : g.amp) a *= amp_mult;

            std::vector<SegmentSpec> specs;
            int mix = s * 31 + c * 7;
            auto next_distractor = [&]() {
                DistractorSpec d;
                d.duration = kDistractorChunk;
                switch (mix++ % 3) {
                    case 0: d.kind = DistractorKind::Jitter; d.intensity = 0.9; break;
                    case 1: d.kind = DistractorKind::GestureBurst; d.intensity = 0.85; break;
                    default: d.kind = DistractorKind::Jitter; d.intensity = 1.15; break;
                }
                return d;
            };
            for (int k = 0; k < chunks; ++k) {
                specs.emplace_back(next_distractor());
                specs.emplace_back(g);
            }
            specs.emplace_back(next_distractor());

            const uint64_t session_seed =
                derive_seed(params.seed, "session", static_cast<uint64_t>(s * params.class_count + c));
            data::Session session = generate_session(specs, session_seed);
            session.subject_id = "s" + std::to_string(s);
            session.utensil = static_cast<data::Utensil>((s + c) % 3);
            for (auto& li : session.labels) {
                if (li.state == data::IntakeState::Eating && li.end - li.start > 2 * kLabelGuard) {
                    li.start += kLabelGuard;
                    li.end -= kLabelGuard;
                }
            }

            const std::string stem = "sessions/s" + std::to_string(s) + "_c" + std::to_string(c);
            data::ManifestEntry entry;
            entry.subject_id = session.subject_id;
            entry.utensil = session.utensil;
            entry.watch_csv = stem + "_watch.csv";
            entry.glasses_csv = stem + "_glasses.csv";
            entry.labels_csv = stem + "_labels.csv";
            data::write_session_csv(session.watch, out_dir / entry.watch_csv);
            data::write_session_csv(session.glasses, out_dir / entry.glasses_csv);
            data::write_labels_csv(session.labels, out_dir / entry.labels_csv);
            result.entries.push_back(entry);

            for (auto& w : data::segment(session)) {
                if (w.state_label == data::IntakeState::Eating) {
                    ++result.eating_windows;
                    eating_windows.push_back(std::move(w));
                } else {
                    ++result.noneating_windows;
                }
            }
        }
    }

    result.oracle_accuracy = nearest_centroid_accuracy(eating_windows);
    result.manifest_path = out_dir / "manifest.json";
    data::save_manifest(result.entries, result.manifest_path);

    nlohmann::ordered_json info{{"seed", params.seed},
                                {"class_count", params.class_count},
                                {"subjects", params.subjects},
                                {"minutes_per_class", params.minutes_per_class},
                                {"oracle_accuracy", result.oracle_accuracy},
                                {"eating_windows", result.eating_windows},
                                {"noneating_windows", result.noneating_windows}};
    std::ofstream f(out_dir / "fixture_info.json", std::ios::trunc);
    if (!f) throw IoError("cannot write fixture_info.json");
    f << info.dump(2) << '\n';
    return result;
}

std::vector<double> spectral_feature(const data::WindowPair& w) {
    constexpr int kBins = 16;
    const int64_t n = w.watch_mat.dim(0);
    std::vector<double> feat;
    feat.reserve(6 * kBins);
    for (int c = 0; c < 6; ++c) {
        for (int k = 1; k <= kBins; ++k) {
            double re = 0.0, im = 0.0;
            for (int64_t i = 0; i < n; ++i) {
                const double x = static_cast<double>(w.watch_mat(i, c));
                const double a = -kTwoPi * static_cast<double>(k) * static_cast<double>(i) /
                                 static_cast<double>(n);
                re += x * std::cos(a);
                im += x * std::sin(a);
            }
            feat.push_back(std::sqrt(re * re + im * im) / static_cast<double>(n));
        }
    }
    double norm = 0.0;
    for (double v : feat) norm += v * v;
    norm = std::sqrt(norm);
    if (norm > 0)
        for (double& v : feat) v /= norm;
    return feat;
}

double nearest_centroid_accuracy(const std::vector<data::WindowPair>& eating_windows) {
    std::map<int, std::vector<double>> centroid;
    std::map<int, int64_t> counts;
    std::vector<std::vector<double>> feats;
    feats.reserve(eating_windows.size());
    for (const auto& w : eating_windows) {
        if (!w.food_label) throw Error("oracle: eating window without food label");
        auto f = spectral_feature(w);
        auto& cvec = centroid[*w.food_label];
        if (cvec.empty()) cvec.assign(f.size(), 0.0);
        for (size_t i = 0; i < f.size(); ++i) cvec[i] += f[i];
        ++counts[*w.food_label];
        feats.push_back(std::move(f));
    }
    for (auto& [cls, cvec] : centroid)
        for (double& v : cvec) v /= static_cast<double>(counts[cls]);

    int64_t correct = 0;
    for (size_t i = 0; i < eating_windows.size(); ++i) {
        double best = -1.0;
        int best_cls = -1;
        for (const auto& [cls, cvec] : centroid) {
            double d = 0.0;
            for (size_t j = 0; j < cvec.size(); ++j) {
                const double diff = feats[i][j] - cvec[j];
                d += diff * diff;
            }
            if (best_cls == -1 || d < best) {
                best = d;
                best_cls = cls;
            }
        }
        if (best_cls == *eating_windows[i].food_label) ++correct;
    }
    return eating_windows.empty() ? 0.0
                                  : static_cast<double>(correct) /
                                        static_cast<double>(eating_windows.size());
}

}  // namespace csense::synth
