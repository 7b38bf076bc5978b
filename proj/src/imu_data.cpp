#include "csense/imu_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

namespace csense::data {

namespace {

constexpr double kEps = 1e-9;

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_real(const std::string& s, const std::string& file, size_t line) {
    const char* begin = s.c_str();
    char* end = nullptr;
    double v = std::strtod(begin, &end);
    if (end == begin || *end != '\0' || !std::isfinite(v))
        throw MalformedRow(file, line, "'" + s + "' is not a finite real");
    return v;
}

std::string format_real(double v) {
    char buf[32];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, p);
}

SensorStream parse_stream(const std::filesystem::path& path, Device device, double nominal_rate) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    const std::string fname = path.filename().string();
    std::string line;
    size_t lineno = 0;
    if (!std::getline(f, line)) throw MalformedRow(fname, 1, "missing header");
    ++lineno;
    {
        auto fields = split_fields(line);
        const std::vector<std::string> want{"t", "ax", "ay", "az", "gx", "gy", "gz"};
        if (fields != std::vector<std::string>(want))
            throw MalformedRow(fname, 1, "header must be t,ax,ay,az,gx,gy,gz");
    }
    SensorStream stream;
    stream.device = device;
    stream.nominal_rate = nominal_rate;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_fields(line);
        if (fields.size() != 7) throw MalformedRow(fname, lineno, "expected 7 fields");
        ImuSample s;
        s.t = parse_real(fields[0], fname, lineno);
        for (int c = 0; c < 6; ++c) s.channel(c) = parse_real(fields[static_cast<size_t>(c + 1)], fname, lineno);
        if (!stream.samples.empty() && s.t <= stream.samples.back().t)
            throw NonMonotonicTime(fname, lineno);
        stream.samples.push_back(s);
    }
    if (stream.samples.empty()) throw MalformedRow(fname, lineno + 1, "stream has no samples");
    return stream;
}

std::vector<LabelInterval> parse_labels(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    const std::string fname = path.filename().string();
    std::string line;
    size_t lineno = 0;
    if (!std::getline(f, line)) throw MalformedRow(fname, 1, "missing header");
    ++lineno;
    {
        auto fields = split_fields(line);
        const std::vector<std::string> want{"start", "end", "state", "food"};
        if (fields != std::vector<std::string>(want))
            throw MalformedRow(fname, 1, "header must be start,end,state,food");
    }
    std::vector<LabelInterval> labels;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        auto fields = split_fields(line);
        if (fields.size() != 4) throw MalformedRow(fname, lineno, "expected 4 fields");
        LabelInterval li;
        li.start = parse_real(fields[0], fname, lineno);
        li.end = parse_real(fields[1], fname, lineno);
        if (li.start >= li.end) throw MalformedRow(fname, lineno, "interval start must precede end");
        if (fields[2] == "eating")
            li.state = IntakeState::Eating;
        else if (fields[2] == "noneating")
            li.state = IntakeState::NonEating;
        else
            throw MalformedRow(fname, lineno, "state must be eating or noneating");
        if (!fields[3].empty()) {
            int food = static_cast<int>(parse_real(fields[3], fname, lineno));
            if (food < 0 || food > 10) throw MalformedRow(fname, lineno, "food id must be in [0,11)");
            li.food = food;
        }
        if ((li.state == IntakeState::Eating) != li.food.has_value())
            throw MalformedRow(fname, lineno, "food id present iff state is eating");
        labels.push_back(li);
    }
    // non-overlap: sort by start, adjacent pairs must not intersect
    std::vector<size_t> order(labels.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return labels[a].start < labels[b].start; });
    for (size_t i = 0; i + 1 < order.size(); ++i) {
        const auto& a = labels[order[i]];
        const auto& b = labels[order[i + 1]];
        if (a.end > b.start + kEps)
            throw OverlappingLabels(std::min(order[i], order[i + 1]), std::max(order[i], order[i + 1]));
    }
    return labels;
}

void check_coverage(const Session& s) {
    if (s.labels.empty()) return;
    double lo = s.labels.front().start, hi = s.labels.front().end;
    for (const auto& li : s.labels) {
        lo = std::min(lo, li.start);
        hi = std::max(hi, li.end);
    }
    for (const SensorStream* st : {&s.watch, &s.glasses}) {
        if (st->start_time() > lo + kEps || st->end_time() < hi - kEps)
            throw InvalidSession("stream does not cover the labeled span [" +
                                 std::to_string(lo) + ", " + std::to_string(hi) + "]");
    }
}

}  // namespace

Session parse_session(const std::filesystem::path& watch_path,
                      const std::filesystem::path& glasses_path,
                      const std::filesystem::path& labels_path, const std::string& subject_id,
                      Utensil utensil) {
    Session s;
    s.subject_id = subject_id;
    s.utensil = utensil;
    s.watch = parse_stream(watch_path, Device::Watch, 50.0);
    s.glasses = parse_stream(glasses_path, Device::Glasses, 10.0);
    s.labels = parse_labels(labels_path);
    check_coverage(s);
    return s;
}

Session parse_session_unlabeled(const std::filesystem::path& watch_path,
                                const std::filesystem::path& glasses_path,
                                const std::string& subject_id, Utensil utensil) {
    Session s;
    s.subject_id = subject_id;
    s.utensil = utensil;
    s.watch = parse_stream(watch_path, Device::Watch, 50.0);
    s.glasses = parse_stream(glasses_path, Device::Glasses, 10.0);
    return s;
}

void write_session_csv(const SensorStream& stream, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "t,ax,ay,az,gx,gy,gz\n";
    for (const auto& s : stream.samples) {
        f << format_real(s.t);
        for (int c = 0; c < 6; ++c) f << ',' << format_real(s.channel(c));
        f << '\n';
    }
    if (!f) throw IoError("short write to " + path.string());
}

void write_labels_csv(const std::vector<LabelInterval>& labels, const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot open " + path.string() + " for writing");
    f << "start,end,state,food\n";
    for (const auto& li : labels) {
        f << format_real(li.start) << ',' << format_real(li.end) << ','
          << (li.state == IntakeState::Eating ? "eating" : "noneating") << ',';
        if (li.food) f << *li.food;
        f << '\n';
    }
    if (!f) throw IoError("short write to " + path.string());
}

nn::TensorT<double> resample(const SensorStream& stream, double t0, double rate, int64_t n) {
    const auto& xs = stream.samples;
    const double t_end = t0 + static_cast<double>(n - 1) / rate;
    if (xs.empty() || t0 < xs.front().t - kEps || t_end > xs.back().t + kEps)
        throw OutOfRange("requested [" + std::to_string(t0) + ", " + std::to_string(t_end) +
                         "] exceeds stream extent");
    nn::TensorT<double> out({n, 6});
    size_t hint = 0;
    for (int64_t k = 0; k < n; ++k) {
        const double q = t0 + static_cast<double>(k) / rate;
        while (hint + 2 < xs.size() && xs[hint + 1].t <= q) ++hint;
        const ImuSample& a = xs[hint];
        const ImuSample& b = xs[std::min(hint + 1, xs.size() - 1)];
        double alpha = (b.t > a.t) ? (q - a.t) / (b.t - a.t) : 0.0;
        alpha = std::clamp(alpha, 0.0, 1.0);
        for (int c = 0; c < 6; ++c) {
            // exact endpoints so resampling a stream on its own grid is bit-exact
            double v;
            if (alpha == 0.0)
                v = a.channel(c);
            else if (alpha == 1.0)
                v = b.channel(c);
            else
                v = a.channel(c) + (b.channel(c) - a.channel(c)) * alpha;
            out(k, c) = v;
        }
    }
    return out;
}

std::vector<WindowPair> segment(const Session& session, double window_len, double hop) {
    if (window_len <= 0 || hop <= 0 || hop > window_len + kEps)
        throw Error("segment: need window_len > 0 and 0 < hop <= window_len");
    if (session.watch.samples.empty() || session.glasses.samples.empty())
        throw SessionTooShort("a sensor stream is empty");
    const double span_start = std::max(session.watch.start_time(), session.glasses.start_time());
    const double span_end = std::min(session.watch.end_time(), session.glasses.end_time());
    const double duration = span_end - span_start;
    if (duration + kEps < window_len)
        throw SessionTooShort("covered span " + std::to_string(duration) + " s < window " +
                              std::to_string(window_len) + " s");
    const int64_t count = static_cast<int64_t>(std::floor((duration - window_len) / hop + kEps)) + 1;

    // rows are fixed; grids scale with the window so the default window is
    // exactly 50 Hz / 9.765625 Hz
    const double watch_rate = static_cast<double>(kWatchRows) / window_len;
    const double glasses_rate = static_cast<double>(kGlassesRows) / window_len;

    std::vector<WindowPair> out;
    out.reserve(static_cast<size_t>(count));
    for (int64_t k = 0; k < count; ++k) {
        const double wstart = span_start + static_cast<double>(k) * hop;
        WindowPair w;
        w.start_t = wstart;
        auto wm = resample(session.watch, wstart, watch_rate, kWatchRows);
        auto gm = resample(session.glasses, wstart, glasses_rate, kGlassesRows);
        w.watch_mat = nn::Tensor({kWatchRows, 6});
        for (int64_t i = 0; i < wm.numel(); ++i) w.watch_mat.data[static_cast<size_t>(i)] = static_cast<float>(wm.data[static_cast<size_t>(i)]);
        w.glasses_mat = nn::Tensor({kGlassesRows, 6});
        for (int64_t i = 0; i < gm.numel(); ++i) w.glasses_mat.data[static_cast<size_t>(i)] = static_cast<float>(gm.data[static_cast<size_t>(i)]);

        const double wend = wstart + window_len;
        double eating_overlap = 0.0;
        double best_overlap = 0.0;
        std::optional<int> best_food;
        for (const auto& li : session.labels) {
            const double ov = std::max(0.0, std::min(li.end, wend) - std::max(li.start, wstart));
            if (ov <= 0.0) continue;
            if (li.state == IntakeState::Eating) {
                eating_overlap += ov;
                if (ov > best_overlap) {
                    best_overlap = ov;
                    best_food = li.food;
                }
            }
        }
        if (eating_overlap * 2.0 > window_len) {
            w.state_label = IntakeState::Eating;
            w.food_label = best_food;
        } else {
            w.state_label = IntakeState::NonEating;
        }
        out.push_back(std::move(w));
    }
    return out;
}

SplitResult split_subject_independent(const std::vector<SubjectWindows>& groups,
                                      double test_fraction) {
    if (test_fraction <= 0.0 || test_fraction >= 1.0)
        throw Error("split: test_fraction must be in (0,1)");
    SplitResult result;
    for (const auto& g : groups) {
        const int64_t n = static_cast<int64_t>(g.windows.size());
        if (n < 3)
            throw Error("split: subject " + g.subject_id + " contributes only " +
                        std::to_string(n) + " windows (need >= 3)");
        int64_t test_count = std::llround(static_cast<double>(n) * test_fraction);
        test_count = std::clamp<int64_t>(test_count, 1, n - 1);
        const int64_t start = (n - test_count) / 2;
        for (int64_t i = 0; i < n; ++i) {
            if (i >= start && i < start + test_count)
                result.test.push_back(g.windows[static_cast<size_t>(i)]);
            else
                result.train.push_back(g.windows[static_cast<size_t>(i)]);
        }
    }
    return result;
}

std::string utensil_name(Utensil u) {
    switch (u) {
        case Utensil::Chopsticks: return "chopsticks";
        case Utensil::Spoon: return "spoon";
        case Utensil::Hand: return "hand";
    }
    return "chopsticks";
}

Utensil utensil_from_name(const std::string& name) {
    if (name == "chopsticks") return Utensil::Chopsticks;
    if (name == "spoon") return Utensil::Spoon;
    if (name == "hand") return Utensil::Hand;
    throw Error("unknown utensil '" + name + "'");
}

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": " + e.what());
    }
    if (!j.is_array()) throw IoError(path.string() + ": manifest must be a JSON array");
    const auto base = path.parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    std::vector<ManifestEntry> out;
    for (const auto& e : j) {
        ManifestEntry m;
        m.subject_id = e.at("subject_id").get<std::string>();
        m.utensil = utensil_from_name(e.at("utensil").get<std::string>());
        m.watch_csv = resolve(e.at("watch_csv").get<std::string>());
        m.glasses_csv = resolve(e.at("glasses_csv").get<std::string>());
        m.labels_csv = resolve(e.at("labels_csv").get<std::string>());
        out.push_back(std::move(m));
    }
    return out;
}

void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
    nlohmann::ordered_json j = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
        j.push_back({{"subject_id", e.subject_id},
                     {"utensil", utensil_name(e.utensil)},
                     {"watch_csv", e.watch_csv.generic_string()},
                     {"glasses_csv", e.glasses_csv.generic_string()},
                     {"labels_csv", e.labels_csv.generic_string()}});
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
        f << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace csense::data
