#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>

#include "csense/imu_data.hpp"
#include "csense/rng.hpp"
#include "csense/synth.hpp"

using namespace csense;
using namespace csense::data;

namespace {

const std::filesystem::path kDir = std::filesystem::temp_directory_path() / "csense_data_test";

std::filesystem::path write_file(const std::string& name, const std::string& content) {
    std::filesystem::create_directories(kDir);
    auto p = kDir / name;
    std::ofstream f(p, std::ios::trunc);
    f << content;
    return p;
}

SensorStream make_stream(Device dev, double rate, double duration,
                         const std::function<double(int ch, double t)>& fn) {
    SensorStream s;
    s.device = dev;
    s.nominal_rate = rate;
    const auto n = static_cast<int64_t>(std::llround(duration * rate)) + 1;
    for (int64_t i = 0; i < n; ++i) {
        ImuSample smp;
        smp.t = static_cast<double>(i) / rate;
        for (int c = 0; c < 6; ++c) smp.channel(c) = fn(c, smp.t);
        s.samples.push_back(smp);
    }
    return s;
}

Session make_session(double duration, std::vector<LabelInterval> labels) {
    Session s;
    s.subject_id = "s0";
    s.watch = make_stream(Device::Watch, 50.0, duration, [](int c, double t) {
        return std::sin(2 * 3.14159265358979 * 1.3 * t + c);
    });
    s.glasses = make_stream(Device::Glasses, 10.0, duration, [](int c, double t) {
        return 0.3 * std::sin(2 * 3.14159265358979 * 1.3 * t + c);
    });
    s.labels = std::move(labels);
    return s;
}

}  // namespace

TEST_CASE("parse_session reads a minimal session") {
    auto watch = write_file("w.csv",
                            "t,ax,ay,az,gx,gy,gz\n"
                            "0.00,1,2,3,4,5,6\n"
                            "0.02,1.5,2,3,4,5,6\n"
                            "0.04,2,2,3,4,5,6\n");
    auto glasses = write_file("g.csv",
                              "t,ax,ay,az,gx,gy,gz\n"
                              "0.00,0,0,0,0,0,0\n"
                              "0.04,1,1,1,1,1,1\n");
    auto labels = write_file("l.csv",
                             "start,end,state,food\n"
                             "0.00,0.03,eating,3\n"
                             "0.03,0.04,noneating,\n");
    Session s = parse_session(watch, glasses, labels, "s0", Utensil::Spoon);
    CHECK(s.watch.samples.size() == 3);
    CHECK(s.watch.nominal_rate == 50.0);
    CHECK(s.glasses.samples.size() == 2);
    CHECK(s.labels.size() == 2);
    CHECK(s.labels[0].food.value() == 3);
    CHECK(s.watch.samples[1].accel[0] == doctest::Approx(1.5));
}

TEST_CASE("parse_session rejects malformed input") {
    auto glasses = write_file("g_ok.csv", "t,ax,ay,az,gx,gy,gz\n0,0,0,0,0,0,0\n1,0,0,0,0,0,0\n");

    auto dup = write_file("w_dup.csv",
                          "t,ax,ay,az,gx,gy,gz\n0.02,1,1,1,1,1,1\n0.02,2,2,2,2,2,2\n");
    CHECK_THROWS_AS(parse_session(dup, glasses, glasses, "s", Utensil::Hand), NonMonotonicTime);

    auto bad = write_file("w_bad.csv", "t,ax,ay,az,gx,gy,gz\n0.02,one,1,1,1,1,1\n");
    CHECK_THROWS_AS(parse_session(bad, glasses, glasses, "s", Utensil::Hand), MalformedRow);

    auto short_row = write_file("w_short.csv", "t,ax,ay,az,gx,gy,gz\n0.02,1,1\n");
    CHECK_THROWS_AS(parse_session(short_row, glasses, glasses, "s", Utensil::Hand), MalformedRow);

    auto bad_header = write_file("w_hdr.csv", "time,ax,ay,az,gx,gy,gz\n0,1,1,1,1,1,1\n");
    CHECK_THROWS_AS(parse_session(bad_header, glasses, glasses, "s", Utensil::Hand), MalformedRow);

    auto watch = write_file("w_ok.csv", "t,ax,ay,az,gx,gy,gz\n0,0,0,0,0,0,0\n10,0,0,0,0,0,0\n");
    auto overlapping = write_file("l_overlap.csv",
                                  "start,end,state,food\n"
                                  "0,5,eating,3\n"
                                  "4,8,noneating,\n");
    CHECK_THROWS_AS(parse_session(watch, watch, overlapping, "s", Utensil::Hand), OverlappingLabels);

    auto food_on_noneat = write_file("l_food.csv", "start,end,state,food\n0,5,noneating,3\n");
    CHECK_THROWS_AS(parse_session(watch, watch, food_on_noneat, "s", Utensil::Hand), MalformedRow);

    auto uncovered = write_file("l_uncov.csv", "start,end,state,food\n0,99,eating,3\n");
    CHECK_THROWS_AS(parse_session(watch, watch, uncovered, "s", Utensil::Hand), InvalidSession);
}

TEST_CASE("resample reproduces constants and linear signals exactly") {
    auto constant = make_stream(Device::Watch, 50.0, 1.0, [](int, double) { return 1.0; });
    auto m = resample(constant, 0.0, 77.0, 30);
    for (int64_t i = 0; i < m.numel(); ++i) CHECK(m.data[size_t(i)] == 1.0);

    // f(t) = t sampled at 50 Hz, queried at midpoints: linear interp is exact
    auto ramp = make_stream(Device::Watch, 50.0, 1.0, [](int, double t) { return t; });
    auto mid = resample(ramp, 0.01, 50.0, 40);
    for (int64_t k = 0; k < 40; ++k)
        CHECK(mid(k, 0) == doctest::Approx(0.01 + static_cast<double>(k) / 50.0).epsilon(1e-12));
}

TEST_CASE("resample of a 10 Hz sine to 50 Hz stays under the interpolation bound") {
    // 1 Hz sine sampled at 10 Hz: classical linear-interpolation bound is
    // |f''|max * h^2 / 8 = (2*pi)^2 / (8 * 100) ~= 0.04935
    const double pi = 3.14159265358979323846;
    auto sine = make_stream(Device::Glasses, 10.0, 4.0, [&](int, double t) {
        return std::sin(2 * pi * t);
    });
    auto m = resample(sine, 0.0, 50.0, 200);
    double max_err = 0.0;
    for (int64_t k = 0; k < 200; ++k) {
        const double t = static_cast<double>(k) / 50.0;
        max_err = std::max(max_err, std::abs(m(k, 0) - std::sin(2 * pi * t)));
    }
    const double bound = (2 * pi) * (2 * pi) / (8.0 * 100.0);
    CHECK(max_err < bound);
    CHECK(max_err > 0.0);  // the oracle is actually measuring something
}

TEST_CASE("resample out of range") {
    auto s = make_stream(Device::Watch, 50.0, 1.0, [](int, double) { return 0.0; });
    CHECK_THROWS_AS(resample(s, 0.5, 50.0, 100), OutOfRange);
    CHECK_THROWS_AS(resample(s, -0.5, 50.0, 10), OutOfRange);
}

TEST_CASE("resampling a stream on its own grid is bit-exact") {
    SplitMix64 rng(7);
    auto s = make_stream(Device::Watch, 50.0, 2.0, [&](int, double) { return rng.gaussian(); });
    const auto n = static_cast<int64_t>(s.samples.size());
    auto m = resample(s, s.samples.front().t, 50.0, n);
    for (int64_t k = 0; k < n; ++k)
        for (int c = 0; c < 6; ++c) CHECK(m(k, c) == s.samples[size_t(k)].channel(c));
}

TEST_CASE("segment window count and shapes") {
    auto s = make_session(12.8, {{0.0, 12.8, IntakeState::Eating, 2}});
    auto windows = segment(s);
    CHECK(windows.size() == 9);  // floor((12.8-2.56)/1.28)+1
    for (const auto& w : windows) {
        CHECK(w.watch_mat.shape == std::vector<int64_t>{128, 6});
        CHECK(w.glasses_mat.shape == std::vector<int64_t>{25, 6});
        CHECK(w.state_label == IntakeState::Eating);
        CHECK(w.food_label.value() == 2);
    }
    CHECK(windows[1].start_t == doctest::Approx(1.28));

    auto exact = make_session(2.56, {{0.0, 2.56, IntakeState::Eating, 0}});
    CHECK(segment(exact).size() == 1);

    auto tiny = make_session(2.0, {});
    CHECK_THROWS_AS(segment(tiny), SessionTooShort);
}

TEST_CASE("segment majority-overlap labeling") {
    // eating on [0, 2.0] inside a [0, 2.56] window: 78% overlap -> Eating
    auto s = make_session(2.56, {{0.0, 2.0, IntakeState::Eating, 5},
                                 {2.0, 2.56, IntakeState::NonEating, std::nullopt}});
    auto windows = segment(s);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].state_label == IntakeState::Eating);
    CHECK(windows[0].food_label.value() == 5);

    // eating only 40% -> NonEating
    auto s2 = make_session(2.56, {{0.0, 1.024, IntakeState::Eating, 5},
                                  {1.024, 2.56, IntakeState::NonEating, std::nullopt}});
    auto w2 = segment(s2);
    REQUIRE(w2.size() == 1);
    CHECK(w2[0].state_label == IntakeState::NonEating);
    CHECK(!w2[0].food_label.has_value());

    // exact half overlap ties toward NonEating
    auto s3 = make_session(2.56, {{0.0, 1.28, IntakeState::Eating, 1},
                                  {1.28, 2.56, IntakeState::NonEating, std::nullopt}});
    auto w3 = segment(s3);
    REQUIRE(w3.size() == 1);
    CHECK(w3[0].state_label == IntakeState::NonEating);

    // food label comes from the largest-overlap eating interval
    auto s4 = make_session(2.56, {{0.0, 0.9, IntakeState::Eating, 7},
                                  {0.9, 2.56, IntakeState::Eating, 4}});
    auto w4 = segment(s4);
    REQUIRE(w4.size() == 1);
    CHECK(w4[0].state_label == IntakeState::Eating);
    CHECK(w4[0].food_label.value() == 4);
}

TEST_CASE("segment count formula matches brute-force enumeration") {
    SplitMix64 rng(321);
    for (int trial = 0; trial < 20; ++trial) {
        const double duration = rng.uniform(2.56, 40.0);
        auto s = make_session(duration, {});
        auto windows = segment(s);
        // brute force: enumerate k while the window still fits
        int64_t count = 0;
        while (0.0 + static_cast<double>(count) * 1.28 + 2.56 <= duration + 1e-9) ++count;
        CHECK(static_cast<int64_t>(windows.size()) == count);
    }
}

TEST_CASE("segmentation is deterministic") {
    auto s = make_session(10.0, {{0.0, 10.0, IntakeState::Eating, 1}});
    auto a = segment(s);
    auto b = segment(s);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].start_t == b[i].start_t);
        CHECK(a[i].watch_mat.data == b[i].watch_mat.data);
        CHECK(a[i].glasses_mat.data == b[i].glasses_mat.data);
    }
}

TEST_CASE("subject-independent split takes the middle block") {
    auto make_group = [](const std::string& id, int n) {
        SubjectWindows g;
        g.subject_id = id;
        for (int i = 0; i < n; ++i) {
            WindowPair w;
            w.start_t = static_cast<double>(i);
            w.watch_mat = nn::Tensor({128, 6});
            w.glasses_mat = nn::Tensor({25, 6});
            g.windows.push_back(w);
        }
        return g;
    };

    // 2700 windows at 1/9 -> the middle 300
    auto big = split_subject_independent({make_group("a", 2700)}, 1.0 / 9.0);
    CHECK(big.test.size() == 300);
    CHECK(big.train.size() == 2400);
    CHECK(big.test.front().start_t == 1200.0);
    CHECK(big.test.back().start_t == 1499.0);

    // 10 windows at 0.2 -> indices 4 and 5
    auto small = split_subject_independent({make_group("b", 10)}, 0.2);
    REQUIRE(small.test.size() == 2);
    CHECK(small.test[0].start_t == 4.0);
    CHECK(small.test[1].start_t == 5.0);

    // partition: sizes add up per subject, nothing in both sets
    SplitMix64 rng(5);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 3 + static_cast<int>(rng.next_below(40));
        const double tf = rng.uniform(0.05, 0.95);
        auto r = split_subject_independent({make_group("c", n)}, tf);
        CHECK(r.train.size() + r.test.size() == static_cast<size_t>(n));
        std::set<double> train_ts, test_ts;
        for (const auto& w : r.train) train_ts.insert(w.start_t);
        for (const auto& w : r.test) test_ts.insert(w.start_t);
        for (double t : test_ts) CHECK(train_ts.count(t) == 0);
        // test block is contiguous
        if (!test_ts.empty())
            CHECK(*test_ts.rbegin() - *test_ts.begin() == doctest::Approx(test_ts.size() - 1.0));
    }

    CHECK_THROWS_AS(split_subject_independent({make_group("d", 2)}, 0.5), Error);
    CHECK_THROWS_AS(split_subject_independent({make_group("d", 10)}, 1.5), Error);
}

TEST_CASE("session serialize -> parse round-trip is exact") {
    using namespace csense::synth;
    std::vector<SegmentSpec> specs;
    specs.push_back(class_gesture(2, 4.0));
    specs.push_back(DistractorSpec{DistractorKind::Jitter, 0.8, 3.0});
    Session s = generate_session(specs, 777);
    s.subject_id = "rt";

    std::filesystem::create_directories(kDir);
    write_session_csv(s.watch, kDir / "rt_watch.csv");
    write_session_csv(s.glasses, kDir / "rt_glasses.csv");
    write_labels_csv(s.labels, kDir / "rt_labels.csv");
    Session back = parse_session(kDir / "rt_watch.csv", kDir / "rt_glasses.csv",
                                 kDir / "rt_labels.csv", "rt", Utensil::Chopsticks);

    REQUIRE(back.watch.samples.size() == s.watch.samples.size());
    REQUIRE(back.glasses.samples.size() == s.glasses.samples.size());
    for (size_t i = 0; i < s.watch.samples.size(); ++i) {
        CHECK(back.watch.samples[i].t == s.watch.samples[i].t);
        for (int c = 0; c < 6; ++c)
            CHECK(back.watch.samples[i].channel(c) == s.watch.samples[i].channel(c));
    }
    REQUIRE(back.labels.size() == s.labels.size());
    for (size_t i = 0; i < s.labels.size(); ++i) {
        CHECK(back.labels[i].start == s.labels[i].start);
        CHECK(back.labels[i].end == s.labels[i].end);
        CHECK(back.labels[i].state == s.labels[i].state);
        CHECK(back.labels[i].food == s.labels[i].food);
    }
}

TEST_CASE("manifest round-trip") {
    std::filesystem::create_directories(kDir / "mf");
    std::vector<ManifestEntry> entries;
    ManifestEntry e;
    e.subject_id = "s3";
    e.utensil = Utensil::Spoon;
    e.watch_csv = "sessions/w.csv";
    e.glasses_csv = "sessions/g.csv";
    e.labels_csv = "sessions/l.csv";
    entries.push_back(e);
    save_manifest(entries, kDir / "mf" / "manifest.json");
    auto back = load_manifest(kDir / "mf" / "manifest.json");
    REQUIRE(back.size() == 1);
    CHECK(back[0].subject_id == "s3");
    CHECK(back[0].utensil == Utensil::Spoon);
    // relative paths resolve against the manifest directory
    CHECK(back[0].watch_csv == kDir / "mf" / "sessions/w.csv");
}
