#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "ivs/detection.hpp"
#include "ivs/evaluation.hpp"
#include "oracles.hpp"

using namespace ivs;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("ivs_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_SUITE("detection") {
    TEST_CASE("proposal counts") {
        const std::vector<std::size_t> w16{16};
        const auto p = generate_proposals(100, w16, 0.5);
        REQUIRE(p.size() == 12);
        CHECK(p.front() == Segment{0, 16});
        CHECK(p[10] == Segment{80, 96});
        CHECK(p.back() == Segment{84, 100});

        const auto one = generate_proposals(16, w16, 0.5);
        REQUIRE(one.size() == 1);
        CHECK(one[0] == Segment{0, 16});
        CHECK_THROWS_AS(generate_proposals(10, w16, 0.5), ConfigError);
    }

    TEST_CASE("proposal union") {
        const std::vector<std::size_t> a{16}, b{32}, ab{16, 32}, dup{16, 16};
        auto pa = generate_proposals(100, a, 0.5), pb = generate_proposals(100, b, 0.5);
        const auto pab = generate_proposals(100, ab, 0.5);
        std::vector<Segment> u;
        std::set_union(pa.begin(), pa.end(), pb.begin(), pb.end(), std::back_inserter(u),
                       [](const Segment& x, const Segment& y) {
                           return std::pair(x.start, x.length()) < std::pair(y.start, y.length());
                       });
        CHECK(pab == u);
        CHECK(generate_proposals(100, dup, 0.5) == pa);
    }

    TEST_CASE("proposals cover every frame") {
        std::mt19937_64 rng(61);
        std::uniform_int_distribution<int> total(20, 200), win(1, 20);
        std::uniform_real_distribution<double> frac(0.05, 1.0);
        for (int k = 0; k < 100; ++k) {
            const std::int64_t n = total(rng);
            const std::vector<std::size_t> ws{static_cast<std::size_t>(win(rng)), static_cast<std::size_t>(win(rng))};
            const auto p = generate_proposals(n, ws, frac(rng));
            std::vector<bool> covered(static_cast<std::size_t>(n), false);
            for (const auto& s : p) {
                CHECK(s.valid());
                CHECK(s.end <= n);
                for (auto f = s.start; f < s.end; ++f) covered[static_cast<std::size_t>(f)] = true;
            }
            CHECK(std::all_of(covered.begin(), covered.end(), [](bool c) { return c; }));
            CHECK(std::is_sorted(p.begin(), p.end(), [](const Segment& x, const Segment& y) {
                return std::pair(x.start, x.length()) < std::pair(y.start, y.length());
            }));
            CHECK(std::adjacent_find(p.begin(), p.end()) == p.end());
        }
    }

    TEST_CASE("proposal spec validation") {
        ProposalSpec s;
        CHECK(s.window_lengths == std::vector<std::size_t>{8, 12, 16});
        s.stride_fraction = 0.0;
        CHECK_THROWS_AS(s.validate(), ConfigError);
        s = {};
        s.window_lengths = {0};
        CHECK_THROWS_AS(s.validate(), ConfigError);
    }

    TEST_CASE("temporal iou") {
        CHECK(temporal_iou({3, 9}, {3, 9}) == 1.0);
        CHECK(temporal_iou({0, 5}, {5, 9}) == 0.0);
        CHECK(temporal_iou({0, 10}, {5, 15}) == doctest::Approx(1.0 / 3));
        std::mt19937_64 rng(62);
        std::uniform_int_distribution<int> s(0, 30), l(1, 15);
        for (int k = 0; k < 200; ++k) {
            const int a0 = s(rng), b0 = s(rng);
            const Segment a{a0, a0 + l(rng)}, b{b0, b0 + l(rng)};
            const double o = temporal_iou(a, b);
            CHECK(o == temporal_iou(b, a));
            CHECK(o >= 0.0);
            CHECK(o <= 1.0);
            CHECK(o == doctest::Approx(oracle::iou(a, b)).epsilon(1e-15));
        }
    }

    TEST_CASE("nms basics") {
        const std::vector<Detection> one{{"v", {0, 10}, 1, 0.5}};
        CHECK(nms(one, 0.3) == one);
        const std::vector<Detection> two{{"v", {0, 10}, 1, 0.4}, {"v", {1, 10}, 1, 0.9}};
        REQUIRE(temporal_iou(two[0].segment, two[1].segment) > 0.8);
        const auto kept = nms(two, 0.3);
        REQUIRE(kept.size() == 1);
        CHECK(kept[0] == two[1]);
        // different class or video is never suppressed
        const std::vector<Detection> apart{{"v", {0, 10}, 1, 0.4}, {"v", {0, 10}, 2, 0.9}, {"w", {0, 10}, 1, 0.5}};
        CHECK(nms(apart, 0.3).size() == 3);
        CHECK_THROWS_AS(nms(one, 1.5), ConfigError);
    }

    TEST_CASE("nms matches the quadratic oracle") {
        std::mt19937_64 rng(63);
        for (int k = 0; k < 100; ++k) {
            const auto dets = oracle::random_detections(rng, 1 + static_cast<std::size_t>(k % 40));
            const double thr = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
            const auto got = nms(dets, thr);
            CHECK(got == oracle::nms(dets, thr));
            // properties
            CHECK(got.size() <= dets.size());
            CHECK(nms(got, thr) == got);
            for (const auto& d : got) CHECK(std::find(dets.begin(), dets.end(), d) != dets.end());
            for (std::size_t i = 0; i < got.size(); ++i)
                for (std::size_t j = i + 1; j < got.size(); ++j)
                    if (got[i].video_id == got[j].video_id && got[i].class_id == got[j].class_id)
                        CHECK(temporal_iou(got[i].segment, got[j].segment) <= thr);
        }
    }

    TEST_CASE("jsonl round trip and validation") {
        const auto dir = scratch_dir("jsonl");
        const std::vector<Detection> dets{{"a", {0, 8}, 1, 0.25}, {"b", {3, 19}, 4, 0.125}};
        write_detections(dir / "d.jsonl", dets);
        CHECK(read_detections(dir / "d.jsonl") == dets);
        const std::vector<GroundTruthInstance> gts{{"a", {1, 9}, 2}};
        write_ground_truth(dir / "g.jsonl", gts);
        CHECK(read_ground_truth(dir / "g.jsonl") == gts);

        std::ofstream(dir / "bad_class.jsonl") << R"({"video":"a","start":0,"end":4,"class":0,"score":0.5})" << '\n';
        CHECK_THROWS_AS(read_detections(dir / "bad_class.jsonl"), IoError);
        std::ofstream(dir / "bad_seg.jsonl") << R"({"video":"a","start":4,"end":4,"class":1,"score":0.5})" << '\n';
        CHECK_THROWS_AS(read_detections(dir / "bad_seg.jsonl"), IoError);
        std::ofstream(dir / "bad_score.jsonl") << R"({"video":"a","start":0,"end":4,"class":1,"score":0})" << '\n';
        CHECK_THROWS_AS(read_detections(dir / "bad_score.jsonl"), IoError);
        std::ofstream(dir / "garbage.jsonl") << "{oops\n";
        CHECK_THROWS_AS(read_ground_truth(dir / "garbage.jsonl"), IoError);
        CHECK_THROWS_AS(read_detections(dir / "missing.jsonl"), IoError);
    }
}

TEST_SUITE("evaluation") {
    TEST_CASE("average precision") {
        CHECK(average_precision({true, false, true}, 2) == doctest::Approx(0.5 + 0.5 * 2.0 / 3).epsilon(1e-12));
        CHECK(average_precision({true, true}, 2) == 1.0);
        CHECK(average_precision({}, 3) == 0.0);
        CHECK(average_precision({true}, 0) == 0.0);
        CHECK(average_precision({true, false, true}, 2) == doctest::Approx(oracle::average_precision({true, false, true}, 2)));
    }

    TEST_CASE("matching rules") {
        const std::vector<GroundTruthInstance> gt{{"v", {10, 20}, 1}};
        const std::vector<Detection> exact{{"v", {10, 20}, 1, 0.9}};
        for (double t : {0.1, 0.5, 0.99}) CHECK(match_detections(exact, gt, 1, t) == std::vector<bool>{true});

        const std::vector<Detection> both{{"v", {10, 20}, 1, 0.9}, {"v", {11, 20}, 1, 0.8}};
        CHECK(match_detections(both, gt, 1, 0.5) == std::vector<bool>{true, false});

        // IoU exactly 0.5 is not larger than 0.5
        const std::vector<Detection> half{{"v", {10, 15}, 1, 0.9}};
        REQUIRE(temporal_iou(half[0].segment, gt[0].segment) == 0.5);
        CHECK(match_detections(half, gt, 1, 0.5) == std::vector<bool>{false});
        CHECK(match_detections(half, gt, 1, 0.4) == std::vector<bool>{true});

        const std::vector<Detection> unsorted{{"v", {10, 20}, 1, 0.1}, {"v", {10, 20}, 1, 0.9}};
        CHECK_THROWS_AS(match_detections(unsorted, gt, 1, 0.5), ConfigError);

        // the detection takes the higher-IoU ground truth, leaving the other for the next one
        const std::vector<GroundTruthInstance> two{{"v", {0, 10}, 1}, {"v", {4, 14}, 1}};
        const std::vector<Detection> d{{"v", {4, 13}, 1, 0.9}, {"v", {0, 6}, 1, 0.8}};
        CHECK(match_detections(d, two, 1, 0.3) == std::vector<bool>{true, true});
    }

    TEST_CASE("evaluate basics") {
        const std::vector<GroundTruthInstance> gt{{"v", {10, 20}, 1}, {"v", {40, 50}, 2}};
        const auto empty = evaluate({}, gt);
        CHECK(empty.thresholds == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
        for (double m : empty.mean_ap) CHECK(m == 0.0);

        const std::vector<Detection> perfect{{"v", {10, 20}, 1, 0.9}, {"v", {40, 50}, 2, 0.8}, {"x", {0, 5}, 1, 0.7}};
        const auto r = evaluate(perfect, gt);
        for (double m : r.mean_ap) CHECK(m == 1.0);
        CHECK(r.ignored_detections == 1);
        CHECK(r.unknown_videos == std::vector<std::string>{"x"});
        CHECK(r.ground_truth_counts.at(1) == 1);
        CHECK_THROWS_AS(evaluate(perfect, gt, {1.5}), ConfigError);
    }

    TEST_CASE("evaluate matches the naive reference") {
        std::mt19937_64 rng(71);
        for (int k = 0; k < 100; ++k) {
            const auto p = oracle::random_problem(rng, k % 2 == 1);
            const auto got = evaluate(p.detections, p.ground_truth);
            const auto want = oracle::mean_ap(p.detections, p.ground_truth, kDefaultIouThresholds);
            for (std::size_t t = 0; t < want.size(); ++t) {
                CHECK(std::abs(got.mean_ap[t] - want[t]) <= 1e-9);
                CHECK(got.mean_ap[t] >= 0.0);
                CHECK(got.mean_ap[t] <= 1.0);
                for (const auto& [cls, ap] : got.ap[t]) {
                    CHECK(ap >= 0.0);
                    CHECK(ap <= 1.0);
                }
            }
        }
    }

    TEST_CASE("appending misses at the bottom never helps") {
        std::mt19937_64 rng(72);
        for (int k = 0; k < 100; ++k) {
            auto p = oracle::random_problem(rng, false);
            if (p.ground_truth.empty()) continue;
            sort_for_evaluation(p.detections);
            const std::size_t cls = p.ground_truth[0].class_id;
            std::vector<Detection> of_class;
            for (const auto& d : p.detections)
                if (d.class_id == cls) of_class.push_back(d);
            const auto flags = match_detections(of_class, p.ground_truth, cls, 0.3);
            auto extended = of_class;
            // far from every ground-truth segment, below every score
            for (int i = 0; i < 3; ++i) extended.push_back({"v0", {1000 + i, 1010 + i}, cls, 0.001 / (i + 1)});
            const auto ext = match_detections(extended, p.ground_truth, cls, 0.3);
            CHECK(std::equal(flags.begin(), flags.end(), ext.begin()));
            std::size_t n = 0;
            for (const auto& g : p.ground_truth) n += g.class_id == cls ? 1 : 0;
            CHECK(average_precision(ext, n) <= average_precision(flags, n));
        }
    }

    TEST_CASE("input order does not matter") {
        std::mt19937_64 rng(73);
        for (int k = 0; k < 50; ++k) {
            auto p = oracle::random_problem(rng, false);
            const auto a = evaluate(p.detections, p.ground_truth);
            std::shuffle(p.detections.begin(), p.detections.end(), rng);
            std::shuffle(p.ground_truth.begin(), p.ground_truth.end(), rng);
            const auto b = evaluate(p.detections, p.ground_truth);
            CHECK(a.mean_ap == b.mean_ap);
            CHECK(a.ap == b.ap);
        }
    }

    TEST_CASE("csv round trip") {
        const std::vector<GroundTruthInstance> gt{{"v", {10, 20}, 1}, {"v", {40, 50}, 2}};
        const std::vector<Detection> dets{{"v", {10, 20}, 1, 0.9}, {"v", {42, 50}, 2, 0.8}};
        const auto r = evaluate(dets, gt);
        const auto dir = scratch_dir("evalcsv");
        r.write_csv(dir / "eval.csv");
        const auto table = EvalTable::read_csv(dir / "eval.csv");
        CHECK(table.thresholds == r.thresholds);
        REQUIRE(table.rows.size() == 3);
        CHECK(table.rows[0].first == "1");
        CHECK(table.rows.back().first == "mAP");
        for (std::size_t t = 0; t < r.mean_ap.size(); ++t)
            CHECK(table.mean_ap()[t] == doctest::Approx(r.mean_ap[t]).epsilon(1e-6));
        CHECK_THROWS_AS(EvalTable::read_csv(dir / "missing.csv"), IoError);
    }
}
