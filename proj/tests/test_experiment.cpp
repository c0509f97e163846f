#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"
#include "ivs/experiment.hpp"

using namespace ivs;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("ivs_test_" + name);
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

ExperimentConfig short_run(const fs::path& out) {
    ExperimentConfig c;
    c.train.iterations = 30;
    c.heldout_pairs = 20;
    c.out = out;
    return c;
}

}  // namespace

TEST_SUITE("experiment") {
    TEST_CASE("defaults") {
        const ExperimentConfig c;
        CHECK(c.preset == "tiny");
        CHECK(c.seed == 7);
        CHECK(c.train.lambda == 1.0);
        CHECK(c.train.loss == PairLoss::verification);
        CHECK(c.iou_thresholds == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5});
        CHECK(c.nms_threshold == 0.3);
        auto net = c.network();
        net.seed = 0;
        CHECK(net == NetworkConfig::tiny(5));
        CHECK_NOTHROW(c.validate());
        CHECK(experiment_config_from_json(nlohmann::json::object()).seed == 7);
    }

    TEST_CASE("json round trip") {
        ExperimentConfig c;
        c.train.lambda = 0.5;
        c.train.loss = PairLoss::contrastive;
        c.seed = 11;
        c.out = "somewhere";
        const auto back = experiment_config_from_json(to_json(c));
        CHECK(to_json(back) == to_json(c));
        CHECK(back.train.lambda == 0.5);
        CHECK(back.training().loss == PairLoss::contrastive);
    }

    TEST_CASE("config errors") {
        CHECK_THROWS_AS(experiment_config_from_json({{"lamda", 1}}), ConfigError);
        CHECK_THROWS_AS(experiment_config_from_json({{"train", {{"seed", 3}}}}), ConfigError);
        CHECK_THROWS_AS(experiment_config_from_json({{"dataset", {{"seed", 3}}}}), ConfigError);
        CHECK_THROWS_AS(experiment_config_from_json({{"preset", "medium"}}), ConfigError);
        CHECK_THROWS_AS(experiment_config_from_json({{"train", {{"lambda", -1}}}}), ConfigError);
        CHECK_THROWS_AS(experiment_config_from_json({{"nms_threshold", 2}}), ConfigError);
        CHECK_THROWS_AS(load_experiment_config("/nonexistent/config.json"), IoError);
    }

    TEST_CASE("derived seeds") {
        const ExperimentConfig c;
        std::set<std::uint64_t> seeds{c.training_data().seed, c.heldout_data().seed, c.training().seed,
                                      c.network().seed, c.video_seed(0), c.video_seed(1)};
        CHECK(seeds.size() == 6);
        ExperimentConfig d;
        d.seed = 8;
        CHECK(d.training_data().seed != c.training_data().seed);
        CHECK(derive_seed(7, 1) == derive_seed(7, 1));
    }

    TEST_CASE("classified proposals") {
        const ExperimentConfig c;
        const auto model = build_model<double>(c.network());
        const auto video = generate_untrimmed_video(c.dataset, "v", 64, 3, 1);
        const auto proposals = generate_proposals(64, c.proposals.window_lengths, c.proposals.stride_fraction);
        const auto dets = classify_proposals(model, video, proposals);
        CHECK(dets.size() <= proposals.size());
        for (std::size_t i = 0; i < dets.size(); ++i) {
            CHECK(dets[i].class_id >= 1);
            CHECK(dets[i].class_id < c.network().n_classes);
            CHECK(dets[i].score > 0.0);
            CHECK(dets[i].video_id == "v");
            if (i > 0) CHECK(dets[i - 1].score >= dets[i].score);
            // the score is that class's probability on the resampled proposal
            const Tensor p = identify(model, resample_segment(video.frames, dets[i].segment, 8));
            CHECK(p[dets[i].class_id] == dets[i].score);
        }
        const std::vector<Segment> outside{{60, 70}};
        CHECK_THROWS(classify_proposals(model, video, outside));
    }

    TEST_CASE("a short run writes every artifact") {
        const auto out = scratch_dir("run");
        const auto s = run_experiment(short_run(out));
        for (const char* f : {"config.json", "data/manifest.json", "model/model.json", "train_log.csv",
                              "videos/index.json", "ground_truth.jsonl", "detections.jsonl", "eval.csv",
                              "summary.csv"})
            CHECK_MESSAGE(fs::exists(out / f), f);
        CHECK_FALSE(fs::exists(out / kFailedMarker));
        CHECK(s.iterations == 30);
        CHECK(s.mean_ap.size() == 5);
        CHECK(lines(out / "train_log.csv").size() == 31);
        const auto summary = lines(out / "summary.csv");
        REQUIRE(summary.size() == 2);
        CHECK(summary[0] ==
              "lambda,loss,iterations,final_L,heldout_identification,heldout_verification,mAP_iou_0.1,mAP_iou_0.2,"
              "mAP_iou_0.3,mAP_iou_0.4,mAP_iou_0.5");
        CHECK(summary[1].rfind("1,verification,30,", 0) == 0);
    }

    TEST_CASE("a failing stage leaves a FAILED marker") {
        const auto out = scratch_dir("failed");
        // a plain file where the checkpoint directory should go
        fs::create_directories(out);
        std::ofstream(out / "model") << "in the way\n";
        try {
            run_experiment(short_run(out));
            FAIL("expected an I/O failure");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).rfind("[train] ", 0) == 0);
        }
        const std::string marker = slurp(out / kFailedMarker);
        CHECK(marker.rfind("stage: train\n", 0) == 0);
        CHECK(fs::exists(out / "data/manifest.json"));
        CHECK_FALSE(fs::exists(out / "eval.csv"));
    }

    TEST_CASE("stages need their inputs") {
        const auto out = scratch_dir("stages");
        fs::create_directories(out);
        auto c = short_run(out);
        CHECK_THROWS_AS(stage_train(c), IoError);
        CHECK_THROWS_AS(stage_eval(c), IoError);
    }

    TEST_CASE("report") {
        const auto root = scratch_dir("report");
        const std::vector<GroundTruthInstance> gt{{"v", {10, 20}, 1}, {"v", {40, 50}, 2}};
        const std::vector<Detection> good{{"v", {10, 20}, 1, 0.9}, {"v", {40, 50}, 2, 0.8}};
        const std::vector<Detection> poor{{"v", {10, 14}, 1, 0.9}, {"v", {40, 50}, 2, 0.8}};
        fs::create_directories(root / "a");
        fs::create_directories(root / "b");
        evaluate(good, gt).write_csv(root / "a" / "eval.csv");
        evaluate(poor, gt).write_csv(root / "b" / "eval.csv");

        report({root / "a", root / "b"}, root / "out");
        const auto table = lines(root / "out" / "comparison.csv");
        REQUIRE(table.size() == 3);
        CHECK(table[0] == "run,mAP_iou_0.1,mAP_iou_0.2,mAP_iou_0.3,mAP_iou_0.4,mAP_iou_0.5");
        CHECK(table[1] == "a,1.000000,1.000000,1.000000,1.000000,1.000000");
        CHECK(table[2].rfind("b,", 0) == 0);
        CHECK(slurp(root / "out" / "map_vs_threshold.svg").rfind("<svg", 0) == 0);
        CHECK(fs::exists(root / "out" / "training_curves.svg"));

        report({root / "b"}, root / "single");
        const auto own = EvalTable::read_csv(root / "b" / "eval.csv").mean_ap();
        const auto row = lines(root / "single" / "comparison.csv").at(1);
        std::string expected = "b";
        for (double m : own) {
            char buf[32];
            std::snprintf(buf, sizeof buf, ",%.6f", m);
            expected += buf;
        }
        CHECK(row == expected);

        fs::create_directories(root / "empty");
        try {
            report({root / "a", root / "empty"}, root / "out2");
            FAIL("expected an I/O error");
        } catch (const IoError& e) {
            CHECK(std::string(e.what()).find((root / "empty").string()) != std::string::npos);
        }
        CHECK_THROWS_AS(report({root / "nowhere"}, root / "out3"), IoError);
        CHECK_THROWS_AS(report({}, root / "out4"), ConfigError);
    }
}
