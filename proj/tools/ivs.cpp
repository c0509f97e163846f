// Command-line entry point: data generation, training, detection, evaluation,
// gradient checks, full runs and reports.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ivs/experiment.hpp"
#include "ivs/gradsuite.hpp"

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kNumerical = 3, kIo = 4 };

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> preset;
    std::optional<double> lambda;
    std::optional<std::string> loss;
};

ivs::ExperimentConfig resolve(const Overrides& o) {
    nlohmann::json j = nlohmann::json::object();
    if (!o.config.empty()) {
        std::ifstream in(o.config);
        if (!in) throw ivs::IoError("cannot read config " + o.config);
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ivs::ConfigError("config " + o.config + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw ivs::ConfigError("config " + o.config + " must hold a JSON object");
    }
    if (o.seed) j["seed"] = *o.seed;
    if (o.out) j["out"] = *o.out;
    if (o.preset) j["preset"] = *o.preset;
    if (o.lambda) j["train"]["lambda"] = *o.lambda;
    if (o.loss) j["train"]["loss"] = *o.loss;
    return ivs::experiment_config_from_json(j);
}

void print_summary(const ivs::RunSummary& s) {
    std::printf("lambda=%g loss=%s final_L=%.4f heldout_id=%.3f heldout_ver=%.3f\n", s.lambda,
                ivs::to_string(s.loss).c_str(), s.final_loss, s.heldout_identification, s.heldout_verification);
    for (std::size_t i = 0; i < s.thresholds.size(); ++i)
        std::printf("  mAP@%.1f = %.4f\n", s.thresholds[i], s.mean_ap[i]);
}

void print_eval(const ivs::EvalResult& r) {
    if (r.ignored_detections > 0)
        std::fprintf(stderr, "ignored %zu detections on unknown videos\n", r.ignored_detections);
    for (std::size_t i = 0; i < r.thresholds.size(); ++i)
        std::printf("mAP@%.1f = %.4f\n", r.thresholds[i], r.mean_ap[i]);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Joint identification-verification siamese network for temporal action detection"};
    app.require_subcommand(1);
    app.fallthrough();

    Overrides o;
    app.add_option("--config", o.config, "Experiment config (JSON)");
    app.add_option("--seed", o.seed, "Global seed");
    app.add_option("--out", o.out, "Output directory");
    app.add_option("--preset", o.preset, "Network preset")->check(CLI::IsMember({"tiny", "full"}));
    app.add_option("--lambda", o.lambda, "Verification loss weight");
    app.add_option("--loss", o.loss, "Pair loss")->check(CLI::IsMember({"verification", "contrastive"}));

    auto* gen = app.add_subcommand("gen-data", "Generate the training set, test videos and ground truth");
    auto* train = app.add_subcommand("train", "Train on the generated data and save a checkpoint");
    auto* detect = app.add_subcommand("detect", "Detect actions in the test videos");
    auto* eval = app.add_subcommand("eval", "Score detections against ground truth");

    auto* run = app.add_subcommand("run", "gen-data, train, detect and eval in one go");
    bool sweep_lambda = false, sweep_loss = false;
    run->add_flag("--sweep-lambda", sweep_lambda, "One run per lambda in {0, 0.5, 1, 2}");
    run->add_flag("--sweep-loss", sweep_loss, "Verification loss vs contrastive loss");

    auto* grad = app.add_subcommand("gradcheck", "Check every gradient against finite differences");
    ivs::GradSuiteOptions grad_options;
    grad->add_option("--instances", grad_options.instances, "Seeded instances per item");
    grad->add_flag("--corrupt-conv-backward", grad_options.corrupt_conv_backward,
                   "Negative control: break the conv weight gradient");

    auto* rep = app.add_subcommand("report", "Compare finished runs");
    std::vector<std::string> run_dirs;
    rep->add_option("runs", run_dirs, "Run directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfig;
    }

    try {
        if (*grad) {
            if (o.seed) grad_options.seed = *o.seed;
            bool ok = true;
            for (const auto& item : ivs::run_gradient_suite(grad_options)) {
                std::printf("%s\n", ivs::format_item(item).c_str());
                ok = ok && item.passed();
            }
            std::printf("gradient suite: %s\n", ok ? "PASS" : "FAIL");
            return ok ? kOk : kNumerical;
        }
        if (*rep) {
            std::vector<std::filesystem::path> dirs(run_dirs.begin(), run_dirs.end());
            const std::filesystem::path out = o.out.value_or("report");
            ivs::report(dirs, out);
            std::printf("wrote %s\n", (out / "comparison.csv").string().c_str());
            return kOk;
        }

        const ivs::ExperimentConfig config = resolve(o);
        if (*run) {
            if (sweep_lambda) {
                for (const auto& s : ivs::run_lambda_sweep(config)) print_summary(s);
            }
            if (sweep_loss) {
                for (const auto& s : ivs::run_loss_comparison(config)) print_summary(s);
            }
            if (!sweep_lambda && !sweep_loss) print_summary(ivs::run_experiment(config));
            return kOk;
        }
        std::filesystem::create_directories(config.out);
        if (*gen) ivs::stage_gen_data(config);
        if (*train) ivs::stage_train(config);
        if (*detect) ivs::stage_detect(config);
        if (*eval) print_eval(ivs::stage_eval(config));
        return kOk;
    } catch (const ivs::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kConfig;
    } catch (const ivs::ShapeError& e) {
        std::fprintf(stderr, "shape error: %s\n", e.what());
        return kConfig;
    } catch (const ivs::NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return kNumerical;
    } catch (const ivs::IoError& e) {
        std::fprintf(stderr, "I/O failure: %s\n", e.what());
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::fprintf(stderr, "I/O failure: %s\n", e.what());
        return kIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kOther;
    }
}
