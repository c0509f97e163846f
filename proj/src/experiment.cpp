#include "ivs/experiment.hpp"

#include <cstdio>
#include <fstream>
#include <set>

#include "ivs/plot.hpp"

namespace ivs {

namespace fs = std::filesystem;

namespace {

// Streams for derive_seed.
enum : std::uint64_t { kDataStream = 1, kTrainStream = 2, kInitStream = 3, kHeldoutStream = 4, kVideoStream = 5, kPairStream = 6 };

std::string format_number(const char* fmt, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed JSON in " + path.string() + ": " + e.what());
    }
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void make_dirs(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

void reject_seed(const nlohmann::json& j, const char* section) {
    if (j.is_object() && j.contains("seed"))
        throw ConfigError(std::string(section) + ".seed cannot be set; it is derived from the top-level seed");
}

nlohmann::json without_seed(nlohmann::json j) {
    j.erase("seed");
    return j;
}

std::vector<std::string> read_video_index(const fs::path& out) {
    const auto j = read_json(out / "videos" / "index.json");
    try {
        return j.at("videos").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed video index: " + std::string(e.what()));
    }
}

[[noreturn]] void rethrow_tagged(const std::string& stage) {
    const std::string tag = "[" + stage + "] ";
    try {
        throw;
    } catch (const ConfigError& e) {
        throw ConfigError(tag + e.what());
    } catch (const ShapeError& e) {
        throw ShapeError(tag + e.what());
    } catch (const NumericalError& e) {
        throw NumericalError(tag + e.what());
    } catch (const IoError& e) {
        throw IoError(tag + e.what());
    } catch (const fs::filesystem_error& e) {
        throw IoError(tag + e.what());
    } catch (const std::exception& e) {
        throw std::runtime_error(tag + e.what());
    }
}

template <typename Fn>
auto staged(const ExperimentConfig& config, const std::string& stage, Fn&& fn) {
    try {
        return fn();
    } catch (const std::exception& e) {
        std::ofstream marker(config.out / kFailedMarker);
        marker << "stage: " << stage << '\n' << "error: " << e.what() << '\n';
        rethrow_tagged(stage);
    }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

void VideoSetSpec::validate() const {
    if (count < 1) throw ConfigError("videos.count must be >= 1");
    if (length < 1) throw ConfigError("videos.length must be >= 1");
}

SyntheticDatasetSpec ExperimentConfig::default_dataset() {
    SyntheticDatasetSpec s;
    s.background_clips = 20;
    return s;
}

NetworkConfig ExperimentConfig::network() const {
    NetworkConfig n = NetworkConfig::preset(preset, dataset.n_classes + 1);
    n.seed = derive_seed(seed, kInitStream);
    return n;
}

SyntheticDatasetSpec ExperimentConfig::training_data() const {
    SyntheticDatasetSpec s = dataset;
    s.seed = derive_seed(seed, kDataStream);
    return s;
}

SyntheticDatasetSpec ExperimentConfig::heldout_data() const {
    SyntheticDatasetSpec s = dataset;
    s.seed = derive_seed(seed, kHeldoutStream);
    s.clips_per_class = heldout_clips_per_class;
    return s;
}

TrainConfig ExperimentConfig::training() const {
    TrainConfig t = train;
    t.seed = derive_seed(seed, kTrainStream);
    return t;
}

std::uint64_t ExperimentConfig::video_seed(std::size_t index) const {
    return derive_seed(derive_seed(seed, kVideoStream), index);
}

void ExperimentConfig::validate() const {
    const NetworkConfig net = network();
    net.validate();
    dataset.validate();
    const auto& c = dataset.clip_shape;
    if (Shape{c[0], c[1], c[2], c[3]} != net.input())
        throw ConfigError("dataset clip_shape " + shape_string(Shape{c[0], c[1], c[2], c[3]}) + " does not match the " +
                          preset + " preset input " + shape_string(net.input()));
    train.validate();
    proposals.validate();
    if (!(nms_threshold >= 0.0 && nms_threshold <= 1.0)) throw ConfigError("nms_threshold must lie in [0, 1]");
    if (iou_thresholds.empty()) throw ConfigError("at least one IoU threshold is required");
    for (double t : iou_thresholds)
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("IoU thresholds must lie in [0, 1]");
    videos.validate();
    if (heldout_clips_per_class < 2) throw ConfigError("heldout.clips_per_class must be >= 2");
    if (heldout_pairs < 1) throw ConfigError("heldout.pairs must be >= 1");
}

nlohmann::json to_json(const ExperimentConfig& c) {
    return {{"preset", c.preset},
            {"seed", c.seed},
            {"out", c.out.string()},
            {"dataset", without_seed(to_json(c.dataset))},
            {"train", without_seed(to_json(c.train))},
            {"proposals", to_json(c.proposals)},
            {"nms_threshold", c.nms_threshold},
            {"iou_thresholds", c.iou_thresholds},
            {"videos",
             {{"count", c.videos.count},
              {"length", c.videos.length},
              {"instances", c.videos.instances},
              {"min_gap", c.videos.min_gap}}},
            {"heldout", {{"clips_per_class", c.heldout_clips_per_class}, {"pairs", c.heldout_pairs}}}};
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    static const std::set<std::string> known{"preset",         "seed",   "out",    "dataset", "train", "proposals",
                                             "nms_threshold", "iou_thresholds", "videos", "heldout"};
    for (const auto& [key, value] : j.items())
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
    ExperimentConfig c;
    try {
        c.preset = j.value("preset", c.preset);
        c.seed = j.value("seed", c.seed);
        c.out = j.value("out", c.out.string());

        // Clips follow the preset's input shape unless set explicitly.
        SyntheticDatasetSpec data_defaults = ExperimentConfig::default_dataset();
        data_defaults.clip_shape = NetworkConfig::preset(c.preset, data_defaults.n_classes + 1).input_shape;
        const auto data = j.value("dataset", nlohmann::json::object());
        reject_seed(data, "dataset");
        c.dataset = dataset_spec_from_json(data, data_defaults);

        const auto train = j.value("train", nlohmann::json::object());
        reject_seed(train, "train");
        c.train = train_config_from_json(train, c.train);
        c.proposals = proposal_spec_from_json(j.value("proposals", nlohmann::json::object()), c.proposals);
        c.nms_threshold = j.value("nms_threshold", c.nms_threshold);
        c.iou_thresholds = j.value("iou_thresholds", c.iou_thresholds);
        const auto videos = j.value("videos", nlohmann::json::object());
        c.videos.count = videos.value("count", c.videos.count);
        c.videos.length = videos.value("length", c.videos.length);
        c.videos.instances = videos.value("instances", c.videos.instances);
        c.videos.min_gap = videos.value("min_gap", c.videos.min_gap);
        const auto heldout = j.value("heldout", nlohmann::json::object());
        c.heldout_clips_per_class = heldout.value("clips_per_class", c.heldout_clips_per_class);
        c.heldout_pairs = heldout.value("pairs", c.heldout_pairs);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return experiment_config_from_json(j);
}

void stage_gen_data(const ExperimentConfig& config) {
    const SyntheticDatasetSpec spec = config.training_data();
    save_dataset(generate_synthetic_dataset(spec), config.out / "data");

    make_dirs(config.out / "videos");
    std::vector<std::string> ids;
    std::vector<GroundTruthInstance> truth;
    for (std::size_t i = 0; i < config.videos.count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "video-%03zu", i);
        const auto video = generate_untrimmed_video(spec, id, config.videos.length, config.videos.instances,
                                                    config.video_seed(i), config.videos.min_gap);
        save_tensor(video.frames, config.out / "videos" / id);
        ids.push_back(id);
        truth.insert(truth.end(), video.instances.begin(), video.instances.end());
    }
    write_text(config.out / "videos" / "index.json", nlohmann::json{{"videos", ids}}.dump(2) + "\n");
    write_ground_truth(config.out / "ground_truth.jsonl", truth);
}

void stage_train(const ExperimentConfig& config) {
    const Dataset dataset = load_dataset(config.out / "data");
    auto model = build_model<double>(config.network());
    const TrainingLog log = train(model, dataset, config.training());
    save_checkpoint(model, config.out / "model");
    log.write_csv(config.out / "train_log.csv");
}

void stage_detect(const ExperimentConfig& config) {
    const auto model = load_checkpoint<double>(config.out / "model");
    std::vector<Detection> all;
    for (const auto& id : read_video_index(config.out)) {
        const UntrimmedVideo video{id, load_tensor<double>(config.out / "videos" / id), {}};
        const auto proposals =
            generate_proposals(video.length(), config.proposals.window_lengths, config.proposals.stride_fraction);
        const auto kept = nms(classify_proposals(model, video, proposals), config.nms_threshold);
        all.insert(all.end(), kept.begin(), kept.end());
    }
    sort_for_evaluation(all);
    write_detections(config.out / "detections.jsonl", all);
}

EvalResult stage_eval(const ExperimentConfig& config) {
    const auto detections = read_detections(config.out / "detections.jsonl");
    const auto truth = read_ground_truth(config.out / "ground_truth.jsonl");
    const auto videos = read_video_index(config.out);
    const EvalResult result = evaluate(detections, truth, config.iou_thresholds, videos);
    result.write_csv(config.out / "eval.csv");
    return result;
}

RunSummary summarize(const ExperimentConfig& config) {
    const auto model = load_checkpoint<double>(config.out / "model");
    const Dataset heldout = generate_synthetic_dataset(config.heldout_data());
    const TrainingLog log = TrainingLog::read_csv(config.out / "train_log.csv");
    const EvalTable table = EvalTable::read_csv(config.out / "eval.csv");

    RunSummary s;
    s.lambda = config.train.lambda;
    s.loss = config.train.loss;
    s.iterations = config.train.iterations;
    s.final_loss = log.rows.empty() ? 0.0 : log.rows.back().total;
    s.heldout_identification = identification_accuracy(model, heldout);
    s.heldout_verification = verification_accuracy(model, heldout, config.training(), config.heldout_pairs,
                                                   derive_seed(config.seed, kPairStream));
    s.thresholds = table.thresholds;
    s.mean_ap = table.mean_ap();
    return s;
}

void write_summary_csv(const fs::path& path, const std::vector<RunSummary>& rows) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "lambda,loss,iterations,final_L,heldout_identification,heldout_verification";
    if (!rows.empty())
        for (double t : rows.front().thresholds) out << ",mAP_iou_" << format_number("%g", t);
    out << '\n';
    for (const auto& r : rows) {
        out << format_number("%g", r.lambda) << ',' << to_string(r.loss) << ',' << r.iterations << ','
            << format_number("%.6f", r.final_loss) << ',' << format_number("%.6f", r.heldout_identification) << ','
            << format_number("%.6f", r.heldout_verification);
        for (double m : r.mean_ap) out << ',' << format_number("%.6f", m);
        out << '\n';
    }
}

RunSummary run_experiment(const ExperimentConfig& config) {
    config.validate();
    make_dirs(config.out);
    fs::remove(config.out / kFailedMarker);
    write_text(config.out / "config.json", to_json(config).dump(2) + "\n");
    staged(config, "gen-data", [&] { stage_gen_data(config); });
    staged(config, "train", [&] { stage_train(config); });
    staged(config, "detect", [&] { stage_detect(config); });
    staged(config, "eval", [&] { stage_eval(config); });
    return staged(config, "summary", [&] {
        RunSummary s = summarize(config);
        write_summary_csv(config.out / "summary.csv", {s});
        return s;
    });
}

std::vector<RunSummary> run_lambda_sweep(const ExperimentConfig& config) {
    std::vector<RunSummary> rows;
    for (double lambda : kLambdaSweep) {
        ExperimentConfig sub = config;
        sub.train.lambda = lambda;
        sub.out = config.out / ("lambda_" + format_number("%g", lambda));
        rows.push_back(run_experiment(sub));
    }
    write_summary_csv(config.out / "lambda_sweep.csv", rows);
    return rows;
}

std::vector<RunSummary> run_loss_comparison(const ExperimentConfig& config) {
    std::vector<RunSummary> rows;
    for (PairLoss loss : {PairLoss::verification, PairLoss::contrastive}) {
        ExperimentConfig sub = config;
        sub.train.loss = loss;
        sub.out = config.out / ("loss_" + to_string(loss));
        rows.push_back(run_experiment(sub));
    }
    write_summary_csv(config.out / "loss_comparison.csv", rows);
    return rows;
}

void report(const std::vector<fs::path>& runs, const fs::path& out) {
    if (runs.empty()) throw ConfigError("report needs at least one run directory");
    std::vector<std::string> names;
    std::vector<EvalTable> tables;
    for (const auto& dir : runs) {
        if (!fs::is_directory(dir)) throw IoError("run directory not found: " + dir.string());
        if (!fs::exists(dir / "eval.csv")) throw IoError("no eval.csv in run directory " + dir.string());
        tables.push_back(EvalTable::read_csv(dir / "eval.csv"));
        if (tables.back().thresholds != tables.front().thresholds)
            throw IoError("run " + dir.string() + " uses different IoU thresholds from " + runs.front().string());
        const fs::path clean = dir.lexically_normal();
        names.push_back(clean.has_filename() ? clean.filename().string() : clean.parent_path().filename().string());
    }
    make_dirs(out);

    std::ofstream csv(out / "comparison.csv");
    if (!csv) throw IoError("cannot write " + (out / "comparison.csv").string());
    csv << "run";
    for (double t : tables.front().thresholds) csv << ",mAP_iou_" << format_number("%g", t);
    csv << '\n';
    std::vector<PlotSeries> map_series, loss_series;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        csv << names[i];
        for (double m : tables[i].mean_ap()) csv << ',' << format_number("%.6f", m);
        csv << '\n';
        map_series.push_back({names[i], tables[i].thresholds, tables[i].mean_ap()});
        if (fs::exists(runs[i] / "train_log.csv")) {
            PlotSeries s{names[i], {}, {}};
            for (const auto& row : TrainingLog::read_csv(runs[i] / "train_log.csv").rows) {
                s.x.push_back(static_cast<double>(row.iteration));
                s.y.push_back(row.total);
            }
            loss_series.push_back(std::move(s));
        }
    }
    write_svg_plot(out / "map_vs_threshold.svg", "mAP vs IoU threshold", "IoU threshold", "mAP", map_series);
    write_svg_plot(out / "training_curves.svg", "Training loss", "iteration", "L", loss_series);
}

}  // namespace ivs
