#include "ivs/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <numeric>
#include <sstream>

namespace ivs {

std::string to_string(PairLoss loss) { return loss == PairLoss::verification ? "verification" : "contrastive"; }

PairLoss pair_loss_from_string(const std::string& name) {
    if (name == "verification") return PairLoss::verification;
    if (name == "contrastive") return PairLoss::contrastive;
    throw ConfigError("unknown loss '" + name + "' (expected verification or contrastive)");
}

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(same_ratio >= 0.0 && same_ratio <= 1.0)) throw ConfigError("same_ratio must lie in [0, 1]");
    if (!(margin > 0.0)) throw ConfigError("contrastive margin must be > 0");
    LossWeights{lambda}.validate();
}

nlohmann::json to_json(const TrainConfig& c) {
    return {{"learning_rate", c.learning_rate}, {"momentum", c.momentum},     {"batch_size", c.batch_size},
            {"iterations", c.iterations},       {"lambda", c.lambda},         {"same_ratio", c.same_ratio},
            {"seed", c.seed},                   {"loss", to_string(c.loss)}, {"margin", c.margin},
            {"shuffle_labels", c.shuffle_labels}};
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.iterations = j.value("iterations", c.iterations);
        c.lambda = j.value("lambda", c.lambda);
        c.same_ratio = j.value("same_ratio", c.same_ratio);
        c.seed = j.value("seed", c.seed);
        if (j.contains("loss")) c.loss = pair_loss_from_string(j.at("loss").get<std::string>());
        c.margin = j.value("margin", c.margin);
        c.shuffle_labels = j.value("shuffle_labels", c.shuffle_labels);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed train config: ") + e.what());
    }
    return c;
}

void sgd_step(Tensor& weights, const Tensor& gradient, Tensor& velocity, double learning_rate, double momentum) {
    if (weights.shape() != gradient.shape() || weights.shape() != velocity.shape())
        throw ShapeError("sgd_step: parameter " + shape_string(weights.shape()) + ", gradient " +
                         shape_string(gradient.shape()) + " and velocity " + shape_string(velocity.shape()) +
                         " must agree");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        velocity[i] = momentum * velocity[i] + gradient[i];
        weights[i] -= learning_rate * velocity[i];
    }
}

void sgd_step(SiameseModel<double>& model, std::span<const Tensor> gradients, MomentumState& state,
              double learning_rate, double momentum) {
    auto& params = model.parameters();
    if (gradients.size() != params.size()) throw ShapeError("sgd_step: one gradient per parameter expected");
    if (state.velocity.empty())
        for (const auto& p : params) state.velocity.emplace_back(p.value.shape());
    if (state.velocity.size() != params.size()) throw ShapeError("sgd_step: momentum state does not match model");
    for (std::size_t i = 0; i < params.size(); ++i)
        sgd_step(params[i].value, gradients[i], state.velocity[i], learning_rate, momentum);
}

void TrainingLog::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iteration,L_I1,L_I2,L_V,L,pair_accuracy\n";
    char line[256];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.iteration, r.identification1,
                      r.identification2, r.pair, r.total, r.pair_accuracy);
        out << line;
    }
}

TrainingLog TrainingLog::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    std::getline(in, line);
    if (line.rfind("iteration,", 0) != 0) throw IoError("malformed training log header in " + path.string());
    TrainingLog log;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TrainLogRow r;
        if (std::sscanf(line.c_str(), "%zu,%lf,%lf,%lf,%lf,%lf", &r.iteration, &r.identification1,
                        &r.identification2, &r.pair, &r.total, &r.pair_accuracy) != 6)
            throw IoError("malformed training log row in " + path.string() + ": " + line);
        log.rows.push_back(r);
    }
    return log;
}

bool predicts_same(const TrainConfig& config, const Tensor& verification_probabilities, const Tensor& f1,
                   const Tensor& f2) {
    if (config.loss == PairLoss::verification) return verification_probabilities[1] > verification_probabilities[0];
    double d2 = 0.0;
    for (std::size_t i = 0; i < f1.size(); ++i) d2 += (f1[i] - f2[i]) * (f1[i] - f2[i]);
    return std::sqrt(d2) < config.margin / 2.0;
}

BatchResult run_batch(const SiameseModel<double>& model, const Dataset& dataset, std::span<const PairSample> pairs,
                      const TrainConfig& config, bool with_gradients) {
    if (pairs.empty()) throw ConfigError("empty pair batch");
    const auto& cfg = model.config();
    Tape<double> tape;
    const auto params = bind_parameters(tape, model);
    const double inv = 1.0 / static_cast<double>(pairs.size());

    BatchResult r;
    std::vector<Var> terms;
    std::vector<double> coeffs;
    for (const auto& pair : pairs) {
        const Clip& a = dataset.clips.at(pair.first);
        const Clip& b = dataset.clips.at(pair.second);
        const Var c1 = tape.constant(a.volume, "clip1");
        const Var c2 = tape.constant(b.volume, "clip2");
        const Var f1 = feature_graph(tape, cfg, params, c1);
        const Var f2 = feature_graph(tape, cfg, params, c2);
        const Var li1 = ops::cross_entropy(tape, identification_graph(tape, cfg, params, f1), a.label);
        const Var li2 = ops::cross_entropy(tape, identification_graph(tape, cfg, params, f2), b.label);
        Var lp;
        Tensor pv;
        if (config.loss == PairLoss::verification) {
            const Var pv_var = verification_graph(tape, cfg, params, f1, f2);
            lp = ops::cross_entropy(tape, pv_var, pair.s.index());
            pv = tape.value(pv_var);
        } else {
            lp = ops::contrastive(tape, f1, f2, pair.s.same, config.margin);
        }
        r.identification1 += inv * tape.value(li1).item();
        r.identification2 += inv * tape.value(li2).item();
        r.pair += inv * tape.value(lp).item();
        if (predicts_same(config, pv, tape.value(f1), tape.value(f2)) == pair.s.same) ++r.verified;
        terms.insert(terms.end(), {li1, li2, lp});
        coeffs.insert(coeffs.end(), {inv, inv, config.lambda * inv});
    }
    const Var total = ops::weighted_sum(tape, terms, coeffs);
    r.total = tape.value(total).item();
    if (with_gradients) {
        tape.backward(total);
        r.gradients.reserve(params.size());
        for (Var p : params) r.gradients.push_back(tape.grad(p));
    }
    return r;
}

void check_compatible(const SiameseModel<double>& model, const Dataset& dataset) {
    const Shape input = model.config().input();
    for (const auto& clip : dataset.clips) {
        if (clip.volume.shape() != input)
            throw ConfigError("dataset clip shape " + shape_string(clip.volume.shape()) +
                              " does not match model input " + shape_string(input));
        if (clip.label >= model.config().n_classes)
            throw ConfigError("dataset label " + std::to_string(clip.label) + " exceeds the model's " +
                              std::to_string(model.config().n_classes) + " classes");
    }
}

Dataset with_shuffled_labels(const Dataset& dataset, std::uint64_t seed) {
    Dataset out = dataset;
    std::vector<std::size_t> labels;
    for (const auto& c : out.clips) labels.push_back(c.label);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(labels.begin(), labels.end(), rng);
    for (std::size_t i = 0; i < labels.size(); ++i) out.clips[i].label = labels[i];
    return out;
}

TrainingLog train(SiameseModel<double>& model, const Dataset& dataset, const TrainConfig& config,
                  const IterationObserver& observer) {
    config.validate();
    check_compatible(model, dataset);
    Dataset shuffled;
    if (config.shuffle_labels) shuffled = with_shuffled_labels(dataset, config.seed);
    const Dataset& data = config.shuffle_labels ? shuffled : dataset;

    std::mt19937_64 rng(config.seed);
    MomentumState state;
    TrainingLog log;
    std::deque<std::pair<std::size_t, std::size_t>> window;  // (correct, total) per iteration
    for (std::size_t it = 1; it <= config.iterations; ++it) {
        const auto pairs = sample_pairs(data, config.batch_size, config.same_ratio, rng);
        BatchResult r;
        try {
            r = run_batch(model, data, pairs, config, true);
        } catch (const NumericalError& e) {
            throw NumericalError("training diverged at iteration " + std::to_string(it) + ": " + e.what());
        }
        if (!std::isfinite(r.total))
            throw NumericalError("non-finite loss at iteration " + std::to_string(it));

        window.emplace_back(r.verified, pairs.size());
        if (window.size() > kAccuracyWindow) window.pop_front();
        std::size_t correct = 0, seen = 0;
        for (auto [c, n] : window) {
            correct += c;
            seen += n;
        }
        const TrainLogRow row{it, r.identification1, r.identification2, r.pair, r.total,
                              static_cast<double>(correct) / static_cast<double>(seen)};
        if (observer) observer(IterationRecord{it, pairs, model, row});
        sgd_step(model, r.gradients, state, config.learning_rate, config.momentum);
        log.rows.push_back(row);
    }
    return log;
}

double identification_accuracy(const SiameseModel<double>& model, const Dataset& dataset) {
    if (dataset.clips.empty()) return 0.0;
    std::size_t hits = 0;
    for (const auto& clip : dataset.clips) {
        const Tensor p = identify(model, clip.volume);
        const auto best = static_cast<std::size_t>(std::max_element(p.data().begin(), p.data().end()) - p.data().begin());
        if (best == clip.label) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.clips.size());
}

double verification_accuracy(const SiameseModel<double>& model, const Dataset& dataset, const TrainConfig& config,
                             std::size_t n_pairs, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const auto pairs = sample_pairs(dataset, n_pairs, 0.5, rng);
    std::size_t hits = 0;
    for (const auto& pair : pairs) {
        const auto out = siamese_forward(model, dataset.clips[pair.first].volume, dataset.clips[pair.second].volume);
        if (predicts_same(config, out.verification, out.f1, out.f2) == pair.s.same) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pairs.size());
}

}  // namespace ivs
