#include "ivs/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>

#include "ivs/gradcheck.hpp"
#include "ivs/losses.hpp"
#include "ivs/network.hpp"

namespace ivs {

namespace {

using Rng = std::mt19937_64;

Tensor normal_tensor(Shape shape, Rng& rng, double sigma = 1.0) {
    Tensor t(std::move(shape));
    std::normal_distribution<double> n(0.0, sigma);
    for (auto& v : t.data()) v = n(rng);
    return t;
}

// Normal entries kept at least `gap` away from zero, so a probe never crosses a kink.
Tensor off_kink_tensor(Shape shape, Rng& rng, double gap = 1e-2) {
    Tensor t = normal_tensor(std::move(shape), rng);
    for (auto& v : t.data())
        if (std::abs(v) < gap) v = v < 0 ? v - gap : v + gap;
    return t;
}

// A shuffled ramp: all entries distinct and spaced, so pooling has no near-ties.
Tensor distinct_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    std::vector<double> ramp(t.size());
    std::iota(ramp.begin(), ramp.end(), 0.0);
    std::shuffle(ramp.begin(), ramp.end(), rng);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = (ramp[i] - static_cast<double>(t.size()) / 2) * 0.05;
    return t;
}

// Random linear functional of x, making any op's output a scalar.
Var project(Tape<double>& tape, Var x, const Tensor& r) {
    const Var flat = ops::flatten(tape, x);
    const Var w = tape.constant(r.reshaped({1, r.size()}), "projection");
    const Var b = tape.constant(Tensor(Shape{1}), "projection.bias");
    return ops::linear(tape, flat, w, b);
}

Var corrupted_conv3d(Tape<double>& tape, Var input, Var weights, Var bias, const ConvSpec& spec) {
    auto out = conv3d_forward(tape.value(input), tape.value(weights), tape.value(bias), spec);
    return tape.record(
        std::move(out), {input, weights, bias},
        [spec](Tape<double>& t, std::size_t self) {
            const auto& ps = t.parents(Var{self});
            auto g = conv3d_backward(t.value(ps[0]), t.value(ps[1]), t.upstream(self), spec);
            for (auto& v : g.weights.data()) v *= 1.05;
            const Tensor* parts[] = {&g.input, &g.weights, &g.bias};
            for (std::size_t i = 0; i < 3; ++i) {
                if (!t.requires_grad(ps[i])) continue;
                auto& buf = t.grad_buffer(ps[i]);
                for (std::size_t k = 0; k < buf.size(); ++k) buf[k] += (*parts[i])[k];
            }
        },
        "conv3d(corrupted)");
}

struct Instance {
    ScalarGraph fn;
    std::vector<Tensor> inputs;
    GradCheckOptions options;
};

using Maker = std::function<Instance(Rng&, std::size_t index)>;

GradSuiteItem run_item(const std::string& name, double tolerance, const Maker& make, const GradSuiteOptions& o,
                       std::uint64_t item_seed) {
    GradSuiteItem item{name, tolerance, 0.0, 0, 0, 0.0, ""};
    for (std::size_t k = 0; k < o.instances; ++k) {
        Rng rng(o.seed * 1000003ULL + item_seed * 101ULL + k);
        Instance inst = make(rng, k);
        inst.options.sample_seed = rng();
        const auto r = grad_check(inst.fn, inst.inputs, inst.options);
        item.checks += r.checks;
        item.kink_probes += r.kink_probes;
        if (item.worst.empty() || r.max_relative_error > item.max_relative_error) {
            item.max_relative_error = r.max_relative_error;
            item.worst = "instance " + std::to_string(k) + ", " + r.worst;
        }
    }
    return item;
}

Instance conv_instance(Rng& rng, std::size_t k, bool corrupt) {
    ConvSpec spec;
    spec.out_channels = 3;
    if (k % 2 == 1) spec.stride = {1, 2, 2};
    if (k % 3 == 2) spec.padding = {0, 1, 0};
    const Tensor x = normal_tensor({2, 4, 5, 5}, rng);
    const Tensor w = normal_tensor({3, 2, 3, 3, 3}, rng, 0.3);
    const Tensor b = normal_tensor({3}, rng);
    const Shape out = conv3d_output_shape(x.shape(), w.shape(), spec);
    const Tensor r = normal_tensor(out, rng);
    return {[spec, r, corrupt](Tape<double>& t, std::span<const Var> in) {
                const Var y = corrupt ? corrupted_conv3d(t, in[0], in[1], in[2], spec)
                                      : ops::conv3d(t, in[0], in[1], in[2], spec);
                return project(t, y, r);
            },
            {x, w, b},
            {}};
}

Instance pool_instance(Rng& rng, std::size_t k) {
    PoolSpec spec;
    if (k % 2 == 1) spec.temporal_kernel = spec.temporal_stride = 1;
    if (k % 3 == 2) spec.spatial_padding = 1;
    const Tensor x = distinct_tensor({2, 4, 6, 6}, rng);
    const Tensor r = normal_tensor(maxpool3d_output_shape(x.shape(), spec), rng);
    return {[spec, r](Tape<double>& t, std::span<const Var> in) { return project(t, ops::maxpool3d(t, in[0], spec), r); },
            {x},
            {}};
}

Instance fc_instance(Rng& rng, std::size_t) {
    const Tensor x = normal_tensor({6}, rng), w = normal_tensor({4, 6}, rng), b = normal_tensor({4}, rng);
    const Tensor r = normal_tensor({4}, rng);
    return {[r](Tape<double>& t, std::span<const Var> in) { return project(t, ops::linear(t, in[0], in[1], in[2]), r); },
            {x, w, b},
            {}};
}

Instance relu_instance(Rng& rng, std::size_t) {
    const Tensor x = off_kink_tensor({3, 7}, rng), r = normal_tensor({3, 7}, rng);
    return {[r](Tape<double>& t, std::span<const Var> in) { return project(t, ops::relu(t, in[0]), r); }, {x}, {}};
}

Instance softmax_instance(Rng& rng, std::size_t) {
    const Tensor x = normal_tensor({6}, rng, 2.0), r = normal_tensor({6}, rng);
    return {[r](Tape<double>& t, std::span<const Var> in) { return project(t, ops::softmax(t, in[0]), r); }, {x}, {}};
}

Instance abs_diff_instance(Rng& rng, std::size_t) {
    const Tensor a = normal_tensor({9}, rng);
    Tensor b = off_kink_tensor({9}, rng);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] += a[i];  // a - b stays off zero
    const Tensor r = normal_tensor({9}, rng);
    return {[r](Tape<double>& t, std::span<const Var> in) { return project(t, ops::abs_diff(t, in[0], in[1]), r); },
            {a, b},
            {}};
}

Instance identification_instance(Rng& rng, std::size_t k) {
    const Tensor logits = normal_tensor({5}, rng, 1.5);
    const std::size_t label = k % 5;
    return {[label](Tape<double>& t, std::span<const Var> in) {
                return ops::cross_entropy(t, ops::softmax(t, in[0]), label);
            },
            {logits},
            {}};
}

Instance verification_instance(Rng& rng, std::size_t k) {
    const Tensor logits = normal_tensor({2}, rng, 1.5);
    const VerificationSignal s{k % 2 == 0};
    return {[s](Tape<double>& t, std::span<const Var> in) {
                return ops::cross_entropy(t, ops::softmax(t, in[0]), s.index());
            },
            {logits},
            {}};
}

Instance contrastive_instance(Rng& rng, std::size_t k) {
    const bool same = k % 2 == 0;
    const double margin = 2.0;
    Tensor f1 = normal_tensor({6}, rng), f2 = normal_tensor({6}, rng);
    if (!same) {
        // Place the pair inside the margin so the hinge is active.
        double d = 0.0;
        for (std::size_t i = 0; i < 6; ++i) d += (f1[i] - f2[i]) * (f1[i] - f2[i]);
        const double scale = (0.3 + 0.4 * std::uniform_real_distribution<double>()(rng)) * margin / std::sqrt(d);
        for (std::size_t i = 0; i < 6; ++i) f2[i] = f1[i] + (f2[i] - f1[i]) * scale;
    }
    return {[same, margin](Tape<double>& t, std::span<const Var> in) {
                return ops::contrastive(t, in[0], in[1], same, margin);
            },
            {f1, f2},
            {}};
}

// Both identification heads and the verification head on free feature vectors.
Instance joint_instance(Rng& rng, std::size_t k) {
    constexpr std::size_t D = 6, C = 4;
    const double lambdas[] = {0.0, 0.5, 1.0, 2.0, 1.0};
    const double lambda = lambdas[k % 5];
    const std::size_t l1 = k % C, l2 = (k + 1 + k / 2) % C;
    const VerificationSignal s{l1 == l2};
    std::vector<Tensor> inputs{off_kink_tensor({D}, rng), off_kink_tensor({D}, rng), normal_tensor({C, D}, rng),
                               normal_tensor({C}, rng),   normal_tensor({2, D}, rng), normal_tensor({2}, rng)};
    for (std::size_t i = 0; i < D; ++i) inputs[1][i] += inputs[0][i];
    return {[=](Tape<double>& t, std::span<const Var> in) {
                const Var p1 = ops::softmax(t, ops::linear(t, in[0], in[2], in[3]));
                const Var p2 = ops::softmax(t, ops::linear(t, in[1], in[2], in[3]));
                const Var pv = ops::softmax(t, ops::linear(t, ops::abs_diff(t, in[0], in[1]), in[4], in[5]));
                return ops::weighted_sum(t, {ops::cross_entropy(t, p1, l1), ops::cross_entropy(t, p2, l2),
                                             ops::cross_entropy(t, pv, s.index())},
                                         {1.0, 1.0, lambda});
            },
            inputs,
            {}};
}

Instance model_instance(Rng& rng, std::size_t k, const GradSuiteOptions& o) {
    NetworkConfig cfg = NetworkConfig::tiny(5);
    cfg.seed = rng();
    const auto model = build_model<double>(cfg);
    std::vector<Tensor> inputs;
    for (const auto& p : model.parameters()) inputs.push_back(p.value);
    const Tensor c1 = normal_tensor(cfg.input(), rng), c2 = normal_tensor(cfg.input(), rng);
    const std::size_t l1 = 1 + k % 4, l2 = k % 2 == 0 ? l1 : 1 + (k + 1) % 4;
    const double lambda = k == 1 ? 0.5 : 1.0;
    GradCheckOptions options;
    options.max_coordinates_per_input = o.model_coordinates_per_tensor;
    options.random_directions = o.model_directions;
    options.kink_threshold = o.model_kink_threshold;
    return {[=](Tape<double>& t, std::span<const Var> params) {
                const auto v = siamese_graph(t, cfg, params, t.constant(c1, "clip1"), t.constant(c2, "clip2"));
                return ops::weighted_sum(t,
                                         {ops::cross_entropy(t, v.p1, l1), ops::cross_entropy(t, v.p2, l2),
                                          ops::cross_entropy(t, v.verification, VerificationSignal{l1 == l2}.index())},
                                         {1.0, 1.0, lambda});
            },
            inputs,
            options};
}

}  // namespace

std::vector<GradSuiteItem> run_gradient_suite(const GradSuiteOptions& o) {
    const double lt = o.layer_tolerance;
    const bool corrupt = o.corrupt_conv_backward;
    std::vector<GradSuiteItem> items;
    items.push_back(run_item("conv3d", lt, [corrupt](Rng& r, std::size_t k) { return conv_instance(r, k, corrupt); }, o, 1));
    items.push_back(run_item("maxpool3d", lt, pool_instance, o, 2));
    items.push_back(run_item("fc", lt, fc_instance, o, 3));
    items.push_back(run_item("relu", lt, relu_instance, o, 4));
    items.push_back(run_item("softmax", lt, softmax_instance, o, 5));
    items.push_back(run_item("abs_diff", lt, abs_diff_instance, o, 6));
    items.push_back(run_item("identification_loss", lt, identification_instance, o, 7));
    items.push_back(run_item("verification_loss", lt, verification_instance, o, 8));
    items.push_back(run_item("contrastive_loss", lt, contrastive_instance, o, 9));
    items.push_back(run_item("joint_loss", lt, joint_instance, o, 10));
    items.push_back(run_item("tiny_model_joint_loss", o.model_tolerance,
                             [&o](Rng& r, std::size_t k) { return model_instance(r, k, o); }, o, 11));
    items.back().max_kink_fraction = o.max_kink_fraction;
    return items;
}

std::string format_item(const GradSuiteItem& item) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s max_rel_err=%.3e  tol=%.0e  checks=%zu  kink_probes=%zu  %s",
                  item.name.c_str(), item.max_relative_error, item.tolerance, item.checks, item.kink_probes,
                  item.passed() ? "PASS" : "FAIL");
    std::string line = buf;
    if (!item.passed()) line += "  (worst: " + item.worst + ")";
    return line;
}

}  // namespace ivs
