#include "ivs/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace ivs {

namespace {

Var run(Tape<double>& tape, const ScalarGraph& fn, const std::vector<Tensor>& inputs, bool differentiable) {
    std::vector<Var> vars;
    vars.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const std::string name = "input" + std::to_string(i);
        vars.push_back(differentiable ? tape.leaf(inputs[i], name) : tape.constant(inputs[i], name));
    }
    const Var out = fn(tape, vars);
    if (tape.value(out).size() != 1)
        throw ShapeError("grad_check needs a scalar function, got shape " + shape_string(tape.value(out).shape()));
    return out;
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

double evaluate_scalar(const ScalarGraph& fn, const std::vector<Tensor>& inputs) {
    Tape<double> tape;
    return tape.value(run(tape, fn, inputs, false)).item();
}

std::vector<Tensor> analytic_gradients(const ScalarGraph& fn, const std::vector<Tensor>& inputs) {
    Tape<double> tape;
    const Var out = run(tape, fn, inputs, true);
    tape.backward(out);
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < inputs.size(); ++i) grads.push_back(tape.grad(Var{i}));
    return grads;
}

GradCheckResult grad_check(const ScalarGraph& fn, const std::vector<Tensor>& inputs, const GradCheckOptions& options) {
    if (!(options.epsilon > 0.0)) throw ConfigError("grad_check step must be positive");
    auto grads = analytic_gradients(fn, inputs);
    if (options.perturb_analytic) options.perturb_analytic(grads);

    GradCheckResult result;
    const double eps = options.epsilon;
    const double f0 = options.kink_threshold > 0.0 ? evaluate_scalar(fn, inputs) : 0.0;
    // Relative error of `analytic` against differences of f(h), the function
    // at offset h along the probed direction.
    auto compare = [&](double analytic, const std::function<double(double)>& f) {
        const double up = f(eps), down = f(-eps);
        const double err = relative_error(analytic, (up - down) / (2.0 * eps));
        if (options.kink_threshold <= 0.0) return err;
        const double right = (up - f0) / eps, left = (f0 - down) / eps;
        if (std::abs(right - left) <= options.kink_threshold * std::max({std::abs(right), std::abs(left), 1e-8}))
            return err;
        ++result.kink_probes;
        // Second-order one-sided differences, for a kink on one side only, and
        // the half-step central difference, for kinks on both sides.
        const double half_up = f(eps / 2), half_down = f(-eps / 2);
        const double right2 = (4.0 * half_up - 3.0 * f0 - up) / eps;
        const double left2 = (3.0 * f0 - 4.0 * half_down + down) / eps;
        const double half = (half_up - half_down) / eps;
        return std::min({err, relative_error(analytic, right2), relative_error(analytic, left2),
                         relative_error(analytic, half)});
    };
    auto note = [&](double err, std::string where) {
        ++result.checks;
        if (result.worst.empty() || err > result.max_relative_error) {
            result.max_relative_error = err;
            result.worst = std::move(where);
        }
    };

    std::mt19937_64 rng(options.sample_seed);
    std::vector<Tensor> probe = inputs;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        std::vector<std::size_t> coords(inputs[i].size());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coordinates_per_input > 0 && coords.size() > options.max_coordinates_per_input) {
            std::shuffle(coords.begin(), coords.end(), rng);
            coords.resize(options.max_coordinates_per_input);
            std::sort(coords.begin(), coords.end());
        }
        for (std::size_t c : coords) {
            const double x = inputs[i][c];
            auto f = [&](double h) {
                probe[i][c] = x + h;
                const double v = evaluate_scalar(fn, probe);
                probe[i][c] = x;
                return v;
            };
            note(compare(grads[i][c], f), "input " + std::to_string(i) + " [" + std::to_string(c) + "]");
        }
    }

    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t k = 0; k < options.random_directions; ++k) {
        // Unit-length direction, so the whole step has length epsilon.
        std::vector<Tensor> dir;
        double norm2 = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            Tensor d(inputs[i].shape());
            for (auto& v : d.data()) {
                v = normal(rng);
                norm2 += v * v;
            }
            dir.push_back(std::move(d));
        }
        double analytic = 0.0;
        for (std::size_t i = 0; i < inputs.size(); ++i)
            for (std::size_t c = 0; c < dir[i].size(); ++c) {
                dir[i][c] /= std::sqrt(norm2);
                analytic += grads[i][c] * dir[i][c];
            }
        auto f = [&](double h) {
            std::vector<Tensor> p = inputs;
            for (std::size_t i = 0; i < p.size(); ++i)
                for (std::size_t c = 0; c < p[i].size(); ++c) p[i][c] += h * dir[i][c];
            return evaluate_scalar(fn, p);
        };
        note(compare(analytic, f), "direction " + std::to_string(k));
    }
    return result;
}

}  // namespace ivs
