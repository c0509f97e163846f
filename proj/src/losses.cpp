#include "ivs/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ivs {

void LossWeights::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be a finite value >= 0");
}

double identification_loss(std::span<const double> probabilities, std::size_t label) {
    if (label >= probabilities.size())
        throw std::out_of_range("label " + std::to_string(label) + " out of range for " +
                                std::to_string(probabilities.size()) + " classes");
    return -std::log(std::max(probabilities[label], kProbabilityClamp));
}

double verification_loss(std::span<const double> probabilities, VerificationSignal s) {
    if (probabilities.size() != 2) throw ShapeError("verification distribution must have two entries");
    return -std::log(std::max(probabilities[s.index()], kProbabilityClamp));
}

double contrastive_loss(std::span<const double> f1, std::span<const double> f2, bool same, double margin) {
    if (f1.size() != f2.size()) throw ShapeError("contrastive loss: feature widths differ");
    if (!(margin > 0.0)) throw ConfigError("contrastive margin must be positive");
    double d2 = 0.0;
    for (std::size_t i = 0; i < f1.size(); ++i) d2 += (f1[i] - f2[i]) * (f1[i] - f2[i]);
    if (same) return d2;
    const double gap = std::max(0.0, margin - std::sqrt(d2));
    return gap * gap;
}

double overall_loss(double identification1, double identification2, double verification, LossWeights weights) {
    weights.validate();
    return identification1 + identification2 + weights.lambda * verification;
}

namespace ops {

template <typename T>
Var cross_entropy(Tape<T>& tape, Var probabilities, std::size_t label) {
    const auto& p = tape.value(probabilities);
    if (label >= p.size())
        throw std::out_of_range("label " + std::to_string(label) + " out of range for " + std::to_string(p.size()) +
                                " classes");
    const T clamp = static_cast<T>(kProbabilityClamp);
    const T value = -std::log(std::max(p[label], clamp));
    return tape.record(
        BasicTensor<T>::scalar(value), {probabilities},
        [label, clamp](Tape<T>& t, std::size_t self) {
            const Var in = t.parents(Var{self})[0];
            if (!t.requires_grad(in)) return;
            const T pl = t.value(in)[label];
            // Below the clamp the loss is constant in p.
            if (pl > clamp) t.grad_buffer(in)[label] -= t.upstream(self)[0] / pl;
        },
        "cross_entropy");
}

template <typename T>
Var contrastive(Tape<T>& tape, Var f1, Var f2, bool same, double margin) {
    if (!(margin > 0.0)) throw ConfigError("contrastive margin must be positive");
    const auto& a = tape.value(f1);
    const auto& b = tape.value(f2);
    if (a.shape() != b.shape()) throw ShapeError("contrastive loss: feature shapes differ");
    T d2{0};
    for (std::size_t i = 0; i < a.size(); ++i) d2 += (a[i] - b[i]) * (a[i] - b[i]);
    const T d = std::sqrt(d2);
    const T m = static_cast<T>(margin);
    T value;
    // dL/d(f1 - f2) = coeff * (f1 - f2)
    T coeff;
    if (same) {
        value = d2;
        coeff = T{2};
    } else if (d < m) {
        value = (m - d) * (m - d);
        coeff = d > T{0} ? -T{2} * (m - d) / d : T{0};
    } else {
        value = T{0};
        coeff = T{0};
    }
    return tape.record(
        BasicTensor<T>::scalar(value), {f1, f2},
        [coeff](Tape<T>& t, std::size_t self) {
            const auto& ps = t.parents(Var{self});
            const auto& x = t.value(ps[0]);
            const auto& y = t.value(ps[1]);
            const T up = t.upstream(self)[0];
            if (t.requires_grad(ps[0])) {
                auto& g = t.grad_buffer(ps[0]);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] += up * coeff * (x[i] - y[i]);
            }
            if (t.requires_grad(ps[1])) {
                auto& g = t.grad_buffer(ps[1]);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= up * coeff * (x[i] - y[i]);
            }
        },
        "contrastive");
}

template Var cross_entropy(Tape<double>&, Var, std::size_t);
template Var cross_entropy(Tape<float>&, Var, std::size_t);
template Var contrastive(Tape<double>&, Var, Var, bool, double);
template Var contrastive(Tape<float>&, Var, Var, bool, double);

}  // namespace ops

}  // namespace ivs
