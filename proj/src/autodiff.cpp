#include "ivs/autodiff.hpp"

#include <stdexcept>

namespace ivs {

template <typename T>
Var Tape<T>::constant(BasicTensor<T> value, std::string name) {
    if (!value.all_finite()) throw NumericalError("non-finite value in input '" + name + "'");
    Node n;
    n.owned = std::move(value);
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::leaf(BasicTensor<T> value, std::string name) {
    Var v = constant(std::move(value), std::move(name));
    nodes_[v.id].requires_grad = true;
    return v;
}

template <typename T>
Var Tape<T>::leaf_ref(const BasicTensor<T>& value, std::string name) {
    Node n;
    n.external = &value;
    n.name = std::move(name);
    n.requires_grad = true;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
Var Tape<T>::record(BasicTensor<T> value, std::vector<Var> parents, BackwardFn backward, std::string name) {
    if (!value.all_finite()) throw NumericalError("non-finite value produced by " + name);
    Node n;
    n.owned = std::move(value);
    n.name = std::move(name);
    for (Var p : parents) n.requires_grad = n.requires_grad || node(p).requires_grad;
    n.parents = std::move(parents);
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

template <typename T>
const typename Tape<T>::Node& Tape<T>::node(Var v) const {
    if (v.id >= nodes_.size()) throw std::out_of_range("variable is not on this tape");
    return nodes_[v.id];
}

template <typename T>
const BasicTensor<T>& Tape<T>::value(Var v) const {
    return node(v).value();
}

template <typename T>
const std::vector<Var>& Tape<T>::parents(Var v) const {
    return node(v).parents;
}

template <typename T>
bool Tape<T>::requires_grad(Var v) const {
    return node(v).requires_grad;
}

template <typename T>
BasicTensor<T> Tape<T>::grad(Var v) const {
    if (!backward_done_) throw std::logic_error("grad() requested before backward()");
    const Node& n = node(v);
    if (n.grad.empty()) return BasicTensor<T>(n.value().shape());
    return n.grad;
}

template <typename T>
BasicTensor<T>& Tape<T>::grad_buffer(Var v) {
    Node& n = nodes_.at(v.id);
    if (n.grad.empty()) n.grad = BasicTensor<T>(n.value().shape());
    return n.grad;
}

template <typename T>
const BasicTensor<T>& Tape<T>::upstream(std::size_t node) const {
    return nodes_.at(node).grad;
}

template <typename T>
void Tape<T>::backward(Var root) {
    if (nodes_.empty() || root.id >= nodes_.size())
        throw std::logic_error("backward without forward: root is not on the tape");
    if (nodes_[root.id].value().size() != 1)
        throw ShapeError("backward root must be a scalar, got shape " + shape_string(nodes_[root.id].value().shape()));

    for (auto& n : nodes_) n.grad = BasicTensor<T>();
    backward_done_ = true;
    if (!nodes_[root.id].requires_grad) return;

    grad_buffer(root)[0] = T{1};
    for (std::size_t i = root.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
        if (!n.grad.all_finite()) throw NumericalError("non-finite gradient reaching " + n.name);
        n.backward(*this, i);
    }
}

template class Tape<double>;
template class Tape<float>;

namespace ops {

namespace {

template <typename T>
void accumulate(Tape<T>& tape, Var target, const BasicTensor<T>& delta) {
    if (!tape.requires_grad(target)) return;
    auto& g = tape.grad_buffer(target);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

}  // namespace

template <typename T>
Var conv3d(Tape<T>& tape, Var input, Var weights, Var bias, const ConvSpec& spec) {
    auto out = conv3d_forward(tape.value(input), tape.value(weights), tape.value(bias), spec);
    return tape.record(
        std::move(out), {input, weights, bias},
        [spec](Tape<T>& t, std::size_t self) {
            const auto& ps = t.parents(Var{self});
            auto g = conv3d_backward(t.value(ps[0]), t.value(ps[1]), t.upstream(self), spec);
            accumulate(t, ps[0], g.input);
            accumulate(t, ps[1], g.weights);
            accumulate(t, ps[2], g.bias);
        },
        "conv3d");
}

template <typename T>
Var maxpool3d(Tape<T>& tape, Var input, const PoolSpec& spec) {
    auto r = maxpool3d_forward(tape.value(input), spec);
    return tape.record(
        std::move(r.output), {input},
        [argmax = std::move(r.argmax)](Tape<T>& t, std::size_t self) {
            const Var in = t.parents(Var{self})[0];
            if (!t.requires_grad(in)) return;
            auto& g = t.grad_buffer(in);
            const auto& up = t.upstream(self);
            for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += up[i];
        },
        "maxpool3d");
}

template <typename T>
Var linear(Tape<T>& tape, Var input, Var weights, Var bias) {
    auto out = fc_forward(tape.value(input), tape.value(weights), tape.value(bias));
    return tape.record(
        std::move(out), {input, weights, bias},
        [](Tape<T>& t, std::size_t self) {
            const auto& ps = t.parents(Var{self});
            auto g = fc_backward(t.value(ps[0]), t.value(ps[1]), t.upstream(self));
            accumulate(t, ps[0], g.input);
            accumulate(t, ps[1], g.weights);
            accumulate(t, ps[2], g.bias);
        },
        "linear");
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
    return tape.record(
        relu_forward(tape.value(input)), {input},
        [](Tape<T>& t, std::size_t self) {
            const Var in = t.parents(Var{self})[0];
            if (!t.requires_grad(in)) return;
            const auto& x = t.value(in);
            const auto& up = t.upstream(self);
            auto& g = t.grad_buffer(in);
            for (std::size_t i = 0; i < x.size(); ++i)
                if (x[i] > T{0}) g[i] += up[i];
        },
        "relu");
}

template <typename T>
Var softmax(Tape<T>& tape, Var logits) {
    return tape.record(
        softmax_forward(tape.value(logits)), {logits},
        [](Tape<T>& t, std::size_t self) {
            const Var in = t.parents(Var{self})[0];
            if (!t.requires_grad(in)) return;
            const auto& y = t.value(Var{self});
            const auto& up = t.upstream(self);
            T dot{0};
            for (std::size_t i = 0; i < y.size(); ++i) dot += up[i] * y[i];
            auto& g = t.grad_buffer(in);
            for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (up[i] - dot);
        },
        "softmax");
}

template <typename T>
Var abs_diff(Tape<T>& tape, Var a, Var b) {
    return tape.record(
        abs_diff_forward(tape.value(a), tape.value(b)), {a, b},
        [](Tape<T>& t, std::size_t self) {
            const auto& ps = t.parents(Var{self});
            const auto& x = t.value(ps[0]);
            const auto& y = t.value(ps[1]);
            const auto& up = t.upstream(self);
            BasicTensor<T> da(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) {
                const T d = x[i] - y[i];
                da[i] = d > T{0} ? up[i] : (d < T{0} ? -up[i] : T{0});
            }
            accumulate(t, ps[0], da);
            if (t.requires_grad(ps[1])) {
                auto& g = t.grad_buffer(ps[1]);
                for (std::size_t i = 0; i < g.size(); ++i) g[i] -= da[i];
            }
        },
        "abs_diff");
}

template <typename T>
Var flatten(Tape<T>& tape, Var input) {
    const auto& x = tape.value(input);
    return tape.record(
        x.reshaped(Shape{x.size()}), {input},
        [](Tape<T>& t, std::size_t self) {
            const Var in = t.parents(Var{self})[0];
            if (!t.requires_grad(in)) return;
            auto& g = t.grad_buffer(in);
            const auto& up = t.upstream(self);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += up[i];
        },
        "flatten");
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
    T total{0};
    for (T v : tape.value(input).data()) total += v;
    return tape.record(
        BasicTensor<T>::scalar(total), {input},
        [](Tape<T>& t, std::size_t self) {
            const Var in = t.parents(Var{self})[0];
            if (!t.requires_grad(in)) return;
            auto& g = t.grad_buffer(in);
            const T up = t.upstream(self)[0];
            for (auto& v : g.data()) v += up;
        },
        "sum");
}

template <typename T>
Var weighted_sum(Tape<T>& tape, const std::vector<Var>& terms, const std::vector<T>& coeffs) {
    if (terms.size() != coeffs.size() || terms.empty())
        throw ShapeError("weighted_sum needs one coefficient per term");
    T total{0};
    for (std::size_t i = 0; i < terms.size(); ++i) {
        const auto& v = tape.value(terms[i]);
        if (v.size() != 1) throw ShapeError("weighted_sum terms must be scalars");
        total += coeffs[i] * v[0];
    }
    return tape.record(
        BasicTensor<T>::scalar(total), terms,
        [coeffs](Tape<T>& t, std::size_t self) {
            const auto& ps = t.parents(Var{self});
            const T up = t.upstream(self)[0];
            for (std::size_t i = 0; i < ps.size(); ++i)
                if (t.requires_grad(ps[i])) t.grad_buffer(ps[i])[0] += coeffs[i] * up;
        },
        "weighted_sum");
}

#define IVS_INSTANTIATE_OPS(T)                                                          \
    template Var conv3d(Tape<T>&, Var, Var, Var, const ConvSpec&);                      \
    template Var maxpool3d(Tape<T>&, Var, const PoolSpec&);                             \
    template Var linear(Tape<T>&, Var, Var, Var);                                       \
    template Var relu(Tape<T>&, Var);                                                   \
    template Var softmax(Tape<T>&, Var);                                                \
    template Var abs_diff(Tape<T>&, Var, Var);                                          \
    template Var flatten(Tape<T>&, Var);                                                \
    template Var sum(Tape<T>&, Var);                                                    \
    template Var weighted_sum(Tape<T>&, const std::vector<Var>&, const std::vector<T>&);

IVS_INSTANTIATE_OPS(double)
IVS_INSTANTIATE_OPS(float)

#undef IVS_INSTANTIATE_OPS

}  // namespace ops

}  // namespace ivs
