#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ivs/kernels.hpp"
#include "ivs/tensor.hpp"

namespace ivs {

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = 0;
};

/// Reverse-mode gradient tape. Values are recorded in execution order and
/// never mutated; backward() walks the records in reverse and accumulates
/// gradients into every node that requires one.
///
/// A leaf bound with leaf_ref() reads external storage without copying it, so
/// a model's parameters bound once can feed both siamese branches and receive
/// the summed gradient of both.
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t node)>;

    Var constant(BasicTensor<T> value, std::string name = "constant");
    Var leaf(BasicTensor<T> value, std::string name = "leaf");
    Var leaf_ref(const BasicTensor<T>& value, std::string name = "parameter");

    // Used by op implementations. Throws NumericalError on a non-finite value.
    Var record(BasicTensor<T> value, std::vector<Var> parents, BackwardFn backward, std::string name);

    const BasicTensor<T>& value(Var v) const;
    const std::vector<Var>& parents(Var v) const;
    bool requires_grad(Var v) const;

    // Gradient of the last backward root wrt v; zeros when v was not reached.
    BasicTensor<T> grad(Var v) const;

    // Gradient buffer of a node, allocated on first touch. For op backward code.
    BasicTensor<T>& grad_buffer(Var v);
    const BasicTensor<T>& upstream(std::size_t node) const;

    void backward(Var root);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        BasicTensor<T> owned;
        const BasicTensor<T>* external = nullptr;
        BasicTensor<T> grad;
        std::vector<Var> parents;
        BackwardFn backward;
        std::string name;
        bool requires_grad = false;

        const BasicTensor<T>& value() const { return external ? *external : owned; }
    };

    const Node& node(Var v) const;

    std::vector<Node> nodes_;
    bool backward_done_ = false;
};

extern template class Tape<double>;
extern template class Tape<float>;

namespace ops {

template <typename T>
Var conv3d(Tape<T>& tape, Var input, Var weights, Var bias, const ConvSpec& spec);

template <typename T>
Var maxpool3d(Tape<T>& tape, Var input, const PoolSpec& spec);

template <typename T>
Var linear(Tape<T>& tape, Var input, Var weights, Var bias);

// Subgradient at exactly zero is zero.
template <typename T>
Var relu(Tape<T>& tape, Var input);

template <typename T>
Var softmax(Tape<T>& tape, Var logits);

// Elementwise |a - b|; subgradient zero where a == b.
template <typename T>
Var abs_diff(Tape<T>& tape, Var a, Var b);

template <typename T>
Var flatten(Tape<T>& tape, Var input);

template <typename T>
Var sum(Tape<T>& tape, Var input);

// Scalar linear combination sum_i coeffs[i] * terms[i]; every term must be a scalar.
template <typename T>
Var weighted_sum(Tape<T>& tape, const std::vector<Var>& terms, const std::vector<T>& coeffs);

}  // namespace ops

}  // namespace ivs
