#pragma once

// Forward and backward kernels for the layers of the 3D ConvNet. These work on
// whole tensors and know nothing about the tape; ops.hpp wires them into it.

#include <cstddef>
#include <vector>

#include "ivs/tensor.hpp"

namespace ivs {

struct Extent3 {
    std::size_t t = 1;
    std::size_t h = 1;
    std::size_t w = 1;

    friend bool operator==(const Extent3&, const Extent3&) = default;
};

struct ConvSpec {
    std::size_t out_channels = 1;
    Extent3 kernel{3, 3, 3};
    Extent3 stride{1, 1, 1};
    Extent3 padding{1, 1, 1};

    void validate() const;
    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

// Temporal and spatial geometry are separate; spatial padding is symmetric and
// padded cells never win the max.
struct PoolSpec {
    std::size_t temporal_kernel = 2;
    std::size_t temporal_stride = 2;
    std::size_t spatial_kernel = 2;
    std::size_t spatial_stride = 2;
    std::size_t spatial_padding = 0;

    void validate() const;
    friend bool operator==(const PoolSpec&, const PoolSpec&) = default;
};

/// Output shape of a convolution over a C×T×H×W input with F×C×kt×kh×kw weights.
Shape conv3d_output_shape(const Shape& input, const Shape& weights, const ConvSpec& spec);
Shape maxpool3d_output_shape(const Shape& input, const PoolSpec& spec);

template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                              const BasicTensor<T>& bias, const ConvSpec& spec);

template <typename T>
struct Conv3dGrads {
    BasicTensor<T> input;
    BasicTensor<T> weights;
    BasicTensor<T> bias;
};

template <typename T>
Conv3dGrads<T> conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& grad_output, const ConvSpec& spec);

template <typename T>
struct PoolResult {
    BasicTensor<T> output;
    // Flat input offset of the winning element for each output element.
    std::vector<std::size_t> argmax;
};

// Ties go to the first maximal element in scan order (t, then h, then w).
template <typename T>
PoolResult<T> maxpool3d_forward(const BasicTensor<T>& input, const PoolSpec& spec);

template <typename T>
BasicTensor<T> maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_output);

// y = W x + b with W of shape m×n.
template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias);

template <typename T>
struct FcGrads {
    BasicTensor<T> input;
    BasicTensor<T> weights;
    BasicTensor<T> bias;
};

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> softmax_forward(const BasicTensor<T>& logits);

template <typename T>
BasicTensor<T> abs_diff_forward(const BasicTensor<T>& a, const BasicTensor<T>& b);

}  // namespace ivs
