#include "ivs/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ivs {

namespace {

std::size_t window_count(std::size_t extent, std::size_t pad, std::size_t kernel, std::size_t stride,
                         const char* what) {
    if (extent + 2 * pad < kernel)
        throw ShapeError(std::string("non-positive output extent along ") + what + ": extent " +
                         std::to_string(extent) + " with padding " + std::to_string(pad) + " is smaller than kernel " +
                         std::to_string(kernel));
    return (extent + 2 * pad - kernel) / stride + 1;
}

// Output positions o in [lo, hi) for which o*stride + k - pad lands inside [0, extent).
struct Range {
    std::size_t lo;
    std::size_t hi;
};

Range valid_outputs(std::size_t out_extent, std::size_t in_extent, std::size_t k, std::size_t stride,
                    std::size_t pad) {
    std::size_t lo = 0;
    if (pad > k) lo = (pad - k + stride - 1) / stride;
    // largest o with o*stride + k - pad <= in_extent - 1
    const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in_extent) - 1 + static_cast<std::ptrdiff_t>(pad) -
                               static_cast<std::ptrdiff_t>(k);
    if (top < 0) return {0, 0};
    std::size_t hi = std::min(out_extent, static_cast<std::size_t>(top) / stride + 1);
    if (hi < lo) hi = lo;
    return {lo, hi};
}

void require_rank(const Shape& s, std::size_t rank, const char* what) {
    if (s.size() != rank)
        throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) + ", got shape " +
                         shape_string(s));
}

}  // namespace

void ConvSpec::validate() const {
    if (out_channels == 0) throw ConfigError("convolution needs at least one output channel");
    for (auto [k, s, p] : {std::tuple{kernel.t, stride.t, padding.t}, std::tuple{kernel.h, stride.h, padding.h},
                           std::tuple{kernel.w, stride.w, padding.w}}) {
        if (k == 0 || s == 0) throw ConfigError("convolution kernel and stride extents must be >= 1");
        if (p >= k) throw ConfigError("convolution padding must be smaller than the kernel");
    }
}

void PoolSpec::validate() const {
    if (temporal_kernel == 0 || temporal_stride == 0 || spatial_kernel == 0 || spatial_stride == 0)
        throw ConfigError("pooling kernels and strides must be >= 1");
    if (spatial_padding >= spatial_kernel) throw ConfigError("pooling padding must be smaller than the kernel");
}

Shape conv3d_output_shape(const Shape& input, const Shape& weights, const ConvSpec& spec) {
    spec.validate();
    require_rank(input, 4, "conv3d input");
    require_rank(weights, 5, "conv3d weights");
    if (weights[0] != spec.out_channels)
        throw ShapeError("conv3d weights have " + std::to_string(weights[0]) + " filters, spec expects " +
                         std::to_string(spec.out_channels));
    if (weights[1] != input[0])
        throw ShapeError("conv3d input has " + std::to_string(input[0]) + " channels, weights expect " +
                         std::to_string(weights[1]));
    if (weights[2] != spec.kernel.t || weights[3] != spec.kernel.h || weights[4] != spec.kernel.w)
        throw ShapeError("conv3d weight kernel " + shape_string(weights) + " disagrees with spec");
    return {spec.out_channels, window_count(input[1], spec.padding.t, spec.kernel.t, spec.stride.t, "time"),
            window_count(input[2], spec.padding.h, spec.kernel.h, spec.stride.h, "height"),
            window_count(input[3], spec.padding.w, spec.kernel.w, spec.stride.w, "width")};
}

Shape maxpool3d_output_shape(const Shape& input, const PoolSpec& spec) {
    spec.validate();
    require_rank(input, 4, "maxpool3d input");
    return {input[0], window_count(input[1], 0, spec.temporal_kernel, spec.temporal_stride, "time"),
            window_count(input[2], spec.spatial_padding, spec.spatial_kernel, spec.spatial_stride, "height"),
            window_count(input[3], spec.spatial_padding, spec.spatial_kernel, spec.spatial_stride, "width")};
}

// The convolution loops are arranged so the innermost loop runs along a
// contiguous output row; with unit stride it is a plain axpy/dot.
template <typename T>
BasicTensor<T> conv3d_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias,
                              const ConvSpec& spec) {
    const Shape out_shape = conv3d_output_shape(input.shape(), weights.shape(), spec);
    if (bias.rank() != 1 || bias.size() != spec.out_channels)
        throw ShapeError("conv3d bias must have one entry per filter");

    const std::size_t F = out_shape[0], OT = out_shape[1], OH = out_shape[2], OW = out_shape[3];
    const std::size_t C = input.extent(0), IT = input.extent(1), IH = input.extent(2), IW = input.extent(3);
    const auto& k = spec.kernel;
    const auto& s = spec.stride;
    const auto& p = spec.padding;

    BasicTensor<T> out(out_shape);
    const T* in = input.data().data();
    const T* w = weights.data().data();
    T* o = out.data().data();
    const std::size_t plane = OT * OH * OW;

    for (std::size_t f = 0; f < F; ++f) {
        std::fill_n(o + f * plane, plane, bias[f]);
        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t a = 0; a < k.t; ++a) {
                const Range rt = valid_outputs(OT, IT, a, s.t, p.t);
                for (std::size_t b = 0; b < k.h; ++b) {
                    const Range rh = valid_outputs(OH, IH, b, s.h, p.h);
                    for (std::size_t d = 0; d < k.w; ++d) {
                        const Range rw = valid_outputs(OW, IW, d, s.w, p.w);
                        const T wv = w[(((f * C + c) * k.t + a) * k.h + b) * k.w + d];
                        for (std::size_t ot = rt.lo; ot < rt.hi; ++ot) {
                            const std::size_t it = ot * s.t + a - p.t;
                            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                                const std::size_t ih = oh * s.h + b - p.h;
                                const T* in_row = in + ((c * IT + it) * IH + ih) * IW;
                                T* out_row = o + ((f * OT + ot) * OH + oh) * OW;
                                if (s.w == 1) {
                                    const T* src = in_row + (static_cast<std::ptrdiff_t>(d) - static_cast<std::ptrdiff_t>(p.w));
                                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) out_row[ow] += wv * src[ow];
                                } else {
                                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow)
                                        out_row[ow] += wv * in_row[ow * s.w + d - p.w];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
Conv3dGrads<T> conv3d_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights,
                               const BasicTensor<T>& grad_output, const ConvSpec& spec) {
    const Shape out_shape = conv3d_output_shape(input.shape(), weights.shape(), spec);
    if (grad_output.shape() != out_shape)
        throw ShapeError("conv3d grad_output shape " + shape_string(grad_output.shape()) + " expected " +
                         shape_string(out_shape));

    const std::size_t F = out_shape[0], OT = out_shape[1], OH = out_shape[2], OW = out_shape[3];
    const std::size_t C = input.extent(0), IT = input.extent(1), IH = input.extent(2), IW = input.extent(3);
    const auto& k = spec.kernel;
    const auto& s = spec.stride;
    const auto& p = spec.padding;

    Conv3dGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weights.shape()),
                     BasicTensor<T>(Shape{F})};
    const T* in = input.data().data();
    const T* w = weights.data().data();
    const T* go = grad_output.data().data();
    T* gi = g.input.data().data();
    T* gw = g.weights.data().data();
    const std::size_t plane = OT * OH * OW;

    for (std::size_t f = 0; f < F; ++f) {
        T acc{0};
        for (std::size_t i = 0; i < plane; ++i) acc += go[f * plane + i];
        g.bias[f] = acc;

        for (std::size_t c = 0; c < C; ++c) {
            for (std::size_t a = 0; a < k.t; ++a) {
                const Range rt = valid_outputs(OT, IT, a, s.t, p.t);
                for (std::size_t b = 0; b < k.h; ++b) {
                    const Range rh = valid_outputs(OH, IH, b, s.h, p.h);
                    for (std::size_t d = 0; d < k.w; ++d) {
                        const Range rw = valid_outputs(OW, IW, d, s.w, p.w);
                        const std::size_t widx = (((f * C + c) * k.t + a) * k.h + b) * k.w + d;
                        const T wv = w[widx];
                        T dw{0};
                        for (std::size_t ot = rt.lo; ot < rt.hi; ++ot) {
                            const std::size_t it = ot * s.t + a - p.t;
                            for (std::size_t oh = rh.lo; oh < rh.hi; ++oh) {
                                const std::size_t ih = oh * s.h + b - p.h;
                                const std::size_t in_off = ((c * IT + it) * IH + ih) * IW;
                                const T* go_row = go + ((f * OT + ot) * OH + oh) * OW;
                                if (s.w == 1) {
                                    const std::ptrdiff_t shift =
                                        static_cast<std::ptrdiff_t>(in_off + d) - static_cast<std::ptrdiff_t>(p.w);
                                    const T* src = in + shift;
                                    T* dst = gi + shift;
                                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) {
                                        dw += go_row[ow] * src[ow];
                                        dst[ow] += wv * go_row[ow];
                                    }
                                } else {
                                    for (std::size_t ow = rw.lo; ow < rw.hi; ++ow) {
                                        const std::size_t iw = ow * s.w + d - p.w;
                                        dw += go_row[ow] * in[in_off + iw];
                                        gi[in_off + iw] += wv * go_row[ow];
                                    }
                                }
                            }
                        }
                        gw[widx] += dw;
                    }
                }
            }
        }
    }
    return g;
}

template <typename T>
PoolResult<T> maxpool3d_forward(const BasicTensor<T>& input, const PoolSpec& spec) {
    const Shape out_shape = maxpool3d_output_shape(input.shape(), spec);
    const std::size_t C = out_shape[0], OT = out_shape[1], OH = out_shape[2], OW = out_shape[3];
    const std::size_t IT = input.extent(1), IH = input.extent(2), IW = input.extent(3);
    const auto pad = static_cast<std::ptrdiff_t>(spec.spatial_padding);

    PoolResult<T> r{BasicTensor<T>(out_shape), std::vector<std::size_t>(shape_numel(out_shape))};
    const T* in = input.data().data();
    std::size_t o = 0;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ot = 0; ot < OT; ++ot)
            for (std::size_t oh = 0; oh < OH; ++oh)
                for (std::size_t ow = 0; ow < OW; ++ow, ++o) {
                    const std::size_t t0 = ot * spec.temporal_stride;
                    const std::ptrdiff_t h0 = static_cast<std::ptrdiff_t>(oh * spec.spatial_stride) - pad;
                    const std::ptrdiff_t w0 = static_cast<std::ptrdiff_t>(ow * spec.spatial_stride) - pad;
                    const std::size_t hlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(h0, 0));
                    const std::size_t wlo = static_cast<std::size_t>(std::max<std::ptrdiff_t>(w0, 0));
                    const std::size_t hhi =
                        std::min(IH, static_cast<std::size_t>(h0 + static_cast<std::ptrdiff_t>(spec.spatial_kernel)));
                    const std::size_t whi =
                        std::min(IW, static_cast<std::size_t>(w0 + static_cast<std::ptrdiff_t>(spec.spatial_kernel)));
                    T best = -std::numeric_limits<T>::infinity();
                    std::size_t arg = 0;
                    bool found = false;
                    for (std::size_t t = t0; t < t0 + spec.temporal_kernel; ++t)
                        for (std::size_t h = hlo; h < hhi; ++h)
                            for (std::size_t w = wlo; w < whi; ++w) {
                                const std::size_t idx = ((c * IT + t) * IH + h) * IW + w;
                                if (!found || in[idx] > best) {
                                    best = in[idx];
                                    arg = idx;
                                    found = true;
                                }
                            }
                    r.output[o] = best;
                    r.argmax[o] = arg;
                }
    return r;
}

template <typename T>
BasicTensor<T> maxpool3d_backward(const Shape& input_shape, const std::vector<std::size_t>& argmax,
                                  const BasicTensor<T>& grad_output) {
    if (argmax.size() != grad_output.size()) throw ShapeError("maxpool3d backward: argmax/grad size mismatch");
    BasicTensor<T> gi(input_shape);
    for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += grad_output[i];
    return gi;
}

template <typename T>
BasicTensor<T> fc_forward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& bias) {
    require_rank(input.shape(), 1, "fc input");
    require_rank(weights.shape(), 2, "fc weights");
    const std::size_t m = weights.extent(0), n = weights.extent(1);
    if (input.size() != n)
        throw ShapeError("fc input width " + std::to_string(input.size()) + " does not match weights " +
                         shape_string(weights.shape()));
    if (bias.rank() != 1 || bias.size() != m) throw ShapeError("fc bias width does not match weights");
    BasicTensor<T> out(Shape{m});
    const T* x = input.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* row = weights.data().data() + i * n;
        T acc{0};
        for (std::size_t j = 0; j < n; ++j) acc += row[j] * x[j];
        out[i] = acc + bias[i];
    }
    return out;
}

template <typename T>
FcGrads<T> fc_backward(const BasicTensor<T>& input, const BasicTensor<T>& weights, const BasicTensor<T>& grad_output) {
    const std::size_t m = weights.extent(0), n = weights.extent(1);
    if (grad_output.size() != m || input.size() != n) throw ShapeError("fc backward: shape mismatch");
    FcGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weights.shape()), grad_output};
    const T* x = input.data().data();
    T* gx = g.input.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const T gy = grad_output[i];
        const T* row = weights.data().data() + i * n;
        T* grow = g.weights.data().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            grow[j] = gy * x[j];
            gx[j] += gy * row[j];
        }
    }
    return g;
}

template <typename T>
BasicTensor<T> relu_forward(const BasicTensor<T>& input) {
    BasicTensor<T> out = input;
    for (auto& v : out.data()) v = v > T{0} ? v : T{0};
    return out;
}

template <typename T>
BasicTensor<T> softmax_forward(const BasicTensor<T>& logits) {
    require_rank(logits.shape(), 1, "softmax input");
    const T mx = *std::max_element(logits.data().begin(), logits.data().end());
    BasicTensor<T> out(logits.shape());
    T total{0};
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - mx);
        total += out[i];
    }
    for (auto& v : out.data()) v /= total;
    return out;
}

template <typename T>
BasicTensor<T> abs_diff_forward(const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.shape() != b.shape())
        throw ShapeError("abs_diff shape mismatch: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
    BasicTensor<T> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = std::abs(a[i] - b[i]);
    return out;
}

#define IVS_INSTANTIATE_KERNELS(T)                                                                               \
    template BasicTensor<T> conv3d_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,  \
                                           const ConvSpec&);                                                     \
    template Conv3dGrads<T> conv3d_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&, \
                                            const ConvSpec&);                                                    \
    template PoolResult<T> maxpool3d_forward(const BasicTensor<T>&, const PoolSpec&);                            \
    template BasicTensor<T> maxpool3d_backward(const Shape&, const std::vector<std::size_t>&,                    \
                                               const BasicTensor<T>&);                                           \
    template BasicTensor<T> fc_forward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);     \
    template FcGrads<T> fc_backward(const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&);        \
    template BasicTensor<T> relu_forward(const BasicTensor<T>&);                                                 \
    template BasicTensor<T> softmax_forward(const BasicTensor<T>&);                                              \
    template BasicTensor<T> abs_diff_forward(const BasicTensor<T>&, const BasicTensor<T>&);

IVS_INSTANTIATE_KERNELS(double)
IVS_INSTANTIATE_KERNELS(float)

#undef IVS_INSTANTIATE_KERNELS

}  // namespace ivs
