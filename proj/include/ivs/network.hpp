#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ivs/autodiff.hpp"
#include "ivs/kernels.hpp"
#include "json.hpp"

namespace ivs {

/// One pooling group of the backbone: one or more convolutions followed by a max-pool.
struct ConvStage {
    std::vector<std::size_t> channels;
    PoolSpec pool;

    friend bool operator==(const ConvStage&, const ConvStage&) = default;
};

struct NetworkConfig {
    // channels, length, height, width
    std::array<std::size_t, 4> input_shape{3, 16, 112, 112};
    std::vector<ConvStage> stages;
    Extent3 conv_kernel{3, 3, 3};
    Extent3 conv_stride{1, 1, 1};
    Extent3 conv_padding{1, 1, 1};
    // widths of FC6 and FC7; the second one is the feature dimension
    std::vector<std::size_t> fc_dims{4096, 4096};
    // includes the background class at index 0
    std::size_t n_classes = 21;
    std::uint64_t seed = 0;

    /// C1a(64) P1(1,1) C2a(128) P2(2,2) C3a/b(256) P3(2,2) C4a/b(512) P4(2,2)
    /// C5a/b(512) P5(2,2), 3x16x112x112 input, FC6/FC7 4096, 21 classes.
    static NetworkConfig full();
    /// Desk-scale variant: channels (4,8,8,8), 1x8x16x16 input, FC 32/32.
    static NetworkConfig tiny(std::size_t n_classes = 5);
    static NetworkConfig preset(std::string_view name, std::size_t n_classes);

    Shape input() const { return {input_shape[0], input_shape[1], input_shape[2], input_shape[3]}; }
    std::size_t conv_layer_count() const;
    std::size_t feature_dim() const { return fc_dims.back(); }
    ConvSpec conv_spec(std::size_t out_channels) const;

    /// Shape after each stage's pool. Throws ConfigError if an extent collapses.
    std::vector<Shape> stage_output_shapes() const;
    std::size_t flattened_width() const;

    void validate() const;

    friend bool operator==(const NetworkConfig&, const NetworkConfig&) = default;
};

nlohmann::json to_json(const NetworkConfig& config);
NetworkConfig network_config_from_json(const nlohmann::json& j);

template <typename T>
struct NamedTensor {
    std::string name;
    BasicTensor<T> value;
};

/// Index layout of the flat parameter list: conv weight/bias pairs in layer
/// order, then FC6, FC7, FC1 (identification head), FC2 (verification head).
struct ParameterLayout {
    std::size_t conv_layers = 0;

    std::size_t conv_weight(std::size_t layer) const { return 2 * layer; }
    std::size_t conv_bias(std::size_t layer) const { return 2 * layer + 1; }
    std::size_t fc6() const { return 2 * conv_layers; }
    std::size_t fc7() const { return 2 * conv_layers + 2; }
    std::size_t identification() const { return 2 * conv_layers + 4; }
    std::size_t verification() const { return 2 * conv_layers + 6; }
    std::size_t count() const { return 2 * conv_layers + 8; }
    // Backbone parameters are [0, backbone_end()).
    std::size_t backbone_end() const { return identification(); }
};

/// The shared-weight siamese network. There is a single copy of the backbone;
/// both branches of a pair read the same storage.
template <typename T>
class SiameseModel {
public:
    SiameseModel(NetworkConfig config, std::vector<NamedTensor<T>> parameters);

    const NetworkConfig& config() const noexcept { return config_; }
    ParameterLayout layout() const noexcept { return layout_; }

    std::vector<NamedTensor<T>>& parameters() noexcept { return parameters_; }
    const std::vector<NamedTensor<T>>& parameters() const noexcept { return parameters_; }
    const BasicTensor<T>& parameter(std::string_view name) const;
    std::size_t parameter_count() const;

private:
    NetworkConfig config_;
    ParameterLayout layout_;
    std::vector<NamedTensor<T>> parameters_;
};

/// Expected parameter names and shapes for a config, in layout order.
std::vector<std::pair<std::string, Shape>> parameter_shapes(const NetworkConfig& config);

/// Fan-in scaled Gaussian weights (He scaling for layers followed by ReLU,
/// 1/fan_in for the two heads), zero biases, drawn from config.seed.
template <typename T>
SiameseModel<T> build_model(const NetworkConfig& config);

// Graph builders. `params` are the model parameters bound on the tape, in
// layout order (see bind_parameters).

template <typename T>
std::vector<Var> bind_parameters(Tape<T>& tape, const SiameseModel<T>& model);

template <typename T>
Var feature_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var clip,
                  std::vector<Var>* stage_outputs = nullptr);

template <typename T>
Var identification_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var feature);

template <typename T>
Var verification_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var f1, Var f2);

struct SiameseVars {
    Var f1, f2;
    Var p1, p2;
    Var verification;
};

template <typename T>
SiameseVars siamese_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var clip1,
                          Var clip2);

// Inference helpers; each builds and discards its own tape.

template <typename T>
struct FeatureTrace {
    std::vector<Shape> stage_outputs;
    std::size_t flattened_width = 0;
    BasicTensor<T> feature;
};

template <typename T>
BasicTensor<T> forward_features(const SiameseModel<T>& model, const BasicTensor<T>& clip);

template <typename T>
FeatureTrace<T> trace_features(const SiameseModel<T>& model, const BasicTensor<T>& clip);

template <typename T>
BasicTensor<T> identify(const SiameseModel<T>& model, const BasicTensor<T>& clip);

template <typename T>
struct SiameseOutput {
    BasicTensor<T> f1, f2;
    BasicTensor<T> p1, p2;
    BasicTensor<T> verification;
};

template <typename T>
SiameseOutput<T> siamese_forward(const SiameseModel<T>& model, const BasicTensor<T>& clip1,
                                 const BasicTensor<T>& clip2);

// Checkpoint layout: <dir>/model.json (format tag, config, parameter index)
// plus one tensor file pair per parameter under <dir>/params/.
inline constexpr std::string_view kCheckpointFormat = "ivs-checkpoint/1";

template <typename T>
void save_checkpoint(const SiameseModel<T>& model, const std::filesystem::path& dir);

template <typename T>
SiameseModel<T> load_checkpoint(const std::filesystem::path& dir);

extern template class SiameseModel<double>;
extern template class SiameseModel<float>;

}  // namespace ivs
