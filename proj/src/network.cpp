#include "ivs/network.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace ivs {

namespace {

PoolSpec pool(std::size_t tk, std::size_t ts, std::size_t spatial_padding = 0) {
    return PoolSpec{tk, ts, 2, 2, spatial_padding};
}

nlohmann::json extent_json(const Extent3& e) { return nlohmann::json::array({e.t, e.h, e.w}); }

Extent3 extent_from(const nlohmann::json& j) {
    auto v = j.get<std::vector<std::size_t>>();
    if (v.size() != 3) throw ConfigError("extent must have three entries (t, h, w)");
    return {v[0], v[1], v[2]};
}

std::string conv_name(std::size_t stage, std::size_t index) {
    return "conv" + std::to_string(stage + 1) + static_cast<char>('a' + index);
}

}  // namespace

NetworkConfig NetworkConfig::full() {
    NetworkConfig c;
    c.input_shape = {3, 16, 112, 112};
    c.stages = {{{64}, pool(1, 1)},
                {{128}, pool(2, 2)},
                {{256, 256}, pool(2, 2)},
                {{512, 512}, pool(2, 2)},
                {{512, 512}, pool(2, 2, 1)}};
    c.fc_dims = {4096, 4096};
    c.n_classes = 21;
    return c;
}

NetworkConfig NetworkConfig::tiny(std::size_t n_classes) {
    NetworkConfig c;
    c.input_shape = {1, 8, 16, 16};
    c.stages = {{{4}, pool(1, 1)}, {{8}, pool(2, 2)}, {{8}, pool(2, 2)}, {{8}, pool(2, 2, 1)}};
    c.fc_dims = {32, 32};
    c.n_classes = n_classes;
    return c;
}

NetworkConfig NetworkConfig::preset(std::string_view name, std::size_t n_classes) {
    if (name == "tiny") return tiny(n_classes);
    if (name == "full") {
        auto c = full();
        c.n_classes = n_classes;
        return c;
    }
    throw ConfigError("unknown network preset '" + std::string(name) + "' (expected tiny or full)");
}

std::size_t NetworkConfig::conv_layer_count() const {
    std::size_t n = 0;
    for (const auto& s : stages) n += s.channels.size();
    return n;
}

ConvSpec NetworkConfig::conv_spec(std::size_t out_channels) const {
    return ConvSpec{out_channels, conv_kernel, conv_stride, conv_padding};
}

std::vector<Shape> NetworkConfig::stage_output_shapes() const {
    std::vector<Shape> shapes;
    Shape shape = input();
    try {
        for (const auto& stage : stages) {
            for (std::size_t ch : stage.channels) {
                const Shape w{ch, shape[0], conv_kernel.t, conv_kernel.h, conv_kernel.w};
                shape = conv3d_output_shape(shape, w, conv_spec(ch));
            }
            shape = maxpool3d_output_shape(shape, stage.pool);
            shapes.push_back(shape);
        }
    } catch (const ShapeError& e) {
        throw ConfigError(std::string("inconsistent network config: ") + e.what());
    }
    return shapes;
}

std::size_t NetworkConfig::flattened_width() const {
    const auto shapes = stage_output_shapes();
    return shapes.empty() ? shape_numel(input()) : shape_numel(shapes.back());
}

void NetworkConfig::validate() const {
    for (auto e : input_shape)
        if (e == 0) throw ConfigError("input extents must be >= 1");
    if (stages.empty()) throw ConfigError("backbone needs at least one stage");
    for (const auto& s : stages) {
        if (s.channels.empty()) throw ConfigError("every stage needs at least one convolution");
        for (auto ch : s.channels)
            if (ch == 0) throw ConfigError("convolution channel counts must be >= 1");
    }
    if (fc_dims.size() != 2 || fc_dims[0] == 0 || fc_dims[1] == 0)
        throw ConfigError("fc_dims must hold two positive widths (FC6, FC7)");
    if (n_classes < 2) throw ConfigError("n_classes must be >= 2");
    conv_spec(1).validate();
    (void)stage_output_shapes();
}

nlohmann::json to_json(const NetworkConfig& c) {
    nlohmann::json j;
    j["input_shape"] = c.input_shape;
    auto stages = nlohmann::json::array();
    for (const auto& s : c.stages) {
        stages.push_back({{"channels", s.channels},
                          {"pool",
                           {{"temporal_kernel", s.pool.temporal_kernel},
                            {"temporal_stride", s.pool.temporal_stride},
                            {"spatial_kernel", s.pool.spatial_kernel},
                            {"spatial_stride", s.pool.spatial_stride},
                            {"spatial_padding", s.pool.spatial_padding}}}});
    }
    j["stages"] = stages;
    j["conv_kernel"] = extent_json(c.conv_kernel);
    j["conv_stride"] = extent_json(c.conv_stride);
    j["conv_padding"] = extent_json(c.conv_padding);
    j["fc_dims"] = c.fc_dims;
    j["n_classes"] = c.n_classes;
    j["seed"] = c.seed;
    return j;
}

NetworkConfig network_config_from_json(const nlohmann::json& j) {
    try {
        NetworkConfig c;
        c.input_shape = j.at("input_shape").get<std::array<std::size_t, 4>>();
        c.stages.clear();
        for (const auto& s : j.at("stages")) {
            ConvStage st;
            st.channels = s.at("channels").get<std::vector<std::size_t>>();
            const auto& p = s.at("pool");
            st.pool = PoolSpec{p.at("temporal_kernel"), p.at("temporal_stride"), p.at("spatial_kernel"),
                               p.at("spatial_stride"), p.at("spatial_padding")};
            c.stages.push_back(std::move(st));
        }
        c.conv_kernel = extent_from(j.at("conv_kernel"));
        c.conv_stride = extent_from(j.at("conv_stride"));
        c.conv_padding = extent_from(j.at("conv_padding"));
        c.fc_dims = j.at("fc_dims").get<std::vector<std::size_t>>();
        c.n_classes = j.at("n_classes");
        c.seed = j.value("seed", std::uint64_t{0});
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed network config: ") + e.what());
    }
}

std::vector<std::pair<std::string, Shape>> parameter_shapes(const NetworkConfig& config) {
    config.validate();
    std::vector<std::pair<std::string, Shape>> out;
    std::size_t in_ch = config.input_shape[0];
    const auto& k = config.conv_kernel;
    for (std::size_t s = 0; s < config.stages.size(); ++s) {
        for (std::size_t i = 0; i < config.stages[s].channels.size(); ++i) {
            const std::size_t ch = config.stages[s].channels[i];
            out.emplace_back(conv_name(s, i) + ".weight", Shape{ch, in_ch, k.t, k.h, k.w});
            out.emplace_back(conv_name(s, i) + ".bias", Shape{ch});
            in_ch = ch;
        }
    }
    const std::size_t flat = config.flattened_width();
    const std::size_t f6 = config.fc_dims[0], f7 = config.fc_dims[1];
    out.emplace_back("fc6.weight", Shape{f6, flat});
    out.emplace_back("fc6.bias", Shape{f6});
    out.emplace_back("fc7.weight", Shape{f7, f6});
    out.emplace_back("fc7.bias", Shape{f7});
    out.emplace_back("fc1.weight", Shape{config.n_classes, f7});
    out.emplace_back("fc1.bias", Shape{config.n_classes});
    out.emplace_back("fc2.weight", Shape{2, f7});
    out.emplace_back("fc2.bias", Shape{2});
    return out;
}

template <typename T>
SiameseModel<T>::SiameseModel(NetworkConfig config, std::vector<NamedTensor<T>> parameters)
    : config_(std::move(config)), parameters_(std::move(parameters)) {
    const auto expected = parameter_shapes(config_);
    layout_.conv_layers = config_.conv_layer_count();
    if (parameters_.size() != expected.size())
        throw ShapeError("model expects " + std::to_string(expected.size()) + " parameter tensors, got " +
                         std::to_string(parameters_.size()));
    for (std::size_t i = 0; i < expected.size(); ++i) {
        if (parameters_[i].name != expected[i].first || parameters_[i].value.shape() != expected[i].second)
            throw ShapeError("parameter " + std::to_string(i) + " should be " + expected[i].first + " " +
                             shape_string(expected[i].second) + ", got " + parameters_[i].name + " " +
                             shape_string(parameters_[i].value.shape()));
    }
}

template <typename T>
const BasicTensor<T>& SiameseModel<T>::parameter(std::string_view name) const {
    for (const auto& p : parameters_)
        if (p.name == name) return p.value;
    throw std::out_of_range("no parameter named " + std::string(name));
}

template <typename T>
std::size_t SiameseModel<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters_) n += p.value.size();
    return n;
}

template class SiameseModel<double>;
template class SiameseModel<float>;

template <typename T>
SiameseModel<T> build_model(const NetworkConfig& config) {
    const auto shapes = parameter_shapes(config);
    const ParameterLayout layout{config.conv_layer_count()};
    std::mt19937_64 rng(config.seed);
    std::vector<NamedTensor<T>> params;
    params.reserve(shapes.size());
    for (std::size_t i = 0; i < shapes.size(); ++i) {
        const auto& [name, shape] = shapes[i];
        BasicTensor<T> value(shape);
        if (shape.size() > 1) {
            const std::size_t fan_in = shape_numel(shape) / shape[0];
            const bool head = i >= layout.identification();
            const double stddev = std::sqrt((head ? 1.0 : 2.0) / static_cast<double>(fan_in));
            std::normal_distribution<double> normal(0.0, stddev);
            for (auto& v : value.data()) v = static_cast<T>(normal(rng));
        }
        params.push_back({name, std::move(value)});
    }
    return SiameseModel<T>(config, std::move(params));
}

template <typename T>
std::vector<Var> bind_parameters(Tape<T>& tape, const SiameseModel<T>& model) {
    std::vector<Var> vars;
    vars.reserve(model.parameters().size());
    for (const auto& p : model.parameters()) vars.push_back(tape.leaf_ref(p.value, p.name));
    return vars;
}

template <typename T>
Var feature_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var clip,
                  std::vector<Var>* stage_outputs) {
    const ParameterLayout layout{config.conv_layer_count()};
    if (params.size() != layout.count()) throw ShapeError("parameter list does not match the network layout");
    if (tape.value(clip).shape() != config.input())
        throw ShapeError("clip shape " + shape_string(tape.value(clip).shape()) + " does not match network input " +
                         shape_string(config.input()));
    Var x = clip;
    std::size_t layer = 0;
    for (const auto& stage : config.stages) {
        for (std::size_t ch : stage.channels) {
            x = ops::conv3d(tape, x, params[layout.conv_weight(layer)], params[layout.conv_bias(layer)],
                            config.conv_spec(ch));
            x = ops::relu(tape, x);
            ++layer;
        }
        x = ops::maxpool3d(tape, x, stage.pool);
        if (stage_outputs) stage_outputs->push_back(x);
    }
    x = ops::flatten(tape, x);
    x = ops::relu(tape, ops::linear(tape, x, params[layout.fc6()], params[layout.fc6() + 1]));
    x = ops::relu(tape, ops::linear(tape, x, params[layout.fc7()], params[layout.fc7() + 1]));
    return x;
}

template <typename T>
Var identification_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var feature) {
    const ParameterLayout layout{config.conv_layer_count()};
    const std::size_t i = layout.identification();
    return ops::softmax(tape, ops::linear(tape, feature, params[i], params[i + 1]));
}

template <typename T>
Var verification_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var f1, Var f2) {
    const ParameterLayout layout{config.conv_layer_count()};
    const std::size_t i = layout.verification();
    const Var distance = ops::abs_diff(tape, f1, f2);
    return ops::softmax(tape, ops::linear(tape, distance, params[i], params[i + 1]));
}

template <typename T>
SiameseVars siamese_graph(Tape<T>& tape, const NetworkConfig& config, std::span<const Var> params, Var clip1,
                          Var clip2) {
    SiameseVars v;
    v.f1 = feature_graph(tape, config, params, clip1);
    v.f2 = feature_graph(tape, config, params, clip2);
    v.p1 = identification_graph(tape, config, params, v.f1);
    v.p2 = identification_graph(tape, config, params, v.f2);
    v.verification = verification_graph(tape, config, params, v.f1, v.f2);
    return v;
}

template <typename T>
BasicTensor<T> forward_features(const SiameseModel<T>& model, const BasicTensor<T>& clip) {
    Tape<T> tape;
    const auto params = bind_parameters(tape, model);
    const Var f = feature_graph(tape, model.config(), params, tape.constant(clip, "clip"));
    return tape.value(f);
}

template <typename T>
FeatureTrace<T> trace_features(const SiameseModel<T>& model, const BasicTensor<T>& clip) {
    Tape<T> tape;
    const auto params = bind_parameters(tape, model);
    std::vector<Var> stages;
    const Var f = feature_graph(tape, model.config(), params, tape.constant(clip, "clip"), &stages);
    FeatureTrace<T> trace;
    for (Var s : stages) trace.stage_outputs.push_back(tape.value(s).shape());
    trace.flattened_width = stages.empty() ? clip.size() : tape.value(stages.back()).size();
    trace.feature = tape.value(f);
    return trace;
}

template <typename T>
BasicTensor<T> identify(const SiameseModel<T>& model, const BasicTensor<T>& clip) {
    Tape<T> tape;
    const auto params = bind_parameters(tape, model);
    const Var f = feature_graph(tape, model.config(), params, tape.constant(clip, "clip"));
    return tape.value(identification_graph(tape, model.config(), params, f));
}

template <typename T>
SiameseOutput<T> siamese_forward(const SiameseModel<T>& model, const BasicTensor<T>& clip1,
                                 const BasicTensor<T>& clip2) {
    Tape<T> tape;
    const auto params = bind_parameters(tape, model);
    const auto v = siamese_graph(tape, model.config(), params, tape.constant(clip1, "clip1"),
                                 tape.constant(clip2, "clip2"));
    return {tape.value(v.f1), tape.value(v.f2), tape.value(v.p1), tape.value(v.p2), tape.value(v.verification)};
}

template <typename T>
void save_checkpoint(const SiameseModel<T>& model, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir / "params", ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    nlohmann::json j;
    j["format"] = kCheckpointFormat;
    j["config"] = to_json(model.config());
    auto index = nlohmann::json::array();
    for (const auto& p : model.parameters()) {
        const std::string rel = "params/" + p.name;
        save_tensor(p.value, dir / rel);
        index.push_back({{"name", p.name}, {"file", rel}, {"shape", p.value.shape()}});
    }
    j["parameters"] = index;
    std::ofstream out(dir / "model.json");
    if (!out) throw IoError("cannot write " + (dir / "model.json").string());
    out << j.dump(2) << '\n';
}

template <typename T>
SiameseModel<T> load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "model.json");
    if (!in) throw IoError("no checkpoint descriptor at " + (dir / "model.json").string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed checkpoint descriptor: " + std::string(e.what()));
    }
    if (j.value("format", "") != kCheckpointFormat)
        throw IoError("unsupported checkpoint format '" + j.value("format", "") + "'");
    NetworkConfig config = network_config_from_json(j.at("config"));
    std::vector<NamedTensor<T>> params;
    for (const auto& p : j.at("parameters"))
        params.push_back({p.at("name").get<std::string>(), load_tensor<T>(dir / p.at("file").get<std::string>())});
    return SiameseModel<T>(std::move(config), std::move(params));
}

#define IVS_INSTANTIATE_NETWORK(T)                                                                            \
    template SiameseModel<T> build_model(const NetworkConfig&);                                               \
    template std::vector<Var> bind_parameters(Tape<T>&, const SiameseModel<T>&);                              \
    template Var feature_graph(Tape<T>&, const NetworkConfig&, std::span<const Var>, Var, std::vector<Var>*); \
    template Var identification_graph(Tape<T>&, const NetworkConfig&, std::span<const Var>, Var);             \
    template Var verification_graph(Tape<T>&, const NetworkConfig&, std::span<const Var>, Var, Var);          \
    template SiameseVars siamese_graph(Tape<T>&, const NetworkConfig&, std::span<const Var>, Var, Var);       \
    template BasicTensor<T> forward_features(const SiameseModel<T>&, const BasicTensor<T>&);                  \
    template FeatureTrace<T> trace_features(const SiameseModel<T>&, const BasicTensor<T>&);                   \
    template BasicTensor<T> identify(const SiameseModel<T>&, const BasicTensor<T>&);                          \
    template SiameseOutput<T> siamese_forward(const SiameseModel<T>&, const BasicTensor<T>&,                  \
                                              const BasicTensor<T>&);                                         \
    template void save_checkpoint(const SiameseModel<T>&, const std::filesystem::path&);                      \
    template SiameseModel<T> load_checkpoint(const std::filesystem::path&);

IVS_INSTANTIATE_NETWORK(double)
IVS_INSTANTIATE_NETWORK(float)

#undef IVS_INSTANTIATE_NETWORK

}  // namespace ivs
