#include "ivs/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace ivs {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    return os.str();
}

namespace {

void check_extents(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one axis");
    for (auto e : shape)
        if (e == 0) throw ShapeError("tensor extent must be positive, got " + shape_string(shape));
}

template <typename T>
constexpr const char* dtype_name() {
    if constexpr (std::is_same_v<T, double>)
        return "float64";
    else
        return "float32";
}

std::filesystem::path with_suffix(const std::filesystem::path& stem, const char* suffix) {
    return std::filesystem::path(stem.string() + suffix);
}

}  // namespace

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill) : shape_(std::move(shape)) {
    check_extents(shape_);
    values_.assign(shape_numel(shape_), fill);
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    check_extents(shape_);
    if (values_.size() != shape_numel(shape_))
        throw ShapeError("element count " + std::to_string(values_.size()) + " does not match shape " +
                         shape_string(shape_));
}

template <typename T>
T BasicTensor<T>::item() const {
    if (values_.size() != 1) throw ShapeError("item() on non-scalar tensor of shape " + shape_string(shape_));
    return values_[0];
}

template <typename T>
bool BasicTensor<T>::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](T v) { return std::isfinite(v); });
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
    if (shape_numel(shape) != values_.size())
        throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    return BasicTensor(std::move(shape), values_);
}

template <typename T>
std::size_t BasicTensor<T>::offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) throw ShapeError("index rank does not match tensor rank");
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= shape_[axis]) throw std::out_of_range("tensor index out of range");
        off = off * shape_[axis] + i;
        ++axis;
    }
    return off;
}

template class BasicTensor<double>;
template class BasicTensor<float>;

template <typename T>
void save_tensor(const BasicTensor<T>& tensor, const std::filesystem::path& stem) {
    static_assert(std::endian::native == std::endian::little, "tensor files are little-endian");
    nlohmann::json desc;
    desc["format"] = "ivs-tensor/1";
    desc["dtype"] = dtype_name<T>();
    desc["shape"] = tensor.shape();

    std::ofstream meta(with_suffix(stem, ".json"));
    if (!meta) throw IoError("cannot write " + with_suffix(stem, ".json").string());
    meta << desc.dump(2) << '\n';

    std::ofstream bin(with_suffix(stem, ".bin"), std::ios::binary);
    if (!bin) throw IoError("cannot write " + with_suffix(stem, ".bin").string());
    bin.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(T)));
    if (!bin) throw IoError("short write to " + with_suffix(stem, ".bin").string());
}

template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& stem) {
    std::ifstream meta(with_suffix(stem, ".json"));
    if (!meta) throw IoError("cannot read " + with_suffix(stem, ".json").string());
    nlohmann::json desc;
    try {
        meta >> desc;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed tensor descriptor " + with_suffix(stem, ".json").string() + ": " + e.what());
    }
    if (desc.value("format", "") != "ivs-tensor/1") throw IoError("unknown tensor format in " + stem.string());
    const auto dtype = desc.value("dtype", "");
    auto shape = desc.at("shape").get<Shape>();
    const std::size_t n = shape_numel(shape);

    std::ifstream bin(with_suffix(stem, ".bin"), std::ios::binary);
    if (!bin) throw IoError("cannot read " + with_suffix(stem, ".bin").string());

    auto read_as = [&]<typename U>(U) {
        std::vector<U> raw(n);
        bin.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n * sizeof(U)));
        if (bin.gcount() != static_cast<std::streamsize>(n * sizeof(U)))
            throw IoError("truncated tensor data in " + with_suffix(stem, ".bin").string());
        return std::vector<T>(raw.begin(), raw.end());
    };
    if (dtype == "float64") return BasicTensor<T>(std::move(shape), read_as(double{}));
    if (dtype == "float32") return BasicTensor<T>(std::move(shape), read_as(float{}));
    throw IoError("unsupported dtype '" + dtype + "' in " + stem.string());
}

template void save_tensor(const BasicTensor<double>&, const std::filesystem::path&);
template void save_tensor(const BasicTensor<float>&, const std::filesystem::path&);
template BasicTensor<double> load_tensor(const std::filesystem::path&);
template BasicTensor<float> load_tensor(const std::filesystem::path&);

}  // namespace ivs
