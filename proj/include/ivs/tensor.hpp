#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ivs {

// Error taxonomy shared by every module. The CLI maps each to a distinct exit code.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major N-dimensional array. Every extent is positive; a rank-0
/// shape is not used, scalars are shape {1}.
template <typename T>
class BasicTensor {
public:
    using value_type = T;

    BasicTensor() = default;
    explicit BasicTensor(Shape shape, T fill = T{0});
    BasicTensor(Shape shape, std::vector<T> values);

    static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return values_.size(); }
    bool empty() const noexcept { return values_.empty(); }

    std::span<T> data() noexcept { return values_; }
    std::span<const T> data() const noexcept { return values_; }
    const std::vector<T>& values() const noexcept { return values_; }

    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    T& at(std::initializer_list<std::size_t> index) { return values_[offset(index)]; }
    const T& at(std::initializer_list<std::size_t> index) const { return values_[offset(index)]; }

    T item() const;
    bool all_finite() const noexcept;

    BasicTensor reshaped(Shape shape) const;

    template <typename U>
    BasicTensor<U> cast() const {
        std::vector<U> out(values_.begin(), values_.end());
        return BasicTensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

private:
    std::size_t offset(std::initializer_list<std::size_t> index) const;

    Shape shape_;
    std::vector<T> values_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

extern template class BasicTensor<double>;
extern template class BasicTensor<float>;

// On-disk format: `<stem>.json` holds {"format","dtype","shape"}; `<stem>.bin`
// holds the elements as flat little-endian row-major data.
template <typename T>
void save_tensor(const BasicTensor<T>& tensor, const std::filesystem::path& stem);

template <typename T>
BasicTensor<T> load_tensor(const std::filesystem::path& stem);

}  // namespace ivs
