#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rewindlab {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

/// Dense n-dimensional array, row-major. T is float for training and
/// double for gradient checking.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;

    TensorT() = default;

    explicit TensorT(Shape s, T fill = T(0)) : shape(std::move(s)) {
        validate_shape();
        data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
    }

    TensorT(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        validate_shape();
        if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        }
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s), T(0)); }
    static TensorT full(Shape s, T v) { return TensorT(std::move(s), v); }
    static TensorT scalar(T v) { return TensorT(Shape{1}, std::vector<T>{v}); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

    T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    /// Reinterpret as a new shape with the same element count.
    TensorT reshaped(Shape s) const {
        if (shape_numel(s) != numel()) {
            throw std::invalid_argument("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
        }
        TensorT out;
        out.shape = std::move(s);
        out.data = data;
        out.requires_grad = requires_grad;
        return out;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.requires_grad = requires_grad;
        out.data.resize(data.size());
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

   private:
    void validate_shape() const {
        for (int d : shape) {
            if (d <= 0) throw std::invalid_argument("non-positive dimension in shape " + shape_str(shape));
        }
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace rewindlab
