#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace noisegen {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("negative dimension in shape");
        n *= d;
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

// Dense row-major (C-order) tensor. The scalar type is a template parameter so
// the same network/loss code runs in float for training and double for
// finite-difference verification.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(Shape s) : shape(std::move(s)), v(static_cast<size_t>(shape_numel(shape)), T(0)) {}
    TensorT(Shape s, T fill) : shape(std::move(s)), v(static_cast<size_t>(shape_numel(shape)), fill) {}

    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    bool empty() const { return v.empty(); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    T& operator[](std::int64_t i) { return v[static_cast<size_t>(i)]; }
    const T& operator[](std::int64_t i) const { return v[static_cast<size_t>(i)]; }

    // 4-d accessors for [N,C,H,W] tensors.
    T& at4(int n, int c, int y, int x) {
        return v[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    const T& at4(int n, int c, int y, int x) const {
        return v[((static_cast<size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x];
    }
    T& at3(int c, int y, int x) {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    const T& at3(int c, int y, int x) const {
        return v[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    T& at2(int y, int x) { return v[static_cast<size_t>(y) * shape[1] + x]; }
    const T& at2(int y, int x) const { return v[static_cast<size_t>(y) * shape[1] + x]; }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

template <typename T>
bool same_shape(const TensorT<T>& a, const TensorT<T>& b) {
    return a.shape == b.shape;
}

template <typename T>
void check_shape(const TensorT<T>& t, const Shape& want, const char* what) {
    if (t.shape != want)
        throw std::invalid_argument(std::string(what) + ": expected shape " + shape_str(want) +
                                    ", got " + shape_str(t.shape));
}

}  // namespace noisegen
