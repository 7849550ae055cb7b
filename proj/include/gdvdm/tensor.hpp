#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gdvdm {

// Dense row-major tensor. Video tensors use rank-4 shape {F, H, W, C}
// (frames, height, width, channels) with channels fastest-varying.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        v.assign(numel_of(shape), T(0));
    }
    TensorT(std::vector<int> s, T fill) : shape(std::move(s)) {
        v.assign(numel_of(shape), fill);
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) {
            if (d < 1) throw std::invalid_argument("tensor dimension < 1");
            n *= static_cast<std::size_t>(d);
        }
        return n;
    }

    std::size_t numel() const { return v.size(); }
    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    // rank-4 accessors
    int f() const { return shape.at(0); }
    int h() const { return shape.at(1); }
    int w() const { return shape.at(2); }
    int c() const { return shape.at(3); }

    T& at4(int fi, int yi, int xi, int ci) {
        return v[((static_cast<std::size_t>(fi) * h() + yi) * w() + xi) * c() + ci];
    }
    T at4(int fi, int yi, int xi, int ci) const {
        return v[((static_cast<std::size_t>(fi) * h() + yi) * w() + xi) * c() + ci];
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using VideoTensor = TensorT<float>;

inline std::string shape_str(const std::vector<int>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + ")";
}

inline void require_same_shape(const std::vector<int>& a, const std::vector<int>& b,
                               const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
}

}  // namespace gdvdm
