#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradmix {

/// Error type for shape/contract violations; message names the op and dims.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

inline std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 1) throw Error("tensor: dimension must be >= 1, got " + std::to_string(d));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

/// Dense row-major tensor. float for training, double for gradient checks.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s, T fill = T(0))
        : shape(std::move(s)), data(shape_numel(shape), fill) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw Error("tensor: element count " + std::to_string(data.size()) +
                        " does not match shape " + shape_str(shape));
    }

    std::size_t numel() const { return data.size(); }
    int dim(std::size_t i) const { return shape[i]; }
    std::size_t ndim() const { return shape.size(); }

    T& at(std::size_t i) { return data[i]; }
    T at(std::size_t i) const { return data[i]; }

    // NCHW access
    T& at4(int n, int c, int h, int w) {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T at4(int n, int c, int h, int w) const {
        return data[((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w];
    }
    T& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
    T at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
TensorT<T> random_uniform(const std::vector<int>& shape, std::mt19937& rng, T lo, T hi) {
    TensorT<T> t(shape);
    std::uniform_real_distribution<double> d(static_cast<double>(lo), static_cast<double>(hi));
    for (auto& v : t.data) v = static_cast<T>(d(rng));
    return t;
}

template <typename T>
TensorT<T> random_normal(const std::vector<int>& shape, std::mt19937& rng, T mean, T stddev) {
    TensorT<T> t(shape);
    std::normal_distribution<double> d(static_cast<double>(mean), static_cast<double>(stddev));
    for (auto& v : t.data) v = static_cast<T>(d(rng));
    return t;
}

/// Bilinear resize of an H×W plane (also used by attribution and GradMix
/// outside the graph). Resizing to the same resolution is the identity.
template <typename T>
void bilinear_resize_plane(const T* src, int sh, int sw, T* dst, int dh, int dw) {
    if (sh == dh && sw == dw) {
        std::copy(src, src + static_cast<std::size_t>(sh) * sw, dst);
        return;
    }
    // align-corners sampling; degenerate 1-pixel axes map to coordinate 0
    const double ry = dh > 1 ? static_cast<double>(sh - 1) / (dh - 1) : 0.0;
    const double rx = dw > 1 ? static_cast<double>(sw - 1) / (dw - 1) : 0.0;
    for (int y = 0; y < dh; ++y) {
        double fy = y * ry;
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, sh - 1);
        double wy = fy - y0;
        for (int x = 0; x < dw; ++x) {
            double fx = x * rx;
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, sw - 1);
            double wx = fx - x0;
            double v00 = src[static_cast<std::size_t>(y0) * sw + x0];
            double v01 = src[static_cast<std::size_t>(y0) * sw + x1];
            double v10 = src[static_cast<std::size_t>(y1) * sw + x0];
            double v11 = src[static_cast<std::size_t>(y1) * sw + x1];
            dst[static_cast<std::size_t>(y) * dw + x] = static_cast<T>(
                (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11));
        }
    }
}

/// Resize an N×C×H×W tensor to a new spatial resolution.
template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& x, int dh, int dw) {
    if (x.ndim() == 2) {
        TensorT<T> out({dh, dw});
        bilinear_resize_plane(x.data.data(), x.shape[0], x.shape[1], out.data.data(), dh, dw);
        return out;
    }
    if (x.ndim() != 4) throw Error("bilinear_resize: expected 2-D or 4-D tensor, got " + shape_str(x.shape));
    int n = x.shape[0], c = x.shape[1], sh = x.shape[2], sw = x.shape[3];
    TensorT<T> out({n, c, dh, dw});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < c; ++j)
            bilinear_resize_plane(&x.data[((static_cast<std::size_t>(i) * c + j) * sh) * sw], sh, sw,
                                  &out.data[((static_cast<std::size_t>(i) * c + j) * dh) * dw], dh, dw);
    return out;
}

/// Row-0-axis concatenation of same-trailing-shape tensors.
template <typename T>
TensorT<T> concat_rows(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.ndim() != b.ndim() || a.ndim() < 1)
        throw Error("concat: rank mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    for (std::size_t i = 1; i < a.ndim(); ++i)
        if (a.shape[i] != b.shape[i])
            throw Error("concat: trailing shape mismatch " + shape_str(a.shape) + " vs " +
                        shape_str(b.shape));
    std::vector<int> shape = a.shape;
    shape[0] += b.shape[0];
    TensorT<T> out(shape);
    std::copy(a.data.begin(), a.data.end(), out.data.begin());
    std::copy(b.data.begin(), b.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(a.numel()));
    return out;
}

/// Gather whole rows (axis 0) by index.
template <typename T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<int>& indices) {
    if (x.ndim() < 1) throw Error("gather: tensor must have rows");
    const std::size_t stride = x.numel() / static_cast<std::size_t>(x.shape[0]);
    std::vector<int> shape = x.shape;
    shape[0] = static_cast<int>(indices.size());
    TensorT<T> out(shape);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        int r = indices[i];
        if (r < 0 || r >= x.shape[0]) throw Error("gather: row index out of range");
        std::copy_n(&x.data[r * stride], stride, &out.data[i * stride]);
    }
    return out;
}

}  // namespace gradmix
