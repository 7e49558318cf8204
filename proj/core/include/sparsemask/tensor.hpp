#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sparsemask {

// Dense 4-D array in NCHW layout. Single precision is used for training,
// double precision for oracle and gradient verification.
template <typename T>
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {
        if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) {
            throw std::runtime_error("tensor: negative dimension in " + shape_str());
        }
    }

    static Tensor scalar(T v) {
        Tensor t(1, 1, 1, 1);
        t.data[0] = v;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    bool is_scalar() const { return numel() == 1; }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    T& at(int in, int ic, int ih, int iw) {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
    }
    const T& at(int in, int ic, int ih, int iw) const {
        return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (const T& v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "(" << n << "," << c << "," << h << "," << w << ")";
        return os.str();
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out(n, c, h, w);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

// Integer label map for dense prediction targets, one class id per pixel.
struct LabelMap {
    int n = 0, h = 0, w = 0;
    std::vector<std::int32_t> ids;

    LabelMap() = default;
    LabelMap(int n_, int h_, int w_)
        : n(n_), h(h_), w(w_), ids(static_cast<std::size_t>(n_) * h_ * w_, 0) {}

    std::size_t numel() const { return ids.size(); }
    std::int32_t& at(int in, int ih, int iw) {
        return ids[(static_cast<std::size_t>(in) * h + ih) * w + iw];
    }
    std::int32_t at(int in, int ih, int iw) const {
        return ids[(static_cast<std::size_t>(in) * h + ih) * w + iw];
    }
};

}  // namespace sparsemask
