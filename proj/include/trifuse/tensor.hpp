#pragma once

#include <cstddef>
#include <vector>

#include "trifuse/common.hpp"

namespace trifuse {

// Dense NCHW tensor. Token sequences reuse the same container as
// (batch, heads, tokens, features); vectors as (1, 1, 1, n).
template <typename R>
struct TensorT {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<R> data;

    TensorT() = default;
    TensorT(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, static_cast<R>(0)) {
        require(n_ >= 0 && c_ >= 0 && h_ >= 0 && w_ >= 0, "tensor dims must be non-negative");
    }

    static TensorT zeros(int n_, int c_, int h_, int w_) { return TensorT(n_, c_, h_, w_); }
    static TensorT full(int n_, int c_, int h_, int w_, R v) {
        TensorT t(n_, c_, h_, w_);
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static TensorT scalar(R v) { return full(1, 1, 1, 1, v); }

    size_t numel() const { return data.size(); }
    bool same_shape(const TensorT& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }

    R& at(int ni, int ci, int yi, int xi) {
        return data[((static_cast<size_t>(ni) * c + ci) * h + yi) * w + xi];
    }
    R at(int ni, int ci, int yi, int xi) const {
        return data[((static_cast<size_t>(ni) * c + ci) * h + yi) * w + xi];
    }

    R* plane(int ni, int ci) { return data.data() + (static_cast<size_t>(ni) * c + ci) * h * w; }
    const R* plane(int ni, int ci) const {
        return data.data() + (static_cast<size_t>(ni) * c + ci) * h * w;
    }

    void zero() { std::fill(data.begin(), data.end(), static_cast<R>(0)); }

    template <typename R2>
    TensorT<R2> cast() const {
        TensorT<R2> out(n, c, h, w);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<R2>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;

}  // namespace trifuse
