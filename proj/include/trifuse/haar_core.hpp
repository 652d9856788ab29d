#pragma once

#include <vector>

namespace trifuse {

// Strided orthonormal Haar pairs. Analysis: a=(x0+x1)/sqrt(2),
// d=(x0-x1)/sqrt(2); an odd tail sample passes into the approximation
// unchanged, keeping the map orthonormal (exact Parseval) for every length.
// Shared by the image-domain transform and the differentiable network op
// (whose backward is the forward analysis, the adjoint of an orthonormal
// synthesis).

template <typename R>
void haar_analyze_1d(const R* src, int n, int stride, R* a, int a_stride, R* d, int d_stride) {
    const R inv_sqrt2 = static_cast<R>(0.70710678118654752440L);
    const int pairs = n / 2;
    for (int i = 0; i < pairs; ++i) {
        const R x0 = src[(2 * i) * stride];
        const R x1 = src[(2 * i + 1) * stride];
        a[i * a_stride] = (x0 + x1) * inv_sqrt2;
        d[i * d_stride] = (x0 - x1) * inv_sqrt2;
    }
    if (n % 2 != 0) {
        a[pairs * a_stride] = src[(n - 1) * stride];
    }
}

template <typename R>
void haar_synthesize_1d(const R* a, int a_stride, const R* d, int d_stride, int n, R* dst,
                        int stride) {
    const R inv_sqrt2 = static_cast<R>(0.70710678118654752440L);
    const int pairs = n / 2;
    for (int i = 0; i < pairs; ++i) {
        const R av = a[i * a_stride];
        const R dv = d[i * d_stride];
        dst[(2 * i) * stride] = (av + dv) * inv_sqrt2;
        dst[(2 * i + 1) * stride] = (av - dv) * inv_sqrt2;
    }
    if (n % 2 != 0) {
        dst[(n - 1) * stride] = a[pairs * a_stride];
    }
}

// Single-plane 2D analysis/synthesis (rows first, then columns). Band shapes:
// a: ceil(h/2) x ceil(w/2), v: floor(h/2) x ceil(w/2),
// hh: ceil(h/2) x floor(w/2), d: floor(h/2) x floor(w/2).
template <typename R>
void haar_analyze_plane(const R* src, int h, int w, R* a, R* v, R* hh, R* d) {
    const int wa = (w + 1) / 2;
    const int wd = w / 2;
    std::vector<R> row_a(static_cast<size_t>(h) * wa);
    std::vector<R> row_d(static_cast<size_t>(h) * wd);
    for (int y = 0; y < h; ++y) {
        haar_analyze_1d(src + static_cast<size_t>(y) * w, w, 1,
                        row_a.data() + static_cast<size_t>(y) * wa, 1,
                        row_d.data() + static_cast<size_t>(y) * wd, 1);
    }
    for (int x = 0; x < wa; ++x) {
        haar_analyze_1d(row_a.data() + x, h, wa, a + x, wa, v + x, wa);
    }
    for (int x = 0; x < wd; ++x) {
        haar_analyze_1d(row_d.data() + x, h, wd, hh + x, wd, d + x, wd);
    }
}

template <typename R>
void haar_synthesize_plane(const R* a, const R* v, const R* hh, const R* d, int h, int w, R* dst) {
    const int wa = (w + 1) / 2;
    const int wd = w / 2;
    std::vector<R> row_a(static_cast<size_t>(h) * wa);
    std::vector<R> row_d(static_cast<size_t>(h) * wd);
    for (int x = 0; x < wa; ++x) {
        haar_synthesize_1d(a + x, wa, v + x, wa, h, row_a.data() + x, wa);
    }
    for (int x = 0; x < wd; ++x) {
        haar_synthesize_1d(hh + x, wd, d + x, wd, h, row_d.data() + x, wd);
    }
    for (int y = 0; y < h; ++y) {
        haar_synthesize_1d(row_a.data() + static_cast<size_t>(y) * wa, 1,
                           row_d.data() + static_cast<size_t>(y) * wd, 1, w,
                           dst + static_cast<size_t>(y) * w, 1);
    }
}

}  // namespace trifuse
