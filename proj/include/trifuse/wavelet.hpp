#pragma once

#include <utility>
#include <vector>

#include "trifuse/image.hpp"

namespace trifuse {

// One decomposition level: vertical, horizontal, and diagonal high-frequency
// bands (per channel).
struct WaveletBandTriple {
    ImageTensor v;  // column-pass detail, row-pass approximation
    ImageTensor h;  // row-pass detail, column-pass approximation
    ImageTensor d;  // detail in both passes
};

// Orthonormal multi-level 2D Haar decomposition. `details` is ordered finest
// first; `approx` is the coarsest approximation band. `level_dims` records
// the (height, width) consumed by each analysis level (finest first) so the
// synthesis side knows the odd/even split exactly.
struct WaveletPyramid {
    int levels = 0;
    ImageTensor approx;
    std::vector<WaveletBandTriple> details;
    std::vector<std::pair<int, int>> level_dims;
};

// Analysis pair a=(x0+x1)/sqrt(2), d=(x0-x1)/sqrt(2); an odd tail sample
// passes into the approximation unchanged, which keeps the transform
// orthonormal (exact Parseval) on every size. k in {1,2,3}; dims >= 2^k.
WaveletPyramid dwt2(const ImageTensor& img, int k);

// Exact inverse of dwt2 up to floating point. No clamping.
ImageTensor idwt2(const WaveletPyramid& pyr);

// Sum of squares over every band (Parseval against the input energy).
double pyramid_energy(const WaveletPyramid& pyr);

// Single-level planar transforms on channel-last data, used by both dwt2 and
// the differentiable reconstruction op (whose backward is the forward
// analysis, the adjoint of an orthonormal synthesis).
void haar_analysis_2d(const float* src, int h, int w, int channels, float* a, float* v,
                      float* hh, float* d);
void haar_synthesis_2d(const float* a, const float* v, const float* hh, const float* d, int h,
                       int w, int channels, float* dst);

}  // namespace trifuse
