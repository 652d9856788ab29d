#pragma once

#include <map>
#include <string>
#include <vector>

#include "trifuse/image.hpp"

namespace trifuse {

double mse(const ImageTensor& a, const ImageTensor& b);
double mae(const ImageTensor& a, const ImageTensor& b);

// 10*log10(1/MSE) on unit-range images, capped at 100 dB when MSE < 1e-10.
double psnr(const ImageTensor& a, const ImageTensor& b);

// 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, L=1, valid windows
// only, averaged over channels. Requires min dim >= 11.
double ssim(const ImageTensor& a, const ImageTensor& b);

// Canonical 5-scale weights with dyadic downsampling; the scale count drops
// (weights renormalized) when the image is too small for all five.
double ms_ssim(const ImageTensor& a, const ImageTensor& b);

// Per-image metric values plus their arithmetic means.
struct MetricReport {
    std::vector<std::string> metric_names;                       // column order
    std::vector<std::pair<std::string, std::map<std::string, double>>> rows;
    std::map<std::string, double> means;
    int image_count = 0;

    void add(const std::string& image, const std::map<std::string, double>& values);
    void finalize();
};

// CSV contract: header `image,<metrics>`, one row per image, final MEAN row.
std::string report_to_csv(const MetricReport& report);

}  // namespace trifuse
