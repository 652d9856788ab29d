#include "trifuse/metrics.hpp"

#include <cmath>

#include "trifuse/common.hpp"

namespace trifuse {

namespace {

void check_pair(const ImageTensor& a, const ImageTensor& b) {
    require(a.height == b.height && a.width == b.width && a.channels == b.channels,
            "metric: image shapes must match");
    require(!a.empty(), "metric: empty image");
}

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1*L)^2
constexpr double kC2 = 0.03 * 0.03;  // (K2*L)^2

std::vector<double> gaussian_window() {
    std::vector<double> w(kWin);
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        const double x = i - (kWin - 1) / 2.0;
        w[static_cast<size_t>(i)] = std::exp(-x * x / (2.0 * kSigma * kSigma));
        sum += w[static_cast<size_t>(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable valid-window Gaussian filter; output is (h-10) x (w-10).
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w) {
    static const std::vector<double> win = gaussian_window();
    const int ow = w - kWin + 1;
    const int oh = h - kWin + 1;
    std::vector<double> tmp(static_cast<size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWin; ++i)
                s += win[static_cast<size_t>(i)] * src[static_cast<size_t>(y) * w + x + i];
            tmp[static_cast<size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < kWin; ++i)
                s += win[static_cast<size_t>(i)] * tmp[static_cast<size_t>(y + i) * ow + x];
            out[static_cast<size_t>(y) * ow + x] = s;
        }
    return out;
}

std::vector<double> channel_plane(const ImageTensor& img, int c) {
    std::vector<double> out(static_cast<size_t>(img.height) * img.width);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out[static_cast<size_t>(y) * img.width + x] = img.at(y, x, c);
    return out;
}

// Mean luminance and contrast-structure terms for one channel pair.
void ssim_terms(const std::vector<double>& x, const std::vector<double>& y, int h, int w,
                double& lum, double& cs) {
    std::vector<double> xy(x.size()), xx(x.size()), yy(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        xy[i] = x[i] * y[i];
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
    }
    const std::vector<double> mu1 = filter_valid(x, h, w);
    const std::vector<double> mu2 = filter_valid(y, h, w);
    const std::vector<double> exx = filter_valid(xx, h, w);
    const std::vector<double> eyy = filter_valid(yy, h, w);
    const std::vector<double> exy = filter_valid(xy, h, w);
    double lsum = 0.0, csum = 0.0;
    for (size_t i = 0; i < mu1.size(); ++i) {
        const double m1 = mu1[i], m2 = mu2[i];
        const double s1 = exx[i] - m1 * m1;
        const double s2 = eyy[i] - m2 * m2;
        const double s12 = exy[i] - m1 * m2;
        lsum += (2.0 * m1 * m2 + kC1) / (m1 * m1 + m2 * m2 + kC1);
        csum += (2.0 * s12 + kC2) / (s1 + s2 + kC2);
    }
    lum = lsum / static_cast<double>(mu1.size());
    cs = csum / static_cast<double>(mu1.size());
}

ImageTensor downsample2(const ImageTensor& img) {
    const int oh = img.height / 2, ow = img.width / 2;
    ImageTensor out(oh, ow, img.channels);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = 0.25f * (img.at(2 * y, 2 * x, c) + img.at(2 * y, 2 * x + 1, c) +
                                           img.at(2 * y + 1, 2 * x, c) +
                                           img.at(2 * y + 1, 2 * x + 1, c));
    return out;
}

}  // namespace

double mse(const ImageTensor& a, const ImageTensor& b) {
    check_pair(a, b);
    double sum = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        const double d = static_cast<double>(a.data[i]) - b.data[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.data.size());
}

double mae(const ImageTensor& a, const ImageTensor& b) {
    check_pair(a, b);
    double sum = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        sum += std::abs(static_cast<double>(a.data[i]) - b.data[i]);
    return sum / static_cast<double>(a.data.size());
}

double psnr(const ImageTensor& a, const ImageTensor& b) {
    const double m = mse(a, b);
    if (m < 1e-10) return 100.0;
    return 10.0 * std::log10(1.0 / m);
}

double ssim(const ImageTensor& a, const ImageTensor& b) {
    check_pair(a, b);
    require(a.height >= kWin && a.width >= kWin, "ssim: min dim must be at least 11");
    double total = 0.0;
    for (int c = 0; c < a.channels; ++c) {
        double lum, cs;
        ssim_terms(channel_plane(a, c), channel_plane(b, c), a.height, a.width, lum, cs);
        total += lum * cs;
    }
    return total / a.channels;
}

double ms_ssim(const ImageTensor& a, const ImageTensor& b) {
    check_pair(a, b);
    static const double kWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
    int min_dim = std::min(a.height, a.width);
    int scales = 0;
    while (scales < 5 && (min_dim >> scales) >= kWin) ++scales;
    require(scales >= 1, "ms_ssim: min dim must be at least 11");
    double wsum = 0.0;
    for (int s = 0; s < scales; ++s) wsum += kWeights[s];

    ImageTensor xa = a, xb = b;
    double score = 1.0;
    for (int s = 0; s < scales; ++s) {
        double lum_c = 0.0, cs_c = 0.0;
        for (int c = 0; c < xa.channels; ++c) {
            double lum, cs;
            ssim_terms(channel_plane(xa, c), channel_plane(xb, c), xa.height, xa.width, lum, cs);
            lum_c += lum;
            cs_c += cs;
        }
        lum_c /= xa.channels;
        cs_c /= xa.channels;
        const double w = kWeights[s] / wsum;
        // Rare negative contrast-structure means are clamped so the weighted
        // geometric mean stays defined.
        score *= std::pow(std::max(cs_c, 0.0), w);
        if (s == scales - 1) score *= std::pow(std::max(lum_c, 0.0), w);
        else {
            xa = downsample2(xa);
            xb = downsample2(xb);
        }
    }
    return score;
}

}  // namespace trifuse
