#include "trifuse/wavelet.hpp"

#include <vector>

#include "trifuse/common.hpp"
#include "trifuse/haar_core.hpp"

namespace trifuse {

void haar_analysis_2d(const float* src, int h, int w, int channels, float* a, float* v, float* hh,
                      float* d) {
    const int wa = (w + 1) / 2;
    const int wd = w / 2;
    std::vector<float> row_a(static_cast<size_t>(h) * wa);
    std::vector<float> row_d(static_cast<size_t>(h) * wd);
    for (int c = 0; c < channels; ++c) {
        // Rows first, reading the channel-interleaved layout.
        for (int y = 0; y < h; ++y) {
            haar_analyze_1d(src + (static_cast<size_t>(y) * w) * channels + c, w, channels,
                            row_a.data() + static_cast<size_t>(y) * wa, 1,
                            row_d.data() + static_cast<size_t>(y) * wd, 1);
        }
        // Then columns of each row-pass output.
        for (int x = 0; x < wa; ++x) {
            haar_analyze_1d(row_a.data() + x, h, wa, a + static_cast<size_t>(x) * channels + c,
                            wa * channels, v + static_cast<size_t>(x) * channels + c,
                            wa * channels);
        }
        for (int x = 0; x < wd; ++x) {
            haar_analyze_1d(row_d.data() + x, h, wd, hh + static_cast<size_t>(x) * channels + c,
                            wd * channels, d + static_cast<size_t>(x) * channels + c,
                            wd * channels);
        }
    }
}

void haar_synthesis_2d(const float* a, const float* v, const float* hh, const float* d, int h,
                       int w, int channels, float* dst) {
    const int wa = (w + 1) / 2;
    const int wd = w / 2;
    std::vector<float> row_a(static_cast<size_t>(h) * wa);
    std::vector<float> row_d(static_cast<size_t>(h) * wd);
    for (int c = 0; c < channels; ++c) {
        // Invert the column pass to recover the row-pass outputs.
        for (int x = 0; x < wa; ++x) {
            haar_synthesize_1d(a + static_cast<size_t>(x) * channels + c, wa * channels,
                               v + static_cast<size_t>(x) * channels + c, wa * channels, h,
                               row_a.data() + x, wa);
        }
        for (int x = 0; x < wd; ++x) {
            haar_synthesize_1d(hh + static_cast<size_t>(x) * channels + c, wd * channels,
                               d + static_cast<size_t>(x) * channels + c, wd * channels, h,
                               row_d.data() + x, wd);
        }
        // Then the row pass.
        for (int y = 0; y < h; ++y) {
            haar_synthesize_1d(row_a.data() + static_cast<size_t>(y) * wa, 1,
                               row_d.data() + static_cast<size_t>(y) * wd, 1, w,
                               dst + (static_cast<size_t>(y) * w) * channels + c, channels);
        }
    }
}

WaveletPyramid dwt2(const ImageTensor& img, int k) {
    require(k >= 1 && k <= 3, "wavelet levels must be in {1, 2, 3}");
    require(img.channels >= 1, "dwt2: image must have at least one channel");
    const int min_dim = 1 << k;
    require(img.height >= min_dim && img.width >= min_dim,
            "dwt2: image dimensions must be at least 2^k");

    WaveletPyramid pyr;
    pyr.levels = k;
    ImageTensor cur = img;
    for (int level = 0; level < k; ++level) {
        const int h = cur.height;
        const int w = cur.width;
        const int c = cur.channels;
        pyr.level_dims.emplace_back(h, w);

        ImageTensor a((h + 1) / 2, (w + 1) / 2, c);
        WaveletBandTriple bands;
        bands.v = ImageTensor(h / 2, (w + 1) / 2, c);
        bands.h = ImageTensor((h + 1) / 2, w / 2, c);
        bands.d = ImageTensor(h / 2, w / 2, c);
        haar_analysis_2d(cur.data.data(), h, w, c, a.data.data(), bands.v.data.data(),
                         bands.h.data.data(), bands.d.data.data());
        pyr.details.push_back(std::move(bands));
        cur = std::move(a);
    }
    pyr.approx = std::move(cur);
    return pyr;
}

ImageTensor idwt2(const WaveletPyramid& pyr) {
    require(pyr.levels >= 1 && pyr.levels <= 3, "idwt2: invalid pyramid level count");
    require(static_cast<int>(pyr.details.size()) == pyr.levels &&
                static_cast<int>(pyr.level_dims.size()) == pyr.levels,
            "idwt2: pyramid bands and level dimensions are inconsistent");

    ImageTensor cur = pyr.approx;
    for (int level = pyr.levels - 1; level >= 0; --level) {
        const auto [h, w] = pyr.level_dims[static_cast<size_t>(level)];
        const WaveletBandTriple& bands = pyr.details[static_cast<size_t>(level)];
        const int c = cur.channels;
        require(cur.height == (h + 1) / 2 && cur.width == (w + 1) / 2,
                "idwt2: approximation band has unexpected shape");
        require(bands.v.height == h / 2 && bands.v.width == (w + 1) / 2 &&
                    bands.h.height == (h + 1) / 2 && bands.h.width == w / 2 &&
                    bands.d.height == h / 2 && bands.d.width == w / 2,
                "idwt2: detail band has unexpected shape");
        require(bands.v.channels == c && bands.h.channels == c && bands.d.channels == c,
                "idwt2: channel counts disagree across bands");

        ImageTensor out(h, w, c);
        haar_synthesis_2d(cur.data.data(), bands.v.data.data(), bands.h.data.data(),
                          bands.d.data.data(), h, w, c, out.data.data());
        cur = std::move(out);
    }
    return cur;
}

double pyramid_energy(const WaveletPyramid& pyr) {
    double e = 0.0;
    for (float x : pyr.approx.data) e += static_cast<double>(x) * x;
    for (const WaveletBandTriple& bands : pyr.details) {
        for (float x : bands.v.data) e += static_cast<double>(x) * x;
        for (float x : bands.h.data) e += static_cast<double>(x) * x;
        for (float x : bands.d.data) e += static_cast<double>(x) * x;
    }
    return e;
}

}  // namespace trifuse
