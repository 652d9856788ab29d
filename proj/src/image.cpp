#include "trifuse/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "trifuse/common.hpp"

namespace trifuse {

int thread_cap() {
    if (const char* env = std::getenv("TRIFUSE_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}

void validate_image(const ImageTensor& img, const std::string& what) {
    require(img.height > 0 && img.width > 0, what + ": empty dimensions");
    require(img.channels == 1 || img.channels == 3, what + ": channels must be 1 or 3");
    require(img.data.size() == static_cast<std::size_t>(img.height) * img.width * img.channels,
            what + ": data length != h*w*c");
    for (float v : img.data) {
        require(std::isfinite(v) && v >= 0.0f && v <= 1.0f,
                what + ": intensity outside [0,1]");
    }
}

double mean_intensity(const ImageTensor& img) {
    double s = 0.0;
    for (float v : img.data) s += v;
    return img.data.empty() ? 0.0 : s / static_cast<double>(img.data.size());
}

ImageTensor to_gray(const ImageTensor& img) {
    if (img.channels == 1) return img;
    ImageTensor out(img.height, img.width, 1);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out.at(y, x, 0) = 0.299f * img.at(y, x, 0) + 0.587f * img.at(y, x, 1) +
                              0.114f * img.at(y, x, 2);
    return out;
}

ImageTensor clamp01(ImageTensor img) {
    for (float& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

namespace {
// Mirror fold of coordinate i into [0, n); period 2n-2, no edge repeat.
int mirror_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n - 2;
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}
}  // namespace

ImageTensor reflect_pad(const ImageTensor& img, int top, int bottom, int left, int right) {
    ImageTensor out(img.height + top + bottom, img.width + left + right, img.channels);
    for (int y = 0; y < out.height; ++y) {
        const int sy = mirror_index(y - top, img.height);
        for (int x = 0; x < out.width; ++x) {
            const int sx = mirror_index(x - left, img.width);
            for (int c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
        }
    }
    return out;
}

ImageTensor crop(const ImageTensor& img, int y0, int x0, int h, int w) {
    require(y0 >= 0 && x0 >= 0 && y0 + h <= img.height && x0 + w <= img.width,
            "crop window out of bounds");
    ImageTensor out(h, w, img.channels);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < img.channels; ++c)
                out.at(y, x, c) = img.at(y0 + y, x0 + x, c);
    return out;
}

}  // namespace trifuse
