#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace trifuse {

// H x W x C array of intensities in [0,1], row-major, channel-last.
struct ImageTensor {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<float> data;

    ImageTensor() = default;
    ImageTensor(int h, int w, int c, float fill = 0.0f)
        : height(h), width(w), channels(c),
          data(static_cast<std::size_t>(h) * w * c, fill) {}

    float& at(int y, int x, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    float at(int y, int x, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
};

// Throws UsageError unless the ImageTensor invariants hold
// (finite values in [0,1], data length = h*w*c, channels 1 or 3).
void validate_image(const ImageTensor& img, const std::string& what = "image");

// Mean over all samples (all channels weighted equally).
double mean_intensity(const ImageTensor& img);

// ITU-R 601 luma for 3-channel images; identity for 1-channel.
ImageTensor to_gray(const ImageTensor& img);

ImageTensor clamp01(ImageTensor img);

// Whole-sample mirror padding. Pads may exceed the source size; the mirror
// folds with period 2n-2.
ImageTensor reflect_pad(const ImageTensor& img, int top, int bottom, int left, int right);

ImageTensor crop(const ImageTensor& img, int y0, int x0, int h, int w);

}  // namespace trifuse
