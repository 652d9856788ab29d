#include "trifuse/patches.hpp"

#include "trifuse/common.hpp"
#include "trifuse/rng.hpp"

namespace trifuse {

namespace {

ImageTensor pad_to_min(const ImageTensor& img, int size) {
    const int pad_h = std::max(0, size - img.height);
    const int pad_w = std::max(0, size - img.width);
    if (pad_h == 0 && pad_w == 0) return img;
    return reflect_pad(img, pad_h / 2, pad_h - pad_h / 2, pad_w / 2, pad_w - pad_w / 2);
}

}  // namespace

std::vector<ImageTensor> extract_patches(const ImageTensor& img, int size, int count,
                                         std::uint64_t seed) {
    require(size >= 8, "patch size must be >= 8");
    require(count > 0, "patch count must be positive");
    validate_image(img, "extract_patches input");
    const ImageTensor src = pad_to_min(img, size);
    Rng rng = Rng(seed).stream("crop");
    std::vector<ImageTensor> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int y = rng.uniform_int(src.height - size + 1);
        const int x = rng.uniform_int(src.width - size + 1);
        out.push_back(crop(src, y, x, size, size));
    }
    return out;
}

std::vector<std::pair<ImageTensor, ImageTensor>> extract_patches_paired(
    const ImageTensor& low, const ImageTensor& high, int size, int count, std::uint64_t seed) {
    require(size >= 8, "patch size must be >= 8");
    require(count > 0, "patch count must be positive");
    require(low.height == high.height && low.width == high.width &&
                low.channels == high.channels,
            "paired patch extraction needs shape-matched images");
    const ImageTensor a = pad_to_min(low, size);
    const ImageTensor b = pad_to_min(high, size);
    Rng rng = Rng(seed).stream("crop");
    std::vector<std::pair<ImageTensor, ImageTensor>> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const int y = rng.uniform_int(a.height - size + 1);
        const int x = rng.uniform_int(a.width - size + 1);
        out.emplace_back(crop(a, y, x, size, size), crop(b, y, x, size, size));
    }
    return out;
}

}  // namespace trifuse
