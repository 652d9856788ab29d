#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "trifuse/image.hpp"

namespace trifuse {

// Random size x size crops; images smaller than size are reflect-padded
// first. Same seed -> same crops.
std::vector<ImageTensor> extract_patches(const ImageTensor& img, int size, int count,
                                         std::uint64_t seed);

// Pixel-aligned crops from a low/high pair (identical coordinates).
std::vector<std::pair<ImageTensor, ImageTensor>> extract_patches_paired(
    const ImageTensor& low, const ImageTensor& high, int size, int count, std::uint64_t seed);

}  // namespace trifuse
