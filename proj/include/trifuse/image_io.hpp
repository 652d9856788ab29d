#pragma once

#include <string>

#include "trifuse/image.hpp"

namespace trifuse {

// PNG (8-bit gray/RGB) or binary PPM/PGM (P6/P5, maxval 255), sniffed by
// content. Intensities are scaled to [0,1] by division by 255.
ImageTensor load_image(const std::string& path);

// Format chosen by extension: .png, .ppm (3-channel), .pgm (1-channel).
// Values are quantized with round(v*255).
void save_image(const std::string& path, const ImageTensor& img);

bool is_image_file(const std::string& filename);

}  // namespace trifuse
