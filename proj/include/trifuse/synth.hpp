#pragma once

#include <string>

#include "trifuse/image.hpp"

namespace trifuse {

enum class LightLevel { light, moderate, dense };

const char* to_string(LightLevel level);
LightLevel light_level_from_string(const std::string& s);

// Parametric darkening: out = clamp(gain * img^gamma + N(0, noise_sigma^2), 0, 1).
struct DegradationParams {
    LightLevel level = LightLevel::moderate;
    double gamma = 2.2;        // power-law exponent, > 1
    double gain = 0.45;        // linear attenuation, (0,1]
    double noise_sigma = 0.02; // additive Gaussian std on the unit interval
};

// Default presets; dense darkens strictly more than moderate, which darkens
// strictly more than light.
DegradationParams degradation_preset(LightLevel level);

void validate_degradation(const DegradationParams& p);

// Checks the mean-luminance ordering of a preset triple at mid-gray.
void validate_level_ordering(const DegradationParams& light, const DegradationParams& moderate,
                             const DegradationParams& dense);

// Deterministic for a fixed seed; noise is drawn from the "synth" stream.
ImageTensor synthesize_low_light(const ImageTensor& img, const DegradationParams& p,
                                 std::uint64_t seed);

}  // namespace trifuse
