#include "trifuse/synth.hpp"

#include <algorithm>
#include <cmath>

#include "trifuse/common.hpp"
#include "trifuse/rng.hpp"

namespace trifuse {

const char* to_string(LightLevel level) {
    switch (level) {
        case LightLevel::light: return "light";
        case LightLevel::moderate: return "moderate";
        case LightLevel::dense: return "dense";
    }
    return "?";
}

LightLevel light_level_from_string(const std::string& s) {
    if (s == "light") return LightLevel::light;
    if (s == "moderate") return LightLevel::moderate;
    if (s == "dense") return LightLevel::dense;
    throw UsageError("unknown light level '" + s + "' (light|moderate|dense)");
}

DegradationParams degradation_preset(LightLevel level) {
    switch (level) {
        case LightLevel::light: return {LightLevel::light, 1.5, 0.70, 0.01};
        case LightLevel::moderate: return {LightLevel::moderate, 2.2, 0.45, 0.02};
        case LightLevel::dense: return {LightLevel::dense, 3.0, 0.25, 0.03};
    }
    return {};
}

void validate_degradation(const DegradationParams& p) {
    require(p.gamma >= 1.0 && std::isfinite(p.gamma), "degradation gamma must be >= 1");
    require(p.gain > 0.0 && p.gain <= 1.0, "degradation gain must be in (0,1]");
    require(p.noise_sigma >= 0.0 && std::isfinite(p.noise_sigma),
            "degradation noise_sigma must be >= 0");
}

void validate_level_ordering(const DegradationParams& light, const DegradationParams& moderate,
                             const DegradationParams& dense) {
    auto mid = [](const DegradationParams& p) { return p.gain * std::pow(0.5, p.gamma); };
    require(mid(dense) < mid(moderate) && mid(moderate) < mid(light),
            "degradation presets must darken strictly more from light to dense");
}

ImageTensor synthesize_low_light(const ImageTensor& img, const DegradationParams& p,
                                 std::uint64_t seed) {
    validate_image(img, "synthesize_low_light input");
    validate_degradation(p);
    Rng noise = Rng(seed).stream("synth");
    ImageTensor out(img.height, img.width, img.channels);
    const bool noisy = p.noise_sigma > 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        double v = p.gain * std::pow(static_cast<double>(img.data[i]), p.gamma);
        if (noisy) v += p.noise_sigma * noise.normal();
        out.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

}  // namespace trifuse
