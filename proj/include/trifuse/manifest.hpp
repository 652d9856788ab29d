#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trifuse/synth.hpp"

namespace trifuse {

enum class Split { train, val, test };

const char* to_string(Split split);
Split split_from_string(const std::string& s);

struct ManifestEntry {
    std::string low;                    // path relative to root
    std::optional<std::string> high;    // absent for unpaired test images
    Split split = Split::train;
    std::optional<LightLevel> level;
};

struct DatasetManifest {
    std::string root;
    std::vector<ManifestEntry> entries;
};

// Scans root/high/ plus any level subdirectories (light/, moderate/, dense/)
// and assigns splits lexicographically: first llround(train_frac*n) images to
// train, then llround(val_frac*n) to val, remainder to test. One entry per
// (image, level).
DatasetManifest build_manifest(const std::string& root, double train_frac, double val_frac);

// JSON document per the manifest schema; writing is deterministic.
void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Enforces per-entry invariants (train/val need both paths and a level tag).
void validate_manifest(const DatasetManifest& m);

}  // namespace trifuse
