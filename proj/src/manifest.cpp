#include "trifuse/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "trifuse/common.hpp"
#include "trifuse/image_io.hpp"

namespace fs = std::filesystem;

namespace trifuse {

const char* to_string(Split split) {
    switch (split) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw UsageError("unknown split '" + s + "'");
}

DatasetManifest build_manifest(const std::string& root, double train_frac, double val_frac) {
    require(train_frac >= 0.0 && val_frac >= 0.0 && train_frac + val_frac <= 1.0 + 1e-12,
            "split fractions must be non-negative and sum to <= 1");
    const fs::path high_dir = fs::path(root) / "high";
    require(fs::is_directory(high_dir), root + ": missing high/ directory");

    std::vector<std::string> names;
    for (const auto& e : fs::directory_iterator(high_dir))
        if (e.is_regular_file() && is_image_file(e.path().filename().string()))
            names.push_back(e.path().filename().string());
    require(!names.empty(), root + "/high: no images found");
    std::sort(names.begin(), names.end());

    std::vector<LightLevel> levels;
    for (LightLevel lv : {LightLevel::light, LightLevel::moderate, LightLevel::dense})
        if (fs::is_directory(fs::path(root) / to_string(lv))) levels.push_back(lv);
    require(!levels.empty(), root + ": no level directories (light/moderate/dense) found");

    const auto n = static_cast<long long>(names.size());
    const long long n_train = std::min<long long>(n, std::llround(train_frac * n));
    const long long n_val = std::min<long long>(n - n_train, std::llround(val_frac * n));

    DatasetManifest m;
    m.root = root;
    for (long long i = 0; i < n; ++i) {
        const Split split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        for (LightLevel lv : levels) {
            ManifestEntry e;
            e.low = std::string(to_string(lv)) + "/" + names[i];
            e.high = "high/" + names[i];
            e.split = split;
            e.level = lv;
            m.entries.push_back(std::move(e));
        }
    }
    validate_manifest(m);
    return m;
}

void validate_manifest(const DatasetManifest& m) {
    for (const auto& e : m.entries) {
        require(!e.low.empty(), "manifest entry without a low path");
        if (e.split != Split::test) {
            require(e.high.has_value() && e.level.has_value(),
                    "train/val entries must carry both paths and a level tag (" + e.low + ")");
        }
    }
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::ordered_json doc;
    doc["root"] = m.root;
    doc["entries"] = nlohmann::ordered_json::array();
    for (const auto& e : m.entries) {
        nlohmann::ordered_json je;
        je["low"] = e.low;
        je["high"] = e.high.has_value() ? nlohmann::ordered_json(*e.high)
                                        : nlohmann::ordered_json(nullptr);
        je["split"] = to_string(e.split);
        je["level"] = e.level.has_value() ? nlohmann::ordered_json(to_string(*e.level))
                                          : nlohmann::ordered_json(nullptr);
        doc["entries"].push_back(std::move(je));
    }
    std::ofstream out(path, std::ios::binary);
    require(out.good(), path + ": cannot open for writing");
    out << doc.dump(2) << "\n";
    require(out.good(), path + ": write failed");
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), path + ": cannot open");
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& ex) {
        throw UsageError(path + ": invalid manifest JSON: " + ex.what());
    }
    DatasetManifest m;
    try {
        m.root = doc.at("root").get<std::string>();
        for (const auto& je : doc.at("entries")) {
            ManifestEntry e;
            e.low = je.at("low").get<std::string>();
            if (!je.at("high").is_null()) e.high = je.at("high").get<std::string>();
            e.split = split_from_string(je.at("split").get<std::string>());
            if (!je.at("level").is_null())
                e.level = light_level_from_string(je.at("level").get<std::string>());
            m.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw UsageError(path + ": manifest schema mismatch: " + ex.what());
    }
    validate_manifest(m);
    return m;
}

}  // namespace trifuse
