#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace trifuse {

// "TRIF" container: magic, format-version u32 LE, entry count u32 LE, then
// per entry: name length u16 LE + UTF-8 name, rank u8, dims as u32 LE,
// payload as little-endian 32-bit floats. Shared by model checkpoints and
// NIQE-model / BRISQUE-regressor files. Round trips byte-exactly.
struct ContainerEntry {
    std::vector<uint32_t> dims;
    std::vector<float> data;
};

using ContainerEntries = std::vector<std::pair<std::string, ContainerEntry>>;

constexpr uint32_t kContainerVersion = 1;

void save_container(const std::string& path, const ContainerEntries& entries);
ContainerEntries load_container(const std::string& path);

// Strings ride in the same container as one float per byte.
ContainerEntry string_entry(const std::string& s);
std::string entry_string(const ContainerEntry& e);

}  // namespace trifuse
