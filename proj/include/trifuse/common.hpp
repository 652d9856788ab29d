#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace trifuse {

// User-addressable failures (bad arguments, bad config, missing or malformed
// files, mismatched shapes at an API boundary). The CLI maps these to exit 2;
// anything else that escapes is exit 1.
class UsageError : public std::runtime_error {
public:
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw UsageError(msg);
}

// Thread cap for directory-mode parallelism. 0 or unset -> hardware cores.
int thread_cap();

}  // namespace trifuse
