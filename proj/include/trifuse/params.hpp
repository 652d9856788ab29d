#pragma once

#include <map>
#include <string>

#include "trifuse/tensor.hpp"

namespace trifuse {

// Named model state. Trainable entries receive gradients and optimizer
// updates; non-trainable entries (batchnorm running statistics) are mutated
// directly by the forward pass in training mode.
template <typename R>
struct ParamBankT {
    struct Entry {
        TensorT<R> value;
        bool trainable = true;
    };
    std::map<std::string, Entry> entries;  // sorted -> deterministic iteration

    TensorT<R>& at(const std::string& name) {
        auto it = entries.find(name);
        require(it != entries.end(), "unknown parameter: " + name);
        return it->second.value;
    }
    const TensorT<R>& at(const std::string& name) const {
        auto it = entries.find(name);
        require(it != entries.end(), "unknown parameter: " + name);
        return it->second.value;
    }

    size_t trainable_count() const {
        size_t n = 0;
        for (const auto& [name, e] : entries)
            if (e.trainable) n += e.value.numel();
        return n;
    }

    template <typename R2>
    ParamBankT<R2> cast() const {
        ParamBankT<R2> out;
        for (const auto& [name, e] : entries)
            out.entries[name] = {e.value.template cast<R2>(), e.trainable};
        return out;
    }
};

using ParamBank = ParamBankT<float>;

}  // namespace trifuse
