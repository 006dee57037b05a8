// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "moct/errors.hpp"
#include "moct/rng.hpp"
#include "moct/tensor.hpp"

namespace moct {

template <typename T>
struct ParamEntry {
    TensorT<T> tensor;
    bool frozen = false;
};

// Named parameters with freeze flags. Iteration order is lexicographic by
// name (std::map), which the checkpoint format and hashing rely on.
template <typename T>
class ParamStoreT {
  public:
    using Map = std::map<std::string, ParamEntry<T>>;

    TensorT<T>& add(const std::string& name, TensorT<T> tensor, bool frozen = false) {
        auto [it, inserted] = entries_.emplace(name, ParamEntry<T>{std::move(tensor), frozen});
        if (!inserted) throw ContractError("duplicate parameter name '" + name + "'");
        return it->second.tensor;
    }

    bool contains(const std::string& name) const { return entries_.count(name) != 0; }

    TensorT<T>& at(const std::string& name) { return entry(name).tensor; }
    const TensorT<T>& at(const std::string& name) const { return entry(name).tensor; }

    ParamEntry<T>& entry(const std::string& name) {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }
    const ParamEntry<T>& entry(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw ContractError("unknown parameter '" + name + "'");
        return it->second;
    }

    void set_frozen(const std::string& name, bool frozen) { entry(name).frozen = frozen; }

    typename Map::iterator begin() { return entries_.begin(); }
    typename Map::iterator end() { return entries_.end(); }
    typename Map::const_iterator begin() const { return entries_.begin(); }
    typename Map::const_iterator end() const { return entries_.end(); }

    size_t size() const { return entries_.size(); }

    int64_t param_count() const {
        int64_t n = 0;
        for (const auto& [name, e] : entries_) n += e.tensor.numel();
        return n;
    }

    bool any_name_contains(std::string_view fragment) const {
        for (const auto& [name, e] : entries_)
            if (name.find(fragment) != std::string::npos) return true;
        return false;
    }

    std::vector<std::string> names() const {
        std::vector<std::string> out;
        out.reserve(entries_.size());
        for (const auto& [name, e] : entries_) out.push_back(name);
        return out;
    }

    // Deep copy (fresh tensor storage, no gradients).
    ParamStoreT clone() const {
        ParamStoreT out;
        for (const auto& [name, e] : entries_) out.add(name, e.tensor.clone(), e.frozen);
        return out;
    }

    void clear_grads() {
        for (auto& [name, e] : entries_) e.tensor.clear_grad();
    }

    // FNV-1a over one tensor's raw bytes.
    uint64_t tensor_hash(const std::string& name) const {
        const auto& t = entry(name).tensor;
        return fnv1a64(t.data().data(), t.data().size() * sizeof(T));
    }

    // Hash of all parameter bytes plus names and freeze flags, in name order.
    uint64_t store_hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [name, e] : entries_) {
            h = fnv1a64(name, h);
            const uint8_t fz = e.frozen ? 1 : 0;
            h = fnv1a64(&fz, 1, h);
            h = fnv1a64(e.tensor.data().data(), e.tensor.data().size() * sizeof(T), h);
        }
        return h;
    }

    // Hash restricted to frozen entries; the freeze-soundness audits compare
    // this before and after training.
    uint64_t frozen_hash() const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& [name, e] : entries_) {
            if (!e.frozen) continue;
            h = fnv1a64(name, h);
            h = fnv1a64(e.tensor.data().data(), e.tensor.data().size() * sizeof(T), h);
        }
        return h;
    }

  private:
    Map entries_;
};

using ParamStore = ParamStoreT<float>;

}  // namespace moct
