// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "petlab/tensor.h"

namespace petlab {

// Ordered named parameter set with per-parameter frozen flags. A frozen
// parameter never requires gradients.
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor tensor;
        bool frozen = false;
    };

    ParamStore() = default;
    // Copies are deep: the copy owns fresh tensors.
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Tensor& add(std::string name, Tensor tensor, bool frozen = false);

    bool contains(std::string_view name) const;
    Tensor& at(std::string_view name);
    const Tensor& at(std::string_view name) const;
    bool frozen(std::string_view name) const;

    void set_frozen(std::string_view name, bool frozen);
    void set_all_frozen(bool frozen);

    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }
    // Total scalar count across all parameters.
    std::size_t element_count() const;
    std::size_t trainable_element_count() const;

    void zero_grad();
    // Flat copy of every value, in entry order.
    std::vector<double> snapshot() const;

private:
    std::size_t index_of(std::string_view name) const;

    std::vector<Entry> entries_;
};

// Container format shared by backbone, prompt and adapter checkpoints.
//
//   bytes 0..7   "PETLCKPT"
//   u32          format version (1)
//   u64          metadata length, then metadata as UTF-8 JSON (sorted keys)
//   u64          entry count
//   per entry:   u32 name length, name bytes, u8 frozen flag, u32 rank,
//                u64 dims[rank], f64 values[prod(dims)] in row-major order
//
// Integers and IEEE-754 doubles are little-endian regardless of host order,
// so identical inputs give identical bytes on every platform.
struct Checkpoint {
    nlohmann::json metadata;
    ParamStore params;
};

// Writes to a sibling temporary file and renames it into place.
void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& metadata, const ParamStore& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// 64-bit FNV-1a over the bytes, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::string_view bytes);
// Hash of the canonical (sorted-key, compact) JSON serialization.
std::string config_hash(const nlohmann::json& config);

// Atomic text write: temporary sibling file then rename.
void write_text_file(const std::filesystem::path& path, std::string_view content);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace petlab
