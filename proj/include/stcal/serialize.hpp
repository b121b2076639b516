#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "stcal/tensor.hpp"

namespace stcal {

// Tensor container: "STNS" magic, version u32, rank u32, dims (u64 each),
// dtype tag u32 (0=f64, 1=f32), then the row-major payload. Little-endian
// throughout. Label files: "STLB" magic, count u64, then count u32 values.
// Checkpoints: "STCK" magic, version u32, meta key/value section, manifest
// (name, dtype, rank, dims, byte offset), then concatenated STNS blobs.

enum class Dtype : uint32_t { f64 = 0, f32 = 1 };

Dtype dtype_for_current_precision();

void write_tensor(std::ostream& os, const Shape& shape, const std::vector<double>& data,
                  Dtype dtype);
TensorPtr read_tensor(std::istream& is, Dtype* dtype_out = nullptr);

void save_tensor(const std::string& path, const TensorPtr& t);
TensorPtr load_tensor(const std::string& path);

void save_labels(const std::string& path, const std::vector<int64_t>& labels);
std::vector<int64_t> load_labels(const std::string& path);

struct Checkpoint {
    // insertion order preserved; names unique
    std::vector<std::pair<std::string, TensorPtr>> tensors;
    std::vector<std::pair<std::string, std::string>> meta;

    const TensorPtr* find(const std::string& name) const;
    std::string meta_value(const std::string& key) const;  // "" when absent
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace stcal
