#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace chorus {

enum class Dtype { f64, f32, f16, bf16 };

std::string dtype_name(Dtype d);
Dtype dtype_from_name(const std::string& name);
std::size_t dtype_size(Dtype d);

// One named tensor. Values are held as 64-bit reals regardless of the
// on-disk dtype; the dtype tag is preserved for round-tripping.
struct Tensor {
    std::vector<std::int64_t> shape;
    std::vector<double> values;
    Dtype dtype = Dtype::f32;

    std::int64_t numel() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

// Named real-valued tensors representing one model's parameters or deltas.
class TensorMap {
public:
    TensorMap() = default;

    void put(const std::string& name, Tensor t);
    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const { return entries_.count(name) > 0; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    // Sorted by name, so iteration order is deterministic everywhere.
    const std::map<std::string, Tensor>& entries() const { return entries_; }
    std::map<std::string, Tensor>& entries() { return entries_; }

    // True iff both maps hold exactly the same names and shapes.
    bool same_schema(const TensorMap& other) const;

    // Total element count across tensors.
    std::int64_t numel() const;

    // Content hash over names, shapes, dtypes, and value bit patterns.
    std::uint64_t content_hash() const;

private:
    std::map<std::string, Tensor> entries_;
};

// Fine-tuned-minus-base parameter deltas.
struct WeightDelta {
    std::string base_id;
    TensorMap delta;
};

// On-disk container: 8-byte little-endian header length, JSON header mapping
// tensor name -> {dtype, shape, data_offsets}, then raw little-endian data.
// Wire-compatible with the safetensors container.
TensorMap tensor_load(const std::string& path);
void tensor_save(const TensorMap& map, const std::string& path);

// In-memory codec used by tensor_load/tensor_save and the tests.
TensorMap tensor_from_bytes(const std::string& bytes);
std::string tensor_to_bytes(const TensorMap& map);

}  // namespace chorus
