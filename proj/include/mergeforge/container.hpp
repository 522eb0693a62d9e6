// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mergeforge/dtype.hpp"
#include "mergeforge/tensor.hpp"

namespace mergeforge {

// Checkpoint container format, bit-exact:
//   [u64 LE header length N][N bytes JSON header][payload]
// The header maps tensor names to {dtype, shape, data_offsets} with offsets
// relative to byte 8+N; "__metadata__" carries an optional string map.
// A sharded model is a JSON index file with "weight_map": name -> shard file.

struct TensorEntry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<uint64_t> shape;
    uint64_t begin = 0; // payload-relative byte offsets, begin < end
    uint64_t end = 0;   // (begin == end only for zero-element tensors)

    uint64_t numel() const;
    uint64_t nbytes() const { return end - begin; }
};

struct ModelManifest {
    std::vector<TensorEntry> entries; // in header order
    std::map<std::string, std::string> metadata;

    const TensorEntry* find(std::string_view name) const;
};

// Parses and validates the header of a single container file.
// Errors: oversized_header (> 100 MB guard), parse, layout, dtype, io.
ModelManifest read_header(const std::string& path);

// An opened model: one shard for a plain container, several for an index.
// Read-only after open; safe to share across concurrent readers.
class ModelHandle {
public:
    struct Shard {
        std::string path;
        ModelManifest manifest;
        uint64_t payload_base = 0; // 8 + header length
    };

    const std::vector<Shard>& shards() const { return shards_; }
    bool sharded() const { return sharded_; }

    // Tensor names in lexicographic order.
    std::vector<std::string> tensor_names() const;
    bool contains(std::string_view name) const;
    const TensorEntry& entry(std::string_view name) const; // not_found if absent
    size_t shard_of(std::string_view name) const;           // not_found if absent

    // Loads one tensor, widened to 32-bit float (F32 passes through bit-exactly).
    Tensor load_tensor(std::string_view name) const;

private:
    friend ModelHandle open_model(const std::string& path);

    std::vector<Shard> shards_;
    std::unordered_map<std::string, size_t> name_to_shard_;
    bool sharded_ = false;
};

// Opens a single container file or a shard-index file (detected by content).
// Errors: ambiguity for duplicate names across shards, io for missing shards.
ModelHandle open_model(const std::string& path);

// Streaming writer. Declare every tensor up front, then supply values in
// lexicographic name order; the header is fixed before any data is written,
// so peak memory stays bounded by one tensor. Byte-deterministic: identical
// declarations + values + metadata give identical files.
class ModelWriter {
public:
    ModelWriter(std::string path, std::map<std::string, std::string> metadata);
    ~ModelWriter();

    ModelWriter(const ModelWriter&) = delete;
    ModelWriter& operator=(const ModelWriter&) = delete;

    // Declaration phase. Duplicate names raise Errc::duplicate.
    void add_entry(const std::string& name, DType dtype, std::vector<uint64_t> shape);

    // Locks the entry set, sorts lexicographically, writes the header.
    void finalize_header();

    // Data phase: one call per declared tensor, in lexicographic name order.
    // Values are narrowed to the declared dtype in fixed-size chunks.
    void write_values(const std::string& name, const float* values, uint64_t count);

    // Validates that every declared tensor was written, then closes the file.
    void finish();

private:
    struct Pending {
        std::string name;
        DType dtype;
        std::vector<uint64_t> shape;
        uint64_t numel = 0;
    };

    std::string path_;
    std::map<std::string, std::string> metadata_;
    std::vector<Pending> entries_;
    size_t next_index_ = 0;
    bool header_written_ = false;
    bool finished_ = false;
    void* file_ = nullptr; // std::ofstream, kept out of the header
};

// Convenience one-shot writer for in-memory tensor sets (any input order;
// the file is always laid out in lexicographic name order).
struct NamedTensor {
    std::string name;
    const Tensor* tensor;
    DType dtype = DType::F32;
};

void write_model(const std::vector<NamedTensor>& tensors,
                 const std::map<std::string, std::string>& metadata,
                 const std::string& path);

} // namespace mergeforge
