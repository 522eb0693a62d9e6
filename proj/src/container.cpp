// SPDX-License-Identifier: Apache-2.0
#include "mergeforge/container.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

#include "json.hpp"

#include "mergeforge/error.hpp"

namespace mergeforge {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

static constexpr uint64_t kHeaderGuard = 100ull * 1024 * 1024;
static constexpr size_t kIoChunkElems = 1u << 20; // 4 MB of f32 staging

static uint64_t checked_numel(const std::vector<uint64_t>& shape, const std::string& name) {
    uint64_t n = 1;
    for (uint64_t d : shape) {
        if (d != 0 && n > std::numeric_limits<uint64_t>::max() / d)
            raise(Errc::layout, "shape product overflows for tensor \"" + name + "\"");
        n *= d;
    }
    return n;
}

uint64_t TensorEntry::numel() const {
    uint64_t n = 1;
    for (uint64_t d : shape) n *= d;
    return n;
}

const TensorEntry* ModelManifest::find(std::string_view name) const {
    for (const auto& e : entries)
        if (e.name == name) return &e;
    return nullptr;
}

static uint64_t read_u64_le(const uint8_t* b) {
    uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

static void write_u64_le(std::ostream& out, uint64_t v) {
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = (uint8_t)(v >> (8 * i));
    out.write((const char*)b, 8);
}

namespace {
struct RawHeader {
    ModelManifest manifest;
    uint64_t payload_base = 0;
    uint64_t payload_len = 0;
};
} // namespace

static RawHeader parse_container_header(const std::string& path) {
    std::ifstream file(path, std::ios::binary | std::ios::ate);
    if (!file)
        raise(Errc::io, "cannot open \"" + path + "\"");
    const uint64_t file_size = (uint64_t)file.tellg();
    file.seekg(0);

    uint8_t lenbuf[8];
    file.read((char*)lenbuf, 8);
    if (!file)
        raise(Errc::parse, "\"" + path + "\" is too short for a container header");
    const uint64_t header_len = read_u64_le(lenbuf);
    if (header_len > kHeaderGuard)
        raise(Errc::oversized_header, "header length " + std::to_string(header_len) +
                                          " exceeds the 100 MB guard in \"" + path + "\"");
    if (8 + header_len > file_size)
        raise(Errc::io, "header extends past end of \"" + path + "\"");

    std::string header(header_len, '\0');
    file.read(header.data(), (std::streamsize)header_len);
    if (!file)
        raise(Errc::io, "short read of header in \"" + path + "\"");

    // Bytes beyond the JSON object may only be ASCII space padding.
    size_t end = header.size();
    while (end > 0 && header[end - 1] == ' ') --end;
    if (end > 0 && (header[end - 1] == '\n' || header[end - 1] == '\r' || header[end - 1] == '\t'))
        raise(Errc::parse, "non-space padding after header object in \"" + path + "\"");

    ojson doc = ojson::parse(header.begin(), header.begin() + (std::ptrdiff_t)end,
                             nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        raise(Errc::parse, "malformed header in \"" + path + "\"");

    RawHeader out;
    out.payload_base = 8 + header_len;
    out.payload_len = file_size - out.payload_base;

    uint64_t prev_end = 0;
    bool have_prev = false;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string& key = it.key();
        if (key == "__metadata__") {
            if (!it.value().is_object())
                raise(Errc::parse, "__metadata__ is not an object in \"" + path + "\"");
            for (auto m = it.value().begin(); m != it.value().end(); ++m) {
                if (!m.value().is_string())
                    raise(Errc::parse, "metadata value for \"" + m.key() + "\" is not a string");
                out.manifest.metadata[m.key()] = m.value().get<std::string>();
            }
            continue;
        }

        const ojson& v = it.value();
        if (!v.is_object() || !v.contains("dtype") || !v.contains("shape") ||
            !v.contains("data_offsets") || v.size() != 3)
            raise(Errc::parse, "entry \"" + key + "\" must have exactly dtype/shape/data_offsets");
        if (!v["dtype"].is_string())
            raise(Errc::parse, "dtype of \"" + key + "\" is not a string");

        TensorEntry e;
        e.name = key;
        e.dtype = dtype_from_name(v["dtype"].get<std::string>());

        if (!v["shape"].is_array())
            raise(Errc::parse, "shape of \"" + key + "\" is not an array");
        for (const auto& d : v["shape"]) {
            if (!d.is_number_unsigned())
                raise(Errc::parse, "shape of \"" + key + "\" has a non-unsigned entry");
            e.shape.push_back(d.get<uint64_t>());
        }

        const auto& off = v["data_offsets"];
        if (!off.is_array() || off.size() != 2 || !off[0].is_number_unsigned() ||
            !off[1].is_number_unsigned())
            raise(Errc::parse, "data_offsets of \"" + key + "\" must be two unsigned integers");
        e.begin = off[0].get<uint64_t>();
        e.end = off[1].get<uint64_t>();

        const uint64_t numel = checked_numel(e.shape, key);
        const uint64_t width = dtype_size(e.dtype);
        if (numel > std::numeric_limits<uint64_t>::max() / width)
            raise(Errc::layout, "byte size overflows for tensor \"" + key + "\"");
        if (e.end < e.begin || e.end - e.begin != numel * width)
            raise(Errc::layout, "data_offsets of \"" + key + "\" do not match shape and dtype");
        if (have_prev && e.begin < prev_end)
            raise(Errc::layout, "tensor \"" + key + "\" overlaps or precedes the previous entry");
        prev_end = e.end;
        have_prev = true;

        out.manifest.entries.push_back(std::move(e));
    }

    const uint64_t last_end = out.manifest.entries.empty() ? 0 : out.manifest.entries.back().end;
    if (last_end != out.payload_len)
        raise(Errc::layout, "payload of \"" + path + "\" is " + std::to_string(out.payload_len) +
                                " bytes but entries end at " + std::to_string(last_end));
    return out;
}

ModelManifest read_header(const std::string& path) {
    return parse_container_header(path).manifest;
}

std::vector<std::string> ModelHandle::tensor_names() const {
    std::vector<std::string> names;
    names.reserve(name_to_shard_.size());
    for (const auto& [name, _] : name_to_shard_) names.push_back(name);
    std::sort(names.begin(), names.end());
    return names;
}

bool ModelHandle::contains(std::string_view name) const {
    return name_to_shard_.count(std::string(name)) != 0;
}

size_t ModelHandle::shard_of(std::string_view name) const {
    auto it = name_to_shard_.find(std::string(name));
    if (it == name_to_shard_.end())
        raise(Errc::not_found, "tensor \"" + std::string(name) + "\" not found");
    return it->second;
}

const TensorEntry& ModelHandle::entry(std::string_view name) const {
    const auto& shard = shards_[shard_of(name)];
    return *shard.manifest.find(name);
}

Tensor ModelHandle::load_tensor(std::string_view name) const {
    const auto& shard = shards_[shard_of(name)];
    const TensorEntry& e = *shard.manifest.find(name);

    Tensor t;
    t.name = e.name;
    t.shape = e.shape;
    t.values.resize(e.numel());

    std::ifstream file(shard.path, std::ios::binary);
    if (!file)
        raise(Errc::io, "cannot open shard \"" + shard.path + "\"");
    file.seekg((std::streamoff)(shard.payload_base + e.begin));

    const size_t width = dtype_size(e.dtype);
    std::vector<uint8_t> raw(std::min<uint64_t>(e.numel(), kIoChunkElems) * width);
    uint64_t done = 0;
    while (done < e.numel()) {
        const uint64_t n = std::min<uint64_t>(kIoChunkElems, e.numel() - done);
        file.read((char*)raw.data(), (std::streamsize)(n * width));
        if (!file)
            raise(Errc::io, "truncated payload for tensor \"" + e.name + "\" in \"" +
                                shard.path + "\"");
        widen_to_f32(e.dtype, raw.data(), n, t.values.data() + done);
        done += n;
    }
    return t;
}

// A container file never starts with printable JSON: its first 8 bytes decode
// to a header length within the guard. An index file's first 8 ASCII bytes
// decode to an astronomically large integer, so the sniff is unambiguous.
static bool looks_like_container(const std::string& path) {
    std::ifstream file(path, std::ios::binary | std::ios::ate);
    if (!file)
        raise(Errc::io, "cannot open \"" + path + "\"");
    const uint64_t file_size = (uint64_t)file.tellg();
    if (file_size < 8) return false;
    file.seekg(0);
    uint8_t lenbuf[8];
    file.read((char*)lenbuf, 8);
    const uint64_t header_len = read_u64_le(lenbuf);
    return header_len <= kHeaderGuard && 8 + header_len <= file_size;
}

ModelHandle open_model(const std::string& path) {
    ModelHandle handle;

    if (looks_like_container(path)) {
        RawHeader raw = parse_container_header(path);
        handle.shards_.push_back({path, std::move(raw.manifest), raw.payload_base});
    } else {
        std::ifstream file(path, std::ios::binary);
        if (!file)
            raise(Errc::io, "cannot open \"" + path + "\"");
        ojson doc = ojson::parse(file, nullptr, false);
        if (doc.is_discarded() || !doc.is_object() || !doc.contains("weight_map") ||
            !doc["weight_map"].is_object())
            raise(Errc::parse, "\"" + path + "\" is neither a container nor a shard index");

        const fs::path dir = fs::path(path).parent_path();
        std::vector<std::string> shard_files;
        for (auto it = doc["weight_map"].begin(); it != doc["weight_map"].end(); ++it) {
            if (!it.value().is_string())
                raise(Errc::parse, "weight_map value for \"" + it.key() + "\" is not a string");
            const std::string f = it.value().get<std::string>();
            if (std::find(shard_files.begin(), shard_files.end(), f) == shard_files.end())
                shard_files.push_back(f);
        }
        for (const auto& f : shard_files) {
            const std::string shard_path = (dir / f).string();
            RawHeader raw = parse_container_header(shard_path);
            handle.shards_.push_back({shard_path, std::move(raw.manifest), raw.payload_base});
        }
        handle.sharded_ = true;
    }

    for (size_t s = 0; s < handle.shards_.size(); ++s) {
        for (const auto& e : handle.shards_[s].manifest.entries) {
            auto [it, inserted] = handle.name_to_shard_.emplace(e.name, s);
            if (!inserted)
                raise(Errc::ambiguity, "tensor \"" + e.name + "\" appears in \"" +
                                           handle.shards_[it->second].path + "\" and \"" +
                                           handle.shards_[s].path + "\"");
        }
    }
    return handle;
}

ModelWriter::ModelWriter(std::string path, std::map<std::string, std::string> metadata)
    : path_(std::move(path)), metadata_(std::move(metadata)) {}

ModelWriter::~ModelWriter() {
    delete static_cast<std::ofstream*>(file_);
}

void ModelWriter::add_entry(const std::string& name, DType dtype, std::vector<uint64_t> shape) {
    if (header_written_)
        raise(Errc::layout, "add_entry after finalize_header");
    if (name == "__metadata__")
        raise(Errc::duplicate, "\"__metadata__\" is a reserved name");
    for (const auto& p : entries_)
        if (p.name == name)
            raise(Errc::duplicate, "duplicate tensor name \"" + name + "\"");
    Pending p;
    p.name = name;
    p.dtype = dtype;
    p.numel = checked_numel(shape, name);
    p.shape = std::move(shape);
    entries_.push_back(std::move(p));
}

void ModelWriter::finalize_header() {
    if (header_written_)
        raise(Errc::layout, "finalize_header called twice");
    std::sort(entries_.begin(), entries_.end(),
              [](const Pending& a, const Pending& b) { return a.name < b.name; });

    ojson doc = ojson::object();
    if (!metadata_.empty()) {
        ojson meta = ojson::object();
        for (const auto& [k, v] : metadata_) meta[k] = v; // std::map: sorted keys
        doc["__metadata__"] = std::move(meta);
    }
    uint64_t cursor = 0;
    for (const auto& p : entries_) {
        const uint64_t bytes = p.numel * dtype_size(p.dtype);
        ojson e = ojson::object();
        e["dtype"] = std::string(dtype_name(p.dtype));
        e["shape"] = p.shape;
        e["data_offsets"] = std::vector<uint64_t>{cursor, cursor + bytes};
        doc[p.name] = std::move(e);
        cursor += bytes;
    }

    std::string header = doc.dump();
    // Space-pad so payload starts 8-byte aligned, as the ecosystem expects.
    while ((8 + header.size()) % 8 != 0) header.push_back(' ');

    auto* out = new std::ofstream(path_, std::ios::binary | std::ios::trunc);
    if (!*out) {
        delete out;
        raise(Errc::io, "cannot create \"" + path_ + "\"");
    }
    file_ = out;
    write_u64_le(*out, header.size());
    out->write(header.data(), (std::streamsize)header.size());
    if (!*out)
        raise(Errc::io, "failed writing header to \"" + path_ + "\"");
    header_written_ = true;
}

void ModelWriter::write_values(const std::string& name, const float* values, uint64_t count) {
    if (!header_written_)
        raise(Errc::layout, "write_values before finalize_header");
    if (next_index_ >= entries_.size())
        raise(Errc::layout, "write_values after all tensors were written");
    const Pending& p = entries_[next_index_];
    if (p.name != name)
        raise(Errc::layout, "write_values out of order: expected \"" + p.name + "\", got \"" +
                                name + "\"");
    if (count != p.numel)
        raise(Errc::shape, "tensor \"" + name + "\" declared " + std::to_string(p.numel) +
                               " elements, got " + std::to_string(count));

    auto& out = *static_cast<std::ofstream*>(file_);
    const size_t width = dtype_size(p.dtype);
    std::vector<uint8_t> raw(std::min<uint64_t>(std::max<uint64_t>(count, 1), kIoChunkElems) *
                             width);
    uint64_t done = 0;
    while (done < count) {
        const uint64_t n = std::min<uint64_t>(kIoChunkElems, count - done);
        narrow_from_f32(p.dtype, values + done, n, raw.data());
        out.write((const char*)raw.data(), (std::streamsize)(n * width));
        done += n;
    }
    if (!out)
        raise(Errc::io, "failed writing tensor \"" + name + "\" to \"" + path_ + "\"");
    ++next_index_;
}

void ModelWriter::finish() {
    if (!header_written_)
        finalize_header();
    if (next_index_ != entries_.size())
        raise(Errc::layout, "finish before all declared tensors were written");
    auto& out = *static_cast<std::ofstream*>(file_);
    out.flush();
    if (!out)
        raise(Errc::io, "failed finalizing \"" + path_ + "\"");
    out.close();
    finished_ = true;
}

void write_model(const std::vector<NamedTensor>& tensors,
                 const std::map<std::string, std::string>& metadata,
                 const std::string& path) {
    ModelWriter writer(path, metadata);
    for (const auto& t : tensors)
        writer.add_entry(t.name, t.dtype, t.tensor->shape);
    writer.finalize_header();

    std::vector<const NamedTensor*> order;
    order.reserve(tensors.size());
    for (const auto& t : tensors) order.push_back(&t);
    std::sort(order.begin(), order.end(),
              [](const NamedTensor* a, const NamedTensor* b) { return a->name < b->name; });
    for (const NamedTensor* t : order)
        writer.write_values(t->name, t->tensor->values.data(), t->tensor->values.size());
    writer.finish();
}

} // namespace mergeforge
