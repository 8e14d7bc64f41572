#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace umaptour {

/// Raw output of one layer for n examples: n×p or n×c×h×w, row-major f32.
struct ActivationTensor {
    std::string layer_id;
    std::vector<std::int64_t> shape;
    std::vector<float> values;
    /// Set when the source file held f64 values that were narrowed on read.
    bool narrowed = false;

    std::int64_t n() const { return shape.empty() ? 0 : shape.front(); }
    std::int64_t rank() const { return static_cast<std::int64_t>(shape.size()); }
    /// Product of every dimension after the first.
    std::int64_t row_size() const;
};

/// Throws ValidationError unless shape is rank 2 or 4 with positive entries,
/// the value count matches and every value is finite.
void validate(const ActivationTensor& tensor);

ActivationTensor read_array(const std::filesystem::path& path);
void write_array(const ActivationTensor& tensor, const std::filesystem::path& path);

/// Shape recorded in an NPY header, without reading the payload.
std::vector<std::int64_t> read_array_shape(const std::filesystem::path& path);

struct LayerEntry {
    std::string id;
    std::filesystem::path path;
    std::vector<std::int64_t> shape;
};

struct DatasetManifest {
    std::string model_name;
    std::vector<LayerEntry> layers;
    std::optional<std::vector<std::int64_t>> labels;
    std::map<std::int64_t, std::string> label_names;
    std::optional<std::vector<std::string>> example_assets;

    std::int64_t n() const { return layers.empty() ? 0 : layers.front().shape.front(); }
    const LayerEntry& layer(const std::string& id) const;
};

/// Parses and eagerly validates a manifest. Relative layer paths resolve
/// against the manifest's directory.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

namespace npy {

/// Encodes a complete NPY v1.0 file (little-endian f32, C order).
std::vector<char> encode(std::span<const float> values, std::span<const std::int64_t> shape);

}  // namespace npy

}  // namespace umaptour
