#include "umaptour/activation_store.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <regex>

#include <nlohmann/json.hpp>

#include "umaptour/errors.hpp"

namespace umaptour {

static_assert(std::endian::native == std::endian::little,
              "array I/O assumes a little-endian host");

namespace {

constexpr char kMagic[] = "\x93NUMPY";
constexpr std::size_t kMagicSize = 6;

struct Header {
    char kind = 'f';
    int item_size = 4;
    bool big_endian = false;
    bool fortran_order = false;
    std::vector<std::int64_t> shape;
    std::size_t data_offset = 0;
};

std::string dict_value(const std::string& header, const std::string& key) {
    const auto pos = header.find("'" + key + "'");
    if (pos == std::string::npos) throw FormatError("NPY header lacks key '" + key + "'");
    auto colon = header.find(':', pos);
    if (colon == std::string::npos) throw FormatError("malformed NPY header");
    auto start = header.find_first_not_of(' ', colon + 1);
    if (start == std::string::npos) throw FormatError("malformed NPY header");
    std::size_t end;
    if (header[start] == '(') {
        end = header.find(')', start);
        if (end == std::string::npos) throw FormatError("malformed NPY shape");
        return header.substr(start, end - start + 1);
    }
    if (header[start] == '\'') {
        end = header.find('\'', start + 1);
        if (end == std::string::npos) throw FormatError("malformed NPY descr");
        return header.substr(start + 1, end - start - 1);
    }
    end = header.find_first_of(",}", start);
    return header.substr(start, end - start);
}

Header parse_header(const std::vector<char>& bytes) {
    if (bytes.size() < kMagicSize + 4 || std::memcmp(bytes.data(), kMagic, kMagicSize) != 0)
        throw FormatError("not an NPY file (bad magic)");
    const auto major = static_cast<unsigned char>(bytes[6]);
    const auto minor = static_cast<unsigned char>(bytes[7]);
    if (major != 1 || minor != 0)
        throw FormatError("unsupported NPY version " + std::to_string(major) + "." +
                          std::to_string(minor));
    std::uint16_t header_len;
    std::memcpy(&header_len, bytes.data() + 8, sizeof header_len);
    Header h;
    h.data_offset = 10 + std::size_t{header_len};
    if (bytes.size() < h.data_offset) throw FormatError("truncated NPY header");
    const std::string dict(bytes.data() + 10, header_len);

    const auto descr = dict_value(dict, "descr");
    if (descr.size() < 3) throw DtypeError("unsupported dtype '" + descr + "'");
    const char order = descr[0];
    h.kind = descr[1];
    h.item_size = std::atoi(descr.c_str() + 2);
    if (h.kind != 'f' || (h.item_size != 4 && h.item_size != 8))
        throw DtypeError("unsupported dtype '" + descr + "' (expected f4 or f8)");
    if (order == '>') h.big_endian = true;
    else if (order != '<' && order != '|' && order != '=')
        throw DtypeError("unsupported byte order in '" + descr + "'");

    const auto fortran = dict_value(dict, "fortran_order");
    if (fortran == "True") h.fortran_order = true;
    else if (fortran != "False") throw FormatError("bad fortran_order '" + fortran + "'");

    const auto shape = dict_value(dict, "shape");
    static const std::regex number(R"(\d+)");
    for (auto it = std::sregex_iterator(shape.begin(), shape.end(), number);
         it != std::sregex_iterator(); ++it)
        h.shape.push_back(std::stoll(it->str()));
    return h;
}

std::vector<char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::int64_t product(std::span<const std::int64_t> shape) {
    return std::accumulate(shape.begin(), shape.end(), std::int64_t{1},
                           std::multiplies<>());
}

// Reorders a column-major buffer into row-major order.
std::vector<float> to_row_major(const std::vector<float>& src,
                                const std::vector<std::int64_t>& shape) {
    const auto rank = shape.size();
    std::vector<float> dst(src.size());
    std::vector<std::int64_t> idx(rank, 0);
    for (std::size_t f = 0; f < src.size(); ++f) {
        // f walks the column-major order: first index varies fastest.
        std::int64_t c = 0;
        for (std::size_t d = 0; d < rank; ++d) c = c * shape[d] + idx[d];
        dst[static_cast<std::size_t>(c)] = src[f];
        for (std::size_t d = 0; d < rank; ++d) {
            if (++idx[d] < shape[d]) break;
            idx[d] = 0;
        }
    }
    return dst;
}

}  // namespace

std::int64_t ActivationTensor::row_size() const {
    if (shape.size() < 2) return 0;
    return product(std::span(shape).subspan(1));
}

void validate(const ActivationTensor& tensor) {
    if (tensor.shape.size() != 2 && tensor.shape.size() != 4)
        throw ValidationError("activation tensor must have rank 2 or 4, got rank " +
                              std::to_string(tensor.shape.size()));
    if (std::any_of(tensor.shape.begin(), tensor.shape.end(), [](auto d) { return d <= 0; }))
        throw ValidationError("activation tensor shape entries must be positive");
    if (product(tensor.shape) != static_cast<std::int64_t>(tensor.values.size()))
        throw ValidationError("shape product does not match value count");
    const auto bad = std::find_if(tensor.values.begin(), tensor.values.end(),
                                  [](float v) { return !std::isfinite(v); });
    if (bad != tensor.values.end())
        throw ValidationError("non-finite value at index " +
                              std::to_string(bad - tensor.values.begin()));
}

ActivationTensor read_array(const std::filesystem::path& path) {
    const auto bytes = read_bytes(path);
    const auto header = parse_header(bytes);
    if (header.shape.empty()) throw FormatError("NPY shape is empty");

    const auto count = product(header.shape);
    const auto payload = bytes.size() - header.data_offset;
    if (payload != static_cast<std::size_t>(count) * header.item_size)
        throw FormatError("NPY payload holds " + std::to_string(payload / header.item_size) +
                          " values but header declares " + std::to_string(count));

    ActivationTensor t;
    t.layer_id = path.stem().string();
    t.shape = header.shape;
    t.values.resize(static_cast<std::size_t>(count));
    const char* data = bytes.data() + header.data_offset;
    for (std::size_t i = 0; i < t.values.size(); ++i) {
        if (header.item_size == 4) {
            std::uint32_t raw;
            std::memcpy(&raw, data + 4 * i, 4);
            if (header.big_endian) raw = __builtin_bswap32(raw);
            t.values[i] = std::bit_cast<float>(raw);
        } else {
            std::uint64_t raw;
            std::memcpy(&raw, data + 8 * i, 8);
            if (header.big_endian) raw = __builtin_bswap64(raw);
            t.values[i] = static_cast<float>(std::bit_cast<double>(raw));
        }
        if (!std::isfinite(t.values[i]))
            throw ValueError("non-finite value at flat index " + std::to_string(i) + " in '" +
                                 path.string() + "'",
                             i);
    }
    t.narrowed = header.item_size == 8;
    if (header.fortran_order && header.shape.size() > 1)
        t.values = to_row_major(t.values, header.shape);
    return t;
}

std::vector<std::int64_t> read_array_shape(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<char> head(10);
    in.read(head.data(), 10);
    if (in.gcount() != 10) throw FormatError("truncated NPY file '" + path.string() + "'");
    std::uint16_t len;
    std::memcpy(&len, head.data() + 8, 2);
    head.resize(10 + std::size_t{len});
    in.read(head.data() + 10, len);
    return parse_header(head).shape;
}

namespace npy {

std::vector<char> encode(std::span<const float> values, std::span<const std::int64_t> shape) {
    std::string dict = "{'descr': '<f4', 'fortran_order': False, 'shape': (";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i > 0) dict += ", ";
        dict += std::to_string(shape[i]);
    }
    if (shape.size() == 1) dict += ',';
    dict += "), }";
    // Total header (magic + version + length + dict + newline) is 64-byte aligned.
    const std::size_t unpadded = 10 + dict.size() + 1;
    dict.append((64 - unpadded % 64) % 64, ' ');
    dict += '\n';

    std::vector<char> out(kMagic, kMagic + kMagicSize);
    out.push_back(1);
    out.push_back(0);
    const auto len = static_cast<std::uint16_t>(dict.size());
    out.push_back(static_cast<char>(len & 0xff));
    out.push_back(static_cast<char>(len >> 8));
    out.insert(out.end(), dict.begin(), dict.end());
    const auto* raw = reinterpret_cast<const char*>(values.data());
    out.insert(out.end(), raw, raw + values.size_bytes());
    return out;
}

}  // namespace npy

void write_array(const ActivationTensor& tensor, const std::filesystem::path& path) {
    if (tensor.shape.size() < 2)
        throw ValidationError("array rank must be at least 2");
    if (std::any_of(tensor.shape.begin(), tensor.shape.end(), [](auto d) { return d <= 0; }))
        throw ValidationError("array shape entries must be positive");
    if (product(tensor.shape) != static_cast<std::int64_t>(tensor.values.size()))
        throw ValidationError("shape product does not match value count");
    const auto bytes = npy::encode(tensor.values, tensor.shape);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + path.string() + "'");
}

const LayerEntry& DatasetManifest::layer(const std::string& id) const {
    auto it = std::find_if(layers.begin(), layers.end(), [&](auto& l) { return l.id == id; });
    if (it == layers.end()) throw ManifestError(id, "no such layer in model '" + model_name + "'");
    return *it;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ManifestError("", "cannot open manifest '" + path.string() + "'");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("", std::string("malformed manifest JSON: ") + e.what());
    }

    DatasetManifest m;
    const auto base = path.parent_path();
    try {
        m.model_name = doc.at("model_name").get<std::string>();
        for (const auto& entry : doc.at("layers")) {
            LayerEntry layer;
            layer.id = entry.at("id").get<std::string>();
            layer.path = entry.at("path").get<std::string>();
            if (layer.path.is_relative()) layer.path = base / layer.path;
            layer.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            m.layers.push_back(std::move(layer));
        }
        if (doc.contains("labels"))
            m.labels = doc["labels"].get<std::vector<std::int64_t>>();
        if (doc.contains("label_names"))
            for (const auto& [k, v] : doc["label_names"].items())
                m.label_names[std::stoll(k)] = v.get<std::string>();
        if (doc.contains("example_assets"))
            m.example_assets = doc["example_assets"].get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError("", std::string("invalid manifest field: ") + e.what());
    }

    if (m.layers.empty()) throw ManifestError("", "manifest lists no layers");
    std::int64_t n = -1;
    for (const auto& layer : m.layers) {
        if (!std::filesystem::exists(layer.path))
            throw ManifestError(layer.id, "file '" + layer.path.string() + "' does not exist");
        std::vector<std::int64_t> on_disk;
        try {
            on_disk = read_array_shape(layer.path);
        } catch (const Error& e) {
            throw ManifestError(layer.id, e.what());
        }
        if (on_disk != layer.shape)
            throw ManifestError(layer.id, "header shape does not match manifest shape");
        if (layer.shape.size() != 2 && layer.shape.size() != 4)
            throw ManifestError(layer.id, "layer must be rank 2 or 4");
        if (n < 0) n = layer.shape.front();
        if (layer.shape.front() != n)
            throw ManifestError(layer.id, "example count " + std::to_string(layer.shape.front()) +
                                              " differs from " + std::to_string(n));
    }
    if (n < 2) throw ManifestError(m.layers.front().id, "at least 2 examples are required");
    if (m.labels && static_cast<std::int64_t>(m.labels->size()) != n)
        throw ManifestError("", "labels length " + std::to_string(m.labels->size()) +
                                    " does not match n=" + std::to_string(n));
    if (m.example_assets && static_cast<std::int64_t>(m.example_assets->size()) != n)
        throw ManifestError("", "example_assets length does not match n");
    return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
    nlohmann::json doc;
    doc["model_name"] = manifest.model_name;
    doc["layers"] = nlohmann::json::array();
    const auto base = path.parent_path();
    for (const auto& layer : manifest.layers) {
        auto rel = layer.path.lexically_relative(base);
        doc["layers"].push_back({{"id", layer.id},
                                 {"path", (rel.empty() ? layer.path : rel).generic_string()},
                                 {"shape", layer.shape}});
    }
    if (manifest.labels) doc["labels"] = *manifest.labels;
    if (!manifest.label_names.empty()) {
        nlohmann::json names = nlohmann::json::object();
        for (const auto& [k, v] : manifest.label_names) names[std::to_string(k)] = v;
        doc["label_names"] = names;
    }
    if (manifest.example_assets) doc["example_assets"] = *manifest.example_assets;
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path.string() + "'");
    out << doc.dump(2) << '\n';
}

}  // namespace umaptour
