#include "umaptour/alignment.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

#include "umaptour/umap.hpp"

namespace umaptour {

std::string to_string(AlignmentKind kind) {
    switch (kind) {
        case AlignmentKind::procrustes: return "procrustes";
        case AlignmentKind::cka: return "cka";
        case AlignmentKind::svd_layer: return "svd_layer";
    }
    return "procrustes";
}

AlignmentKind alignment_kind_from_string(const std::string& name) {
    if (name == "procrustes") return AlignmentKind::procrustes;
    if (name == "cka") return AlignmentKind::cka;
    if (name == "svd_layer") return AlignmentKind::svd_layer;
    throw ConfigError("unknown alignment kind '" + name + "'");
}

InterpolationPath make_path(const MatrixXd& x, const MatrixXd& y, const AlignmentMap& map) {
    if (x.rows() != y.rows() || x.cols() != map.transform.rows() ||
        y.cols() != map.transform.cols())
        throw ShapeError("path endpoints do not match the alignment transform");
    return {y, x * map.transform};
}

MatrixXd interpolate(const InterpolationPath& path, double s) {
    if (!(s >= 0.0 && s <= 1.0)) throw DomainError("interpolation parameter must lie in [0, 1]");
    if (s == 0.0) return path.y;
    if (s == 1.0) return path.x_aligned;
    return (1.0 - s) * path.y + s * path.x_aligned;
}

AlignmentMap procrustes_align_subsampled(const MatrixXd& x, const MatrixXd& y,
                                         double subsample_fraction, std::uint64_t seed) {
    if (!(subsample_fraction > 0.0 && subsample_fraction <= 1.0))
        throw ConfigError("subsample_fraction must lie in (0, 1]");
    if (subsample_fraction == 1.0) return procrustes_align(x, y);
    detail::check_pair(x, y);

    const auto n = x.rows();
    const auto m = std::clamp<Eigen::Index>(
        static_cast<Eigen::Index>(std::llround(subsample_fraction * static_cast<double>(n))), 1, n);
    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    std::mt19937_64 rng(seed);
    std::shuffle(rows.begin(), rows.end(), rng);
    rows.resize(static_cast<std::size_t>(m));
    std::sort(rows.begin(), rows.end());

    AlignmentMap map = procrustes_align(MatrixXd(x(rows, Eigen::all)), MatrixXd(y(rows, Eigen::all)));
    map.subsampled = true;
    try {
        map.score = procrustes_similarity(x, y);
    } catch (const DegenerateInputError&) {
        map.score = std::numeric_limits<double>::quiet_NaN();
    }
    return map;
}

std::vector<AlignmentMap> align_chain(std::span<const EmbeddingMatrix> embeddings,
                                      double subsample_fraction, std::uint64_t seed) {
    if (embeddings.size() < 2) throw ConfigError("an alignment chain needs at least 2 layers");
    for (const auto& e : embeddings)
        if (e.n() != embeddings.front().n() || e.d() != embeddings.front().d())
            throw ShapeError("embeddings in a chain must share n and d");
    std::vector<AlignmentMap> maps;
    for (std::size_t i = 0; i + 1 < embeddings.size(); ++i) {
        const MatrixXd y = embeddings[i].coords.cast<double>();
        const MatrixXd x = embeddings[i + 1].coords.cast<double>();
        auto map = procrustes_align_subsampled(x, y, subsample_fraction, seed + i);
        map.source_layer = embeddings[i + 1].layer_id;
        map.target_layer = embeddings[i].layer_id;
        maps.push_back(std::move(map));
    }
    return maps;
}

nlohmann::json sidecar_json(const AlignmentMap& map) {
    nlohmann::json score = std::isnan(map.score) ? nlohmann::json(nullptr) : nlohmann::json(map.score);
    return {{"kind", to_string(map.kind)},
            {"score", score},
            {"scale", map.scale},
            {"source_layer", map.source_layer},
            {"target_layer", map.target_layer},
            {"subsampled", map.subsampled},
            {"non_unique", map.non_unique},
            {"rows", map.transform.rows()},
            {"cols", map.transform.cols()}};
}

std::vector<char> transform_blob(const AlignmentMap& map) {
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(map.transform.size()));
    for (Eigen::Index r = 0; r < map.transform.rows(); ++r)
        for (Eigen::Index c = 0; c < map.transform.cols(); ++c)
            values.push_back(static_cast<float>(map.transform(r, c)));
    std::vector<char> out(values.size() * sizeof(float));
    std::memcpy(out.data(), values.data(), out.size());
    return out;
}

void write_alignment(const AlignmentMap& map, const std::filesystem::path& blob_path) {
    const auto blob = transform_blob(map);
    {
        std::ofstream out(blob_path, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot write '" + blob_path.string() + "'");
        out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    }
    std::ofstream side(blob_path.string() + ".json", std::ios::trunc);
    if (!side) throw IoError("cannot write sidecar for '" + blob_path.string() + "'");
    side << sidecar_json(map).dump(2) << '\n';
}

AlignmentMap read_alignment(const std::filesystem::path& blob_path) {
    std::ifstream side(blob_path.string() + ".json");
    if (!side) throw IoError("missing sidecar for '" + blob_path.string() + "'");
    const auto meta = nlohmann::json::parse(side);
    AlignmentMap map;
    map.kind = alignment_kind_from_string(meta.at("kind").get<std::string>());
    map.score = meta.at("score").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                           : meta.at("score").get<double>();
    map.scale = meta.at("scale").get<double>();
    map.source_layer = meta.at("source_layer").get<std::string>();
    map.target_layer = meta.at("target_layer").get<std::string>();
    map.subsampled = meta.value("subsampled", false);
    map.non_unique = meta.value("non_unique", false);
    const auto rows = meta.at("rows").get<Eigen::Index>();
    const auto cols = meta.at("cols").get<Eigen::Index>();

    std::ifstream in(blob_path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + blob_path.string() + "'");
    const std::vector<char> bytes{std::istreambuf_iterator<char>(in), {}};
    if (bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(float))
        throw FormatError("alignment blob size does not match its sidecar");
    std::vector<float> values(static_cast<std::size_t>(rows * cols));
    std::memcpy(values.data(), bytes.data(), bytes.size());
    map.transform = Eigen::Map<const RowMatrixf>(values.data(), rows, cols).cast<double>();
    return map;
}

}  // namespace umaptour
