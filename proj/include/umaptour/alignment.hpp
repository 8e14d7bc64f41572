#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umaptour/errors.hpp"
#include "umaptour/similarity.hpp"
#include "umaptour/svd.hpp"
#include "umaptour/types.hpp"

namespace umaptour {

struct EmbeddingMatrix;

enum class AlignmentKind { procrustes, cka, svd_layer };

std::string to_string(AlignmentKind kind);
AlignmentKind alignment_kind_from_string(const std::string& name);

/// Transform registering a source representation X onto a target Y (X·T ≈ Y).
struct AlignmentMap {
    AlignmentKind kind = AlignmentKind::procrustes;
    MatrixXd transform;
    double score = 1.0;
    /// z for CKA alignment, 1 otherwise.
    double scale = 1.0;
    std::string source_layer;
    std::string target_layer;
    /// The cross-covariance was rank deficient, so the rotation on its null
    /// space is one of many optima.
    bool non_unique = false;
    bool subsampled = false;
};

namespace detail {

template <typename Scalar>
bool rank_deficient(const Vector<Scalar>& sigma) {
    if (sigma.size() == 0) return false;
    const Scalar cutoff = sigma(0) * Scalar(sigma.size()) * std::numeric_limits<Scalar>::epsilon();
    return sigma(sigma.size() - 1) <= cutoff;
}

}  // namespace detail

/// Orthogonal Procrustes: Q* = U·Vᵀ where U·Σ·Vᵀ = XᵀY minimizes ‖X·Q − Y‖_F.
/// Reflections are allowed.
template <typename DX, typename DY>
AlignmentMap procrustes_align(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.cols() != y.cols())
        throw ShapeError("Procrustes alignment needs equal feature counts (" +
                         std::to_string(x.cols()) + " vs " + std::to_string(y.cols()) + ")");
    detail::check_pair(x, y);
    const MatrixXd xd = x.template cast<double>();
    const MatrixXd yd = y.template cast<double>();
    const auto f = svd(xd.transpose() * yd);
    AlignmentMap map;
    map.kind = AlignmentKind::procrustes;
    map.transform = f.u * f.v.transpose();
    map.non_unique = detail::rank_deficient(f.singular_values);
    try {
        map.score = procrustes_similarity(xd, yd);
    } catch (const DegenerateInputError&) {
        map.score = std::numeric_limits<double>::quiet_NaN();
    }
    return map;
}

/// CKA-induced alignment: W* = XᵀY / ‖XᵀY‖_F, so tr(W*ᵀW*) = 1.
template <typename DX, typename DY>
AlignmentMap cka_align(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    detail::check_pair(x, y);
    const MatrixXd cross = x.template cast<double>().transpose() * y.template cast<double>();
    const double z = cross.norm();
    if (detail::vanishes(z)) throw DegenerateInputError("XᵀY vanishes; CKA alignment undefined");
    AlignmentMap map;
    map.kind = AlignmentKind::cka;
    map.transform = cross / z;
    map.scale = z;
    try {
        map.score = linear_cka(x, y);
    } catch (const DegenerateInputError&) {
        map.score = std::numeric_limits<double>::quiet_NaN();
    }
    return map;
}

/// √p·W*, which satisfies tr(ŴᵀŴ) = p like an orthogonal p×p matrix.
inline MatrixXd scaled_cka_transform(const AlignmentMap& map) {
    return std::sqrt(static_cast<double>(map.transform.rows())) * map.transform;
}

/// Alignment of linearly connected layers Y = X·W by U_W·V_Wᵀ.
template <typename Derived>
AlignmentMap svd_layer_align(const Eigen::MatrixBase<Derived>& w) {
    if (w.rows() != w.cols()) throw ShapeError("layer map must be square");
    const auto f = svd(MatrixXd(w.template cast<double>()));
    AlignmentMap map;
    map.kind = AlignmentKind::svd_layer;
    map.transform = f.u * f.v.transpose();
    map.non_unique = detail::rank_deficient(f.singular_values);
    return map;
}

/// Appends zero columns up to `cols`. Never applied implicitly.
template <typename Derived>
MatrixXd pad_columns(const Eigen::MatrixBase<Derived>& m, Eigen::Index cols) {
    if (cols < m.cols()) throw ShapeError("cannot pad to fewer columns");
    MatrixXd out = MatrixXd::Zero(m.rows(), cols);
    out.leftCols(m.cols()) = m.template cast<double>();
    return out;
}

/// Straight-line path from the previous layer Y (s = 0) to X·Q* (s = 1).
struct InterpolationPath {
    MatrixXd y;
    MatrixXd x_aligned;
};

InterpolationPath make_path(const MatrixXd& x, const MatrixXd& y, const AlignmentMap& map);

/// (1 − s)·Y + s·X·Q*. Throws DomainError outside [0, 1].
MatrixXd interpolate(const InterpolationPath& path, double s);

/// map[i] aligns embeddings[i + 1] onto embeddings[i]. With
/// subsample_fraction < 1 the transform is fit on a seeded row subsample
/// and scored on all rows.
std::vector<AlignmentMap> align_chain(std::span<const EmbeddingMatrix> embeddings,
                                      double subsample_fraction, std::uint64_t seed);

/// Procrustes alignment of x onto y fit on a seeded row subsample.
AlignmentMap procrustes_align_subsampled(const MatrixXd& x, const MatrixXd& y,
                                         double subsample_fraction, std::uint64_t seed);

nlohmann::json sidecar_json(const AlignmentMap& map);

/// d×d row-major little-endian f32 blob.
std::vector<char> transform_blob(const AlignmentMap& map);

/// Writes `<stem>.bin` and `<stem>.bin.json`.
void write_alignment(const AlignmentMap& map, const std::filesystem::path& blob_path);
AlignmentMap read_alignment(const std::filesystem::path& blob_path);

}  // namespace umaptour
