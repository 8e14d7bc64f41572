#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "umaptour/errors.hpp"
#include "umaptour/preprocess.hpp"
#include "umaptour/svd.hpp"
#include "umaptour/types.hpp"

namespace umaptour {

enum class IndexKind { cka_linear, procrustes };

std::string to_string(IndexKind kind);
IndexKind index_kind_from_string(const std::string& name);

namespace detail {

template <typename DX, typename DY>
void check_pair(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    if (x.rows() != y.rows())
        throw ShapeError("example counts differ: " + std::to_string(x.rows()) + " vs " +
                         std::to_string(y.rows()));
}

inline bool vanishes(double v) { return !(v > std::numeric_limits<double>::min()); }

}  // namespace detail

/// Inner products among examples, K = M·Mᵀ.
template <typename Derived>
MatrixXd gram(const Eigen::MatrixBase<Derived>& m) {
    const MatrixXd md = m.template cast<double>();
    return md * md.transpose();
}

/// Linear CKA on column-centered inputs:
/// ‖XᵀY‖²_F / (‖XᵀX‖_F · ‖YᵀY‖_F). Accumulates in double.
template <typename DX, typename DY>
double linear_cka(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    detail::check_pair(x, y);
    const MatrixXd xd = x.template cast<double>();
    const MatrixXd yd = y.template cast<double>();
    const double xx = (xd.transpose() * xd).norm();
    const double yy = (yd.transpose() * yd).norm();
    if (detail::vanishes(xx) || detail::vanishes(yy))
        throw DegenerateInputError("linear CKA is undefined for a zero-variance input");
    return (xd.transpose() * yd).squaredNorm() / (xx * yy);
}

/// Orthogonal-Procrustes similarity ‖XᵀY‖_* / sqrt(‖XᵀX‖_* · ‖YᵀY‖_*).
template <typename DX, typename DY>
double procrustes_similarity(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DY>& y) {
    detail::check_pair(x, y);
    const MatrixXd xd = x.template cast<double>();
    const MatrixXd yd = y.template cast<double>();
    const double xx = nuclear_norm(xd.transpose() * xd);
    const double yy = nuclear_norm(yd.transpose() * yd);
    if (detail::vanishes(xx) || detail::vanishes(yy))
        throw DegenerateInputError("Procrustes similarity is undefined for an all-zero input");
    return nuclear_norm(xd.transpose() * yd) / std::sqrt(xx * yy);
}

/// Requires both inputs to carry the centered flag.
double linear_cka(const ActivationMatrix& x, const ActivationMatrix& y);
double procrustes_similarity(const ActivationMatrix& x, const ActivationMatrix& y);

double similarity_index(IndexKind kind, const ActivationMatrix& x, const ActivationMatrix& y);

/// Layer-by-layer score table. Cells whose pair is degenerate hold NaN.
struct SimilarityMatrix {
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    MatrixXd scores;
    IndexKind index_kind = IndexKind::cka_linear;

    bool is_flagged(Eigen::Index i, Eigen::Index j) const { return std::isnan(scores(i, j)); }
};

nlohmann::json to_json(const SimilarityMatrix& m);
SimilarityMatrix similarity_from_json(const nlohmann::json& doc);
std::string to_csv(const SimilarityMatrix& m);

/// scores(i, j) = index(a[i], b[j]). For cka_linear the inputs are centered
/// here; procrustes uses the inputs as given. threads = 0 picks hardware
/// concurrency.
SimilarityMatrix similarity_matrix(std::span<const ActivationMatrix> a,
                                   std::span<const ActivationMatrix> b, IndexKind kind,
                                   unsigned threads = 1);

struct PerClassSimilarity {
    std::map<std::int64_t, SimilarityMatrix> per_class;
    SimilarityMatrix mean;
    std::map<std::int64_t, SimilarityMatrix> deviation;
    /// Classes left out, with the reason.
    std::vector<std::string> warnings;
};

/// Layer-by-layer similarity restricted to each class's examples, their
/// element-wise mean and each class's deviation from it.
PerClassSimilarity per_class_similarity(std::span<const ActivationMatrix> layers,
                                        std::span<const std::int64_t> labels, IndexKind kind);

/// Sample Pearson correlation.
double pearson_r(std::span<const double> a, std::span<const double> b);

/// Values strictly above the diagonal for square matrices, every cell
/// otherwise; row-major. NaN cells are kept.
std::vector<double> upper_triangle(const SimilarityMatrix& m);

}  // namespace umaptour
