#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "umaptour/errors.hpp"
#include "umaptour/types.hpp"

namespace umaptour {

/// Thin SVD m = u · diag(singular_values) · vᵀ with r = min(rows, cols).
template <typename Scalar>
struct SvdFactors {
    Matrix<Scalar> u;
    Vector<Scalar> singular_values;
    Matrix<Scalar> v;

    Matrix<Scalar> reconstruct() const {
        return u * singular_values.asDiagonal() * v.transpose();
    }
};

namespace detail {

// Modified Gram-Schmidt over the columns of q, in order. Columns whose
// residual collapses are replaced by the standard basis vector with the
// largest residual, so the result always has orthonormal columns.
template <typename Scalar>
void orthonormalize_columns(Matrix<Scalar>& q) {
    const auto rows = q.rows();
    for (Eigen::Index j = 0; j < q.cols(); ++j) {
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index k = 0; k < j; ++k)
                q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
        Scalar norm = q.col(j).norm();
        if (norm > Scalar(0.5)) {
            q.col(j) /= norm;
            continue;
        }
        Vector<Scalar> best = Vector<Scalar>::Zero(rows);
        Scalar best_norm = 0;
        for (Eigen::Index e = 0; e < rows; ++e) {
            Vector<Scalar> cand = Vector<Scalar>::Unit(rows, e);
            for (int pass = 0; pass < 2; ++pass)
                for (Eigen::Index k = 0; k < j; ++k)
                    cand -= q.col(k).dot(cand) * q.col(k);
            const Scalar cn = cand.norm();
            if (cn > best_norm) {
                best_norm = cn;
                best = cand;
            }
        }
        q.col(j) = best / best_norm;
    }
}

// One-sided (Hestenes) Jacobi on a matrix with rows >= cols.
template <typename Scalar>
SvdFactors<Scalar> jacobi_tall(Matrix<Scalar> a, int max_sweeps) {
    const auto cols = a.cols();
    Matrix<Scalar> v = Matrix<Scalar>::Identity(cols, cols);
    const Scalar tol = std::numeric_limits<Scalar>::epsilon() * Scalar(a.rows());

    bool rotated = true;
    int sweep = 0;
    for (; rotated && sweep < max_sweeps; ++sweep) {
        rotated = false;
        for (Eigen::Index p = 0; p + 1 < cols; ++p) {
            for (Eigen::Index q = p + 1; q < cols; ++q) {
                const Scalar alpha = a.col(p).squaredNorm();
                const Scalar beta = a.col(q).squaredNorm();
                const Scalar gamma = a.col(p).dot(a.col(q));
                if (gamma == Scalar(0) || std::abs(gamma) <= tol * std::sqrt(alpha * beta))
                    continue;
                rotated = true;
                const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
                const Scalar t = std::copysign(Scalar(1), zeta) /
                                 (std::abs(zeta) + std::sqrt(Scalar(1) + zeta * zeta));
                const Scalar c = Scalar(1) / std::sqrt(Scalar(1) + t * t);
                const Scalar s = c * t;
                for (Eigen::Index i = 0; i < a.rows(); ++i) {
                    const Scalar ap = a(i, p), aq = a(i, q);
                    a(i, p) = c * ap - s * aq;
                    a(i, q) = s * ap + c * aq;
                }
                for (Eigen::Index i = 0; i < cols; ++i) {
                    const Scalar vp = v(i, p), vq = v(i, q);
                    v(i, p) = c * vp - s * vq;
                    v(i, q) = s * vp + c * vq;
                }
            }
        }
    }
    if (rotated)
        throw NumericalError("Jacobi SVD did not converge in " + std::to_string(max_sweeps) +
                             " sweeps");

    Vector<Scalar> sigma = a.colwise().norm().transpose();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(cols));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](auto i, auto j) { return sigma(i) > sigma(j); });

    SvdFactors<Scalar> out;
    out.u.resize(a.rows(), cols);
    out.v.resize(cols, cols);
    out.singular_values.resize(cols);
    for (Eigen::Index k = 0; k < cols; ++k) {
        const auto src = order[static_cast<std::size_t>(k)];
        out.singular_values(k) = sigma(src);
        out.v.col(k) = v.col(src);
        out.u.col(k) = sigma(src) > Scalar(0) ? Vector<Scalar>(a.col(src) / sigma(src))
                                              : Vector<Scalar>::Zero(a.rows());
    }
    orthonormalize_columns(out.u);
    return out;
}

}  // namespace detail

/// Singular value decomposition by one-sided Jacobi rotations.
///
/// Returns r = min(rows, cols) triplets, singular values descending. Zero
/// singular values get an arbitrary orthonormal completion of u and v.
/// Throws NumericalError if the sweep cap is reached or the input is not finite.
template <typename Derived>
SvdFactors<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& m,
                                         int max_sweeps = 80) {
    using Scalar = typename Derived::Scalar;
    if (!m.allFinite()) throw NumericalError("svd input contains non-finite values");
    if (m.rows() >= m.cols()) return detail::jacobi_tall<Scalar>(m.eval(), max_sweeps);
    auto t = detail::jacobi_tall<Scalar>(m.transpose().eval(), max_sweeps);
    std::swap(t.u, t.v);
    return t;
}

template <typename Derived>
typename Derived::Scalar nuclear_norm(const Eigen::MatrixBase<Derived>& m) {
    return svd(m).singular_values.sum();
}

}  // namespace umaptour
