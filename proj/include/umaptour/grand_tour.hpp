#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "umaptour/errors.hpp"
#include "umaptour/types.hpp"

namespace umaptour {

/// Torus-method Grand Tour state: GT_t composed from per-plane rotations.
struct TourState {
    int p = 0;
    MatrixXd gt;
    /// One angular velocity (rad/s) per coordinate plane (i < j), lexicographic.
    std::vector<double> plane_speeds;
    double t = 0.0;
    std::uint64_t seed = 0;
    int steps_since_reortho = 0;
};

inline constexpr double kMinPlaneSpeed = 0.03;
inline constexpr double kMaxPlaneSpeed = 0.3;
inline constexpr int kReorthoInterval = 1000;
inline constexpr double kReorthoDrift = 1e-6;

TourState new_tour(int p, std::uint64_t seed);

/// Advances the tour by dt seconds.
TourState step(TourState state, double dt);

/// ‖GTᵀ·GT − I‖_∞ (max absolute entry).
double orthogonality_error(const MatrixXd& gt);

/// Ordered Gram–Schmidt on columns.
void gram_schmidt_columns(MatrixXd& m);

/// Givens rotation in plane (i, j) by theta; row vectors e_i·G turn toward e_j.
MatrixXd givens(int p, int i, int j, double theta);

struct Projection {
    MatrixXd coords;
    int source_dim = 0;
    double tour_time = 0.0;
};

/// First k columns of x·GT_t.
template <typename Derived>
Projection project(const TourState& state, const Eigen::MatrixBase<Derived>& x, int k = 2) {
    if (k != 2 && k != 3) throw ShapeError("projection target must be 2-D or 3-D");
    if (x.cols() != state.p)
        throw ShapeError("data has " + std::to_string(x.cols()) + " columns, tour has p=" +
                         std::to_string(state.p));
    Projection out;
    out.coords = x.template cast<double>() * state.gt.leftCols(k);
    out.source_dim = state.p;
    out.tour_time = state.t;
    return out;
}

/// Steers the tour so the selection's projected centroid follows a drag of
/// (dx, dy) in projected units.
TourState direct_manipulate(TourState state, const MatrixXd& x,
                            std::span<const Eigen::Index> selected, double dx, double dy);

nlohmann::json to_json(const TourState& state);
TourState tour_from_json(const nlohmann::json& doc);

/// Golden tour states and projections for cross-implementation checks.
nlohmann::json tour_test_vectors(const MatrixXd& x, std::uint64_t seed, int frames, double dt);

}  // namespace umaptour
