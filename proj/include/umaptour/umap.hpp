#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "umaptour/preprocess.hpp"
#include "umaptour/types.hpp"

namespace umaptour {

/// k nearest neighbors per point, ascending by distance, self excluded.
struct NeighborGraph {
    Eigen::Index n = 0;
    Eigen::Index k = 0;
    Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> indices;
    RowMatrixf distances;
    bool exact = true;
};

struct FuzzyEdge {
    std::int32_t i;
    std::int32_t j;
    float weight;
};

/// Symmetric fuzzy neighbor graph. Edges are stored in both directions,
/// sorted by (i, j).
struct FuzzyGraph {
    Eigen::Index n = 0;
    std::vector<FuzzyEdge> edges;
    VectorXd rho;
    VectorXd sigma;
    /// Rows where the bandwidth search had no solution.
    std::vector<bool> degenerate;
    /// Directed membership strengths before symmetrization, aligned with the
    /// neighbor graph's indices.
    RowMatrixf directed;

    double weight(std::int32_t i, std::int32_t j) const;
};

struct CurveParams {
    double a;
    double b;
};

struct EmbeddingConfig {
    int d = 15;
    int n_neighbors = 15;
    double min_dist = 0.1;
    double spread = 1.0;
    /// Fitted from min_dist/spread when unset.
    std::optional<double> a;
    std::optional<double> b;
    /// 500 for n <= 10000, else 200, when unset.
    std::optional<int> n_epochs;
    int negative_samples = 5;
    double initial_lr = 1.0;
    std::uint64_t seed = 0;
    /// Brute-force kNN when true, NN-Descent otherwise.
    bool exact_knn = true;
    /// Sequential, bit-reproducible layout optimization when true.
    bool deterministic = true;
    unsigned threads = 1;

    void validate() const;
    CurveParams curve() const;
    int epochs_for(Eigen::Index n) const;
};

nlohmann::json to_json(const EmbeddingConfig& cfg);
EmbeddingConfig embedding_config_from_json(const nlohmann::json& doc,
                                           EmbeddingConfig base = {});

struct EmbeddingMatrix {
    std::string layer_id;
    RowMatrixf coords;
    double final_loss = 0.0;
    std::uint64_t seed = 0;

    Eigen::Index n() const { return coords.rows(); }
    Eigen::Index d() const { return coords.cols(); }
};

NeighborGraph knn_graph(const ActivationMatrix& x, int k, bool exact, std::uint64_t seed,
                        unsigned threads = 1);

/// Fraction of exact neighbors recovered by an approximate graph.
double knn_recall(const NeighborGraph& approx, const NeighborGraph& exact);

FuzzyGraph fuzzy_graph(const NeighborGraph& nn);

/// Least-squares fit of 1/(1 + a·x^{2b}) to the min_dist/spread target curve.
CurveParams fit_curve(double min_dist, double spread);

/// Low-dimensional membership strength 1/(1 + a·dist^{2b}).
inline double membership(double dist, CurveParams c) {
    return 1.0 / (1.0 + c.a * std::pow(dist, 2.0 * c.b));
}

/// Gradient with respect to y_i of −log Ψ(‖y_i − y_j‖), as a coefficient on
/// (y_i − y_j). Zero at coincident points.
inline double attraction_coefficient(double dist_sq, CurveParams c) {
    if (dist_sq <= 0.0) return 0.0;
    return 2.0 * c.a * c.b * std::pow(dist_sq, c.b - 1.0) / (1.0 + c.a * std::pow(dist_sq, c.b));
}

/// Gradient with respect to y_i of −log(1 − Ψ(‖y_i − y_k‖)) as a coefficient
/// on (y_i − y_k); eps floors the squared distance.
inline double repulsion_coefficient(double dist_sq, CurveParams c, double eps = 0.001) {
    return -2.0 * c.b / ((eps + dist_sq) * (1.0 + c.a * std::pow(dist_sq, c.b)));
}

inline constexpr double kGradientClip = 4.0;

/// Initial layout: spectral for connected graphs with n <= 4000, otherwise
/// seeded uniform in [-10, 10]^d.
RowMatrixf initial_layout(const FuzzyGraph& g, int d, std::uint64_t seed);

/// Stochastic layout optimization against the fuzzy graph.
EmbeddingMatrix optimize_embedding(const FuzzyGraph& g, const EmbeddingConfig& cfg,
                                   const RowMatrixf* init = nullptr);

/// Mean binary cross entropy over stored edges.
double embedding_loss(const FuzzyGraph& g, const EmbeddingMatrix& e, const EmbeddingConfig& cfg);

struct SweepPoint {
    int d;
    double mean_loss;
    std::vector<double> losses;
};

std::vector<SweepPoint> dimension_sweep(const ActivationMatrix& x, std::span<const int> dims,
                                        const EmbeddingConfig& cfg, int seeds_per_dim);

/// kNN graph + fuzzy graph + layout.
EmbeddingMatrix embed(const ActivationMatrix& x, const EmbeddingConfig& cfg);

/// Noisy samples of a Klein bottle immersed in 4-D.
ActivationMatrix klein_bottle(Eigen::Index n, double R, double r, double noise_sd,
                              std::uint64_t seed);

/// The immersion used by klein_bottle, for (u, v) in [0, 2π)².
Eigen::Vector4d klein_point(double u, double v, double R, double r);

/// Embedding as NPY plus `<path>.json` sidecar.
void write_embedding(const EmbeddingMatrix& e, const EmbeddingConfig& cfg,
                     const std::filesystem::path& npy_path);

}  // namespace umaptour
