#include "umaptour/grand_tour.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace umaptour {

TourState new_tour(int p, std::uint64_t seed) {
    if (p < 2) throw ConfigError("a tour needs at least 2 dimensions");
    TourState s;
    s.p = p;
    s.gt = MatrixXd::Identity(p, p);
    s.seed = seed;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> speed(kMinPlaneSpeed, kMaxPlaneSpeed);
    s.plane_speeds.resize(static_cast<std::size_t>(p * (p - 1) / 2));
    for (auto& w : s.plane_speeds) w = speed(rng);
    return s;
}

MatrixXd givens(int p, int i, int j, double theta) {
    MatrixXd g = MatrixXd::Identity(p, p);
    g(i, i) = std::cos(theta);
    g(j, j) = std::cos(theta);
    g(i, j) = std::sin(theta);
    g(j, i) = -std::sin(theta);
    return g;
}

double orthogonality_error(const MatrixXd& gt) {
    return (gt.transpose() * gt - MatrixXd::Identity(gt.cols(), gt.cols())).cwiseAbs().maxCoeff();
}

void gram_schmidt_columns(MatrixXd& m) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
        for (Eigen::Index k = 0; k < j; ++k) m.col(j) -= m.col(k).dot(m.col(j)) * m.col(k);
        m.col(j).normalize();
    }
}

TourState step(TourState state, double dt) {
    if (dt < 0.0) throw DomainError("tour time step must be non-negative");
    if (dt == 0.0) return state;
    // Right-multiplying by G(i, j, θ) only mixes columns i and j.
    std::size_t plane = 0;
    for (int i = 0; i < state.p; ++i) {
        for (int j = i + 1; j < state.p; ++j, ++plane) {
            const double theta = state.plane_speeds[plane] * dt;
            const double c = std::cos(theta), s = std::sin(theta);
            const VectorXd ci = state.gt.col(i);
            state.gt.col(i) = c * ci - s * state.gt.col(j);
            state.gt.col(j) = s * ci + c * state.gt.col(j);
        }
    }
    state.t += dt;
    if (++state.steps_since_reortho >= kReorthoInterval ||
        orthogonality_error(state.gt) > kReorthoDrift) {
        gram_schmidt_columns(state.gt);
        state.steps_since_reortho = 0;
    }
    return state;
}

TourState direct_manipulate(TourState state, const MatrixXd& x,
                            std::span<const Eigen::Index> selected, double dx, double dy) {
    if (selected.empty()) throw ManipulationError("no points selected");
    if (x.cols() != state.p) throw ShapeError("data dimension does not match the tour");
    VectorXd centroid = VectorXd::Zero(state.p);
    for (auto i : selected) {
        if (i < 0 || i >= x.rows()) throw ManipulationError("selected index out of range");
        centroid += x.row(i).transpose();
    }
    centroid /= static_cast<double>(selected.size());
    const double norm = centroid.norm();
    if (!(norm > 1e-6)) throw ManipulationError("selection centroid is at the origin");
    if (dx == 0.0 && dy == 0.0) return state;

    // Wanted projection of the unit centroid u, pulled back into the unit disk
    // when the drag asks for more than an orthogonal projection can give.
    const VectorXd u = centroid / norm;
    const auto frame = state.gt.leftCols(2);
    const Eigen::Vector2d pi = frame.transpose() * u;
    Eigen::Vector2d tau = pi + Eigen::Vector2d(dx, dy) / norm;
    if (state.p == 2 || tau.norm() > 1.0) tau.normalize();

    // v is the unit vector nearest u whose projection is tau.
    VectorXd residual = u - frame * pi;
    if (residual.norm() < 1e-12) residual = state.gt.col(2);
    VectorXd v = frame * tau;
    if (state.p > 2) v += std::sqrt(std::max(0.0, 1.0 - tau.squaredNorm())) * residual.normalized();

    // GT ← M·GT with M the plane rotation taking v to u, so GTᵀu = GTᵀ(Mᵀu) = GTᵀv.
    const double cos_t = std::clamp(v.dot(u), -1.0, 1.0);
    VectorXd w = u - cos_t * v;
    const double sin_t = w.norm();
    if (sin_t < 1e-15) return state;
    w /= sin_t;
    const Eigen::RowVectorXd vg = v.transpose() * state.gt;
    const Eigen::RowVectorXd wg = w.transpose() * state.gt;
    state.gt += sin_t * (w * vg - v * wg) + (cos_t - 1.0) * (v * vg + w * wg);
    gram_schmidt_columns(state.gt);
    return state;
}

nlohmann::json to_json(const TourState& state) {
    std::vector<double> gt;
    for (Eigen::Index r = 0; r < state.gt.rows(); ++r)
        for (Eigen::Index c = 0; c < state.gt.cols(); ++c) gt.push_back(state.gt(r, c));
    return {{"p", state.p},
            {"seed", state.seed},
            {"t", state.t},
            {"gt", gt},
            {"plane_speeds", state.plane_speeds},
            {"steps_since_reortho", state.steps_since_reortho}};
}

TourState tour_from_json(const nlohmann::json& doc) {
    TourState s;
    try {
        s.p = doc.at("p").get<int>();
        s.seed = doc.at("seed").get<std::uint64_t>();
        s.t = doc.at("t").get<double>();
        s.plane_speeds = doc.at("plane_speeds").get<std::vector<double>>();
        s.steps_since_reortho = doc.value("steps_since_reortho", 0);
        const auto gt = doc.at("gt").get<std::vector<double>>();
        if (s.p < 2 || gt.size() != static_cast<std::size_t>(s.p * s.p) ||
            s.plane_speeds.size() != static_cast<std::size_t>(s.p * (s.p - 1) / 2))
            throw ValidationError("tour state sizes are inconsistent");
        s.gt = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
            gt.data(), s.p, s.p);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("invalid tour state: ") + e.what());
    }
    return s;
}

nlohmann::json tour_test_vectors(const MatrixXd& x, std::uint64_t seed, int frames, double dt) {
    nlohmann::json cases = nlohmann::json::array();
    TourState state = new_tour(static_cast<int>(x.cols()), seed);
    for (int f = 0; f < frames; ++f) {
        const auto proj = project(state, x, 2);
        std::vector<double> coords;
        for (Eigen::Index r = 0; r < proj.coords.rows(); ++r)
            for (Eigen::Index c = 0; c < 2; ++c) coords.push_back(proj.coords(r, c));
        cases.push_back({{"state", to_json(state)}, {"projection", coords}});
        state = step(std::move(state), dt);
    }
    std::vector<double> points;
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        for (Eigen::Index c = 0; c < x.cols(); ++c) points.push_back(x(r, c));
    return {{"n", x.rows()}, {"p", x.cols()}, {"dt", dt}, {"points", points}, {"cases", cases}};
}

}  // namespace umaptour
