#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include <doctest.h>

#include "helpers.hpp"
#include "umaptour/errors.hpp"
#include "umaptour/umap.hpp"

using namespace umaptour;

namespace {

ActivationMatrix rows(std::initializer_list<std::initializer_list<float>> values) {
    ActivationMatrix m;
    m.values.resize(static_cast<Eigen::Index>(values.size()),
                    static_cast<Eigen::Index>(values.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : values) {
        Eigen::Index j = 0;
        for (float v : r) m.values(i, j++) = v;
        ++i;
    }
    return m;
}

ActivationMatrix clustered(Eigen::Index n, Eigen::Index p, int clusters, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    const MatrixXd centers = 4.0 * testing::gaussian(clusters, p, rng);
    MatrixXd x = testing::gaussian(n, p, rng);
    for (Eigen::Index i = 0; i < n; ++i) x.row(i) += centers.row(i % clusters);
    ActivationMatrix m;
    m.values = x.cast<float>();
    return m;
}

// Sum of squared residuals of the reference curve fit on the same 300-point
// grid, for an independent brute-force search.
double curve_sse(double a, double b, double min_dist, double spread) {
    double sse = 0.0;
    for (int i = 0; i < 300; ++i) {
        const double x = 3.0 * spread * i / 299.0;
        const double target = x <= min_dist ? 1.0 : std::exp(-(x - min_dist) / spread);
        const double f = 1.0 / (1.0 + a * (x > 0 ? std::pow(x, 2 * b) : 0.0));
        sse += (f - target) * (f - target);
    }
    return sse;
}

CurveParams grid_fit(double min_dist, double spread) {
    CurveParams best{1, 1};
    double best_sse = INFINITY;
    auto search = [&](double a0, double a1, double b0, double b1, int steps) {
        for (int i = 0; i <= steps; ++i)
            for (int j = 0; j <= steps; ++j) {
                const double a = a0 + (a1 - a0) * i / steps, b = b0 + (b1 - b0) * j / steps;
                const double s = curve_sse(a, b, min_dist, spread);
                if (s < best_sse) {
                    best_sse = s;
                    best = {a, b};
                }
            }
    };
    search(0.05, 10.0, 0.3, 2.0, 200);
    const double da = 10.0 / 200, db = 1.7 / 200;
    search(best.a - da, best.a + da, best.b - db, best.b + db, 100);
    return best;
}

FuzzyGraph pair_graph(float w) {
    FuzzyGraph g;
    g.n = 2;
    g.edges = {{0, 1, w}, {1, 0, w}};
    return g;
}

EmbeddingMatrix two_points(double dist) {
    EmbeddingMatrix e;
    e.coords = RowMatrixf::Zero(2, 2);
    e.coords(1, 0) = static_cast<float>(dist);
    return e;
}

}  // namespace

TEST_CASE("exact kNN on a line") {
    const auto g = knn_graph(rows({{0}, {1}, {10}}), 1, true, 0);
    CHECK(g.indices(0, 0) == 1);
    CHECK(g.indices(1, 0) == 0);
    CHECK(g.indices(2, 0) == 1);
    CHECK(g.distances(2, 0) == doctest::Approx(9));
}

TEST_CASE("exact kNN with k = n - 1 lists every other point in ascending order") {
    const auto x = clustered(12, 3, 2, 4);
    const auto g = knn_graph(x, 11, true, 0);
    for (Eigen::Index i = 0; i < 12; ++i) {
        std::set<int> seen;
        for (Eigen::Index c = 0; c < 11; ++c) {
            CHECK(g.indices(i, c) != i);
            seen.insert(g.indices(i, c));
            if (c > 0) CHECK(g.distances(i, c - 1) <= g.distances(i, c));
        }
        CHECK(seen.size() == 11);
    }
}

TEST_CASE("duplicate points give zero-distance edges and no self-loops") {
    const auto g = knn_graph(rows({{1, 1}, {1, 1}, {1, 1}, {5, 5}}), 2, true, 0);
    CHECK(g.indices(0, 0) == 1);
    CHECK(g.indices(0, 1) == 2);
    CHECK(g.indices(1, 0) == 0);
    CHECK(g.indices(1, 1) == 2);
    CHECK(g.distances(0, 0) == 0.0f);
    for (Eigen::Index i = 0; i < 4; ++i)
        for (Eigen::Index c = 0; c < 2; ++c) CHECK(g.indices(i, c) != i);
}

TEST_CASE("kNN rejects k >= n") {
    CHECK_THROWS_AS(knn_graph(rows({{0}, {1}, {2}}), 3, true, 0), ConfigError);
    CHECK_THROWS_AS(knn_graph(rows({{0}, {1}, {2}}), 0, true, 0), ConfigError);
}

TEST_CASE("exact kNN agrees with a brute-force oracle") {
    const auto x = clustered(200, 6, 4, 8);
    const auto g = knn_graph(x, 7, true, 0);
    const MatrixXd xd = x.values.cast<double>();
    for (Eigen::Index i = 0; i < 200; i += 13) {
        std::vector<std::pair<double, int>> all;
        for (Eigen::Index j = 0; j < 200; ++j)
            if (j != i) all.push_back({(xd.row(i) - xd.row(j)).norm(), static_cast<int>(j)});
        std::sort(all.begin(), all.end());
        for (int c = 0; c < 7; ++c) {
            CHECK(g.indices(i, c) == all[c].second);
            CHECK(g.distances(i, c) == doctest::Approx(all[c].first).epsilon(1e-5));
        }
    }
}

TEST_CASE("NN-Descent recovers at least 95% of exact neighbors") {
    const auto x = clustered(1500, 12, 10, 21);
    const auto exact = knn_graph(x, 15, true, 0);
    const auto approx = knn_graph(x, 15, false, 7);
    CHECK_FALSE(approx.exact);
    CHECK(knn_recall(approx, exact) >= 0.95);
    for (Eigen::Index i = 0; i < approx.n; ++i)
        for (Eigen::Index c = 0; c < approx.k; ++c) CHECK(approx.indices(i, c) != i);
}

TEST_CASE("fuzzy graph structure") {
    const auto nn = knn_graph(clustered(300, 5, 3, 2), 10, true, 0);
    const auto g = fuzzy_graph(nn);
    const double target = std::log2(10.0);

    for (Eigen::Index i = 0; i < g.n; ++i) {
        CHECK(g.directed(i, 0) == 1.0f);
        if (g.degenerate[static_cast<std::size_t>(i)]) continue;
        double sum = 0.0;
        for (Eigen::Index c = 0; c < nn.k; ++c)
            sum += std::exp(-std::max(0.0, double(nn.distances(i, c)) - g.rho(i)) / g.sigma(i));
        CHECK(std::abs(sum - target) <= 1e-4);
    }
    for (const auto& e : g.edges) {
        CHECK(e.i != e.j);
        CHECK(e.weight > 0.0f);
        CHECK(e.weight <= 1.0f);
        CHECK(g.weight(e.j, e.i) == e.weight);
    }
    // Probabilistic union, recomputed from the directed strengths.
    auto directed = [&](int i, int j) {
        for (Eigen::Index c = 0; c < nn.k; ++c)
            if (nn.indices(i, c) == j) return double(g.directed(i, c));
        return 0.0;
    };
    for (const auto& e : g.edges) {
        const double a = directed(e.i, e.j), b = directed(e.j, e.i);
        CHECK(e.weight == doctest::Approx(a + b - a * b).epsilon(1e-6));
    }
}

TEST_CASE("fuzzy union examples") {
    // Points 0 and 1 are mutual nearest neighbors; 2 points at 1 but 1 does not
    // point back.
    const auto nn = knn_graph(rows({{0}, {1}, {3}}), 1, true, 0);
    const auto g = fuzzy_graph(nn);
    CHECK(g.weight(0, 1) == 1.0);  // (1, 1) -> 1
    CHECK(g.weight(1, 2) == 1.0);  // (0, 1) -> 1
    CHECK(g.weight(0, 2) == 0.0);
}

TEST_CASE("fuzzy graph flags rows with identical distances") {
    const auto nn = knn_graph(rows({{0, 0}, {1, 0}, {-1, 0}, {0, 1}, {0, -1}}), 4, true, 0);
    const auto g = fuzzy_graph(nn);
    CHECK(g.degenerate[0]);
    CHECK(g.sigma(0) == 1.0);
}

TEST_CASE("fit_curve matches a brute-force least-squares grid") {
    const auto c = fit_curve(0.1, 1.0);
    CHECK(c.a == doctest::Approx(1.58).epsilon(0.05 / 1.58));
    CHECK(c.b == doctest::Approx(0.90).epsilon(0.05 / 0.90));
    const auto oracle = grid_fit(0.1, 1.0);
    CHECK(std::abs(c.a - oracle.a) < 0.02);
    CHECK(std::abs(c.b - oracle.b) < 0.01);
    CHECK(curve_sse(c.a, c.b, 0.1, 1.0) <= curve_sse(oracle.a, oracle.b, 0.1, 1.0) + 1e-9);
    CHECK(membership(0.0, c) == 1.0);
}

TEST_CASE("fitted a decreases with min_dist, as the grid oracle does") {
    double prev_a = INFINITY, prev_oracle = INFINITY;
    for (double md : {0.01, 0.1, 0.5}) {
        const auto c = fit_curve(md, 1.0);
        const auto o = grid_fit(md, 1.0);
        CHECK(c.a < prev_a);
        CHECK(o.a < prev_oracle);
        prev_a = c.a;
        prev_oracle = o.a;
    }
    CHECK_THROWS_AS(fit_curve(1.5, 1.0), ConfigError);
}

TEST_CASE("embedding loss values") {
    EmbeddingConfig cfg;
    const auto c = cfg.curve();
    const double half = std::pow(1.0 / c.a, 1.0 / (2.0 * c.b));  // membership = 0.5

    CHECK(embedding_loss(pair_graph(1.0f), two_points(0.0), cfg) < 1e-6);
    CHECK(embedding_loss(pair_graph(1.0f), two_points(half), cfg) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(embedding_loss(pair_graph(0.5f), two_points(half), cfg) ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("embedding loss is invariant under rotation of the layout") {
    const auto x = clustered(150, 4, 3, 1);
    EmbeddingConfig cfg;
    cfg.d = 3;
    cfg.n_epochs = 50;
    const auto g = fuzzy_graph(knn_graph(x, 10, true, 0));
    auto e = optimize_embedding(g, cfg);
    std::mt19937_64 rng(2);
    EmbeddingMatrix rotated = e;
    rotated.coords = (e.coords.cast<double>() * testing::random_orthogonal(3, rng)).cast<float>();
    CHECK(embedding_loss(g, rotated, cfg) == doctest::Approx(embedding_loss(g, e, cfg)).epsilon(1e-4));
}

TEST_CASE("gradient coefficients match central differences") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    const CurveParams c = fit_curve(0.1, 1.0);
    auto psi = [&](const VectorXd& a, const VectorXd& b) {
        return 1.0 / (1.0 + c.a * std::pow((a - b).squaredNorm(), c.b));
    };
    for (int trial = 0; trial < 50; ++trial) {
        VectorXd yi(3), yj(3);
        for (int k = 0; k < 3; ++k) yi(k) = u(rng), yj(k) = u(rng);
        const double dsq = (yi - yj).squaredNorm();
        if (dsq < 0.05) continue;
        for (int k = 0; k < 3; ++k) {
            const double h = 1e-6;
            VectorXd p = yi, m = yi;
            p(k) += h;
            m(k) -= h;
            const double fd_attr = (-std::log(psi(p, yj)) + std::log(psi(m, yj))) / (2 * h);
            const double fd_rep = (-std::log(1 - psi(p, yj)) + std::log(1 - psi(m, yj))) / (2 * h);
            const double an_attr = attraction_coefficient(dsq, c) * (yi(k) - yj(k));
            const double an_rep = repulsion_coefficient(dsq, c, 0.0) * (yi(k) - yj(k));
            CHECK(an_attr == doctest::Approx(fd_attr).epsilon(1e-3).scale(1e-6));
            CHECK(an_rep == doctest::Approx(fd_rep).epsilon(1e-3).scale(1e-6));
        }
    }
    CHECK(attraction_coefficient(0.0, c) == 0.0);
}

TEST_CASE("isolated attracting pair ends within min_dist + 0.5") {
    for (std::uint64_t seed : {1, 2, 3}) {
        EmbeddingConfig cfg;
        cfg.d = 2;
        cfg.seed = seed;
        const auto e = optimize_embedding(pair_graph(1.0f), cfg);
        CHECK((e.coords.row(0) - e.coords.row(1)).norm() <= cfg.min_dist + 0.5);
    }
}

TEST_CASE("graph without edges leaves the initial layout untouched") {
    FuzzyGraph g;
    g.n = 20;
    EmbeddingConfig cfg;
    cfg.d = 2;
    const RowMatrixf init = initial_layout(g, 2, 5);
    const auto e = optimize_embedding(g, cfg, &init);
    CHECK(e.coords.allFinite());
    CHECK(e.coords == init);
    CHECK(init.cwiseAbs().maxCoeff() <= 10.0f);
}

TEST_CASE("layout optimization is deterministic per seed") {
    const auto x = clustered(200, 5, 4, 3);
    EmbeddingConfig cfg;
    cfg.d = 4;
    cfg.n_epochs = 60;
    cfg.seed = 11;
    const auto a = embed(x, cfg);
    const auto b = embed(x, cfg);
    CHECK(a.coords == b.coords);
    CHECK(a.final_loss == b.final_loss);
    cfg.seed = 12;
    CHECK(embed(x, cfg).coords != a.coords);
}

TEST_CASE("parallel layout mode stays finite and close in loss") {
    const auto x = clustered(400, 5, 4, 3);
    EmbeddingConfig cfg;
    cfg.d = 3;
    cfg.n_epochs = 100;
    const auto seq = embed(x, cfg);
    cfg.deterministic = false;
    cfg.threads = 4;
    const auto par = embed(x, cfg);
    CHECK(par.coords.allFinite());
    CHECK(par.final_loss == doctest::Approx(seq.final_loss).epsilon(0.25));
}

TEST_CASE("embedding config validation and JSON") {
    EmbeddingConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.d = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = {};
    cfg.n_epochs = 42;
    cfg.a = 1.2;
    cfg.b = 0.8;
    const auto back = embedding_config_from_json(to_json(cfg));
    CHECK(*back.n_epochs == 42);
    CHECK(back.curve().a == 1.2);
    CHECK(EmbeddingConfig{}.epochs_for(100) == 500);
    CHECK(EmbeddingConfig{}.epochs_for(20000) == 200);
}

TEST_CASE("dimension sweep") {
    EmbeddingConfig cfg;
    cfg.n_epochs = 80;
    const auto x = klein_bottle(300, 2, 1, 0, 1);
    CHECK_THROWS_AS(dimension_sweep(x, std::vector<int>{}, cfg, 1), ConfigError);

    const std::vector<int> same{3, 3};
    const auto pts = dimension_sweep(x, same, cfg, 2);
    REQUIRE(pts.size() == 2);
    CHECK(pts[0].mean_loss == doctest::Approx(pts[1].mean_loss).epsilon(0.15));
}

TEST_CASE("klein bottle immersion") {
    const auto p0 = klein_point(0, 0, 2, 1);
    CHECK(p0.isApprox(Eigen::Vector4d(3, 0, 0, 0)));
    const auto pi = klein_point(0, std::numbers::pi, 2, 1);
    CHECK((pi - Eigen::Vector4d(1, 0, 0, 0)).norm() < 1e-12);

    const auto k = klein_bottle(500, 2, 1, 0, 3);
    for (Eigen::Index i = 0; i < k.n(); ++i) {
        const Eigen::Vector4d q = k.values.row(i).cast<double>().transpose();
        const double ring = std::hypot(q(0), q(1));
        CHECK((ring - 2) * (ring - 2) + q(2) * q(2) + q(3) * q(3) == doctest::Approx(1).epsilon(1e-5));
    }
    CHECK(klein_bottle(50, 2, 1, 0.1, 9).values == klein_bottle(50, 2, 1, 0.1, 9).values);
    CHECK_THROWS_AS(klein_bottle(10, 1, 2, 0, 0), ConfigError);
}
