#include <numbers>
#include <random>

#include <doctest.h>

#include "helpers.hpp"
#include "umaptour/errors.hpp"
#include "umaptour/grand_tour.hpp"

using namespace umaptour;

TEST_CASE("new_tour") {
    const auto s = new_tour(15, 4);
    CHECK(s.gt == MatrixXd::Identity(15, 15));
    CHECK(s.plane_speeds.size() == 105);
    CHECK(s.plane_speeds == new_tour(15, 4).plane_speeds);
    CHECK(s.plane_speeds != new_tour(15, 5).plane_speeds);
    for (double w : s.plane_speeds) {
        CHECK(w >= kMinPlaneSpeed);
        CHECK(w <= kMaxPlaneSpeed);
    }
    CHECK_THROWS_AS(new_tour(1, 0), ConfigError);
}

TEST_CASE("step") {
    auto s = new_tour(5, 1);
    const auto same = step(s, 0.0);
    CHECK(same.gt == s.gt);
    CHECK(same.t == s.t);
    CHECK_THROWS_AS(step(s, -1.0), DomainError);

    auto two = new_tour(2, 3);
    const double w = two.plane_speeds[0];
    two = step(two, 0.5);
    CHECK((two.gt - givens(2, 0, 1, w * 0.5)).cwiseAbs().maxCoeff() < 1e-15);
    CHECK(two.t == 0.5);
}

TEST_CASE("stepping matches the product of per-plane Givens rotations") {
    auto s = new_tour(4, 9);
    const double dt = 0.1;
    MatrixXd expected = MatrixXd::Identity(4, 4);
    std::size_t plane = 0;
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) expected = expected * givens(4, i, j, s.plane_speeds[plane++] * dt);
    s = step(s, dt);
    CHECK((s.gt - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("long runs stay orthogonal") {
    auto s = new_tour(15, 2);
    for (int i = 0; i < 10000; ++i) s = step(std::move(s), 1.0 / 60.0);
    CHECK(orthogonality_error(s.gt) <= 1e-5);
}

TEST_CASE("project") {
    std::mt19937_64 rng(1);
    const MatrixXd x = testing::gaussian(10, 4, rng);
    const auto s = new_tour(4, 0);
    CHECK(project(s, x, 2).coords == x.leftCols(2));
    CHECK(project(s, x, 3).coords == x.leftCols(3));
    CHECK_THROWS_AS(project(s, x, 4), ShapeError);
    CHECK_THROWS_AS(project(new_tour(5, 0), x), ShapeError);

    auto rot = new_tour(2, 0);
    rot.gt = givens(2, 0, 1, std::numbers::pi / 2);
    const MatrixXd e1 = Eigen::RowVector2d(1, 0);
    const auto p = project(rot, e1).coords;
    CHECK(std::abs(p(0, 0)) < 1e-15);
    CHECK(p(0, 1) == doctest::Approx(1.0));

    auto moving = new_tour(4, 8);
    for (int i = 0; i < 30; ++i) moving = step(moving, 0.3);
    const MatrixXd full = x * moving.gt;
    for (Eigen::Index i = 1; i < x.rows(); ++i) {
        CHECK((full.row(i) - full.row(0)).norm() == doctest::Approx((x.row(i) - x.row(0)).norm()));
        const auto pr = project(moving, x.row(i)).coords;
        CHECK(pr.cwiseAbs().maxCoeff() <= x.row(i).norm() + 1e-12);
    }
}

TEST_CASE("smooth frames respect the rotation speed bound") {
    std::mt19937_64 rng(4);
    const MatrixXd x = testing::gaussian(50, 6, rng);
    auto s = new_tour(6, 4);
    double total_speed = 0;
    for (double w : s.plane_speeds) total_speed += w;
    const double max_row = x.rowwise().norm().maxCoeff();
    const double dt = 1.0 / 30.0;
    for (int f = 0; f < 100; ++f) {
        const auto before = project(s, x).coords;
        s = step(s, dt);
        const auto after = project(s, x).coords;
        CHECK((after - before).rowwise().norm().maxCoeff() <= max_row * total_speed * dt + 1e-12);
    }
}

TEST_CASE("direct manipulation") {
    SUBCASE("dragging a point at e1 along x moves it right") {
        const MatrixXd x = Eigen::RowVector3d(1, 0, 0);
        auto s = new_tour(3, 0);
        s.gt = givens(3, 0, 2, 0.7);  // e1 no longer projects to (1, 0)
        const std::vector<Eigen::Index> sel{0};
        const double before = project(s, x).coords(0, 0);
        const auto after = direct_manipulate(s, x, sel, 0.05, 0.0);
        CHECK(project(after, x).coords(0, 0) > before);
        CHECK(orthogonality_error(after.gt) <= 1e-12);
    }
    SUBCASE("zero drag leaves the state unchanged") {
        std::mt19937_64 rng(2);
        const MatrixXd x = testing::gaussian(10, 5, rng);
        auto s = new_tour(5, 1);
        s = step(s, 2.0);
        const std::vector<Eigen::Index> sel{1, 2};
        CHECK(direct_manipulate(s, x, sel, 0.0, 0.0).gt == s.gt);
    }
    SUBCASE("errors") {
        const MatrixXd x = MatrixXd::Zero(3, 3);
        const auto s = new_tour(3, 0);
        const std::vector<Eigen::Index> none, first{0}, bad{7};
        CHECK_THROWS_AS(direct_manipulate(s, x, none, 1, 0), ManipulationError);
        CHECK_THROWS_AS(direct_manipulate(s, x, first, 1, 0), ManipulationError);
        CHECK_THROWS_AS(direct_manipulate(s, MatrixXd::Ones(3, 3), bad, 1, 0), ManipulationError);
    }
    SUBCASE("random small drags keep the tour orthogonal and move toward the target") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-0.05, 0.05);
        const MatrixXd x = testing::gaussian(40, 6, rng);
        auto s = new_tour(6, 3);
        for (int i = 0; i < 200; ++i) {
            s = step(s, 0.1);
            const std::vector<Eigen::Index> sel{static_cast<Eigen::Index>(i % 40)};
            const Eigen::RowVector2d before = project(s, x.row(sel[0])).coords;
            const Eigen::RowVector2d target = before + Eigen::RowVector2d(u(rng), u(rng));
            s = direct_manipulate(s, x, sel, target(0) - before(0), target(1) - before(1));
            const Eigen::RowVector2d after = project(s, x.row(sel[0])).coords;
            CHECK(orthogonality_error(s.gt) <= 1e-5);
            CHECK((after - target).norm() < (before - target).norm());
        }
    }
}

TEST_CASE("tour state JSON round-trip and golden vectors") {
    auto s = new_tour(4, 6);
    s = step(s, 1.25);
    const auto back = tour_from_json(to_json(s));
    CHECK(back.gt == s.gt);
    CHECK(back.plane_speeds == s.plane_speeds);
    CHECK(back.t == s.t);
    CHECK(back.seed == 6);
    CHECK_THROWS_AS(tour_from_json(nlohmann::json{{"p", 3}}), ValidationError);

    std::mt19937_64 rng(5);
    const MatrixXd x = testing::gaussian(5, 4, rng);
    const auto vectors = tour_test_vectors(x, 6, 3, 0.5);
    REQUIRE(vectors["cases"].size() == 3);
    for (const auto& c : vectors["cases"]) {
        const auto state = tour_from_json(c["state"]);
        const auto expected = project(state, x).coords;
        const auto coords = c["projection"].get<std::vector<double>>();
        for (Eigen::Index i = 0; i < 5; ++i)
            for (int k = 0; k < 2; ++k) CHECK(coords[static_cast<std::size_t>(i * 2 + k)] == expected(i, k));
    }
}
