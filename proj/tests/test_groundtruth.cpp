#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "tgnn/error.hpp"
#include "tgnn/groundtruth.hpp"

using namespace tgnn;

namespace {

FlowProblem base_problem() {
    FlowProblem p;
    p.conductivity.assign(p.grid.cell_count(), 1.0);
    p.bc.left = BoundarySide::constant(1.0);
    p.bc.right = BoundarySide::constant(0.0);
    p.initial_heads = initial_heads_with_boundaries(p.grid, p.bc, 0.0);
    return p;
}

FlowProblem small_problem(int nx, int ny) {
    FlowProblem p;
    p.grid = {nx, ny, 10.0, 15.0};
    p.conductivity.resize(p.grid.cell_count());
    for (int j = 0; j < ny; ++j)
        for (int i = 0; i < nx; ++i) p.conductivity[p.grid.index(i, j)] = std::exp(std::sin(1.3 * i) * std::cos(0.7 * j));
    p.bc.left = BoundarySide::constant(3.0);
    p.bc.right = BoundarySide::constant(-1.0);
    p.initial_heads = initial_heads_with_boundaries(p.grid, p.bc, 0.5);
    return p;
}

// Dense steady solve of the 5-point system with left/right constant-head columns and no-flow top/bottom.
std::vector<double> steady_reference(const FlowProblem& p, double wellq = 0.0, int wi = -1, int wj = -1) {
    const auto& g = p.grid;
    const int n = g.cell_count();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(n);
    auto hm = [](double k1, double k2) { return 2.0 * k1 * k2 / (k1 + k2); };
    for (int j = 0; j < g.ny; ++j) {
        for (int i = 0; i < g.nx; ++i) {
            const int r = g.index(i, j);
            if (i == 0 || i == g.nx - 1) {
                a(r, r) = 1.0;
                b(r) = i == 0 ? p.bc.left.head : p.bc.right.head;
                continue;
            }
            const double k = p.conductivity[r];
            const int nb[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
            for (int f = 0; f < 4; ++f) {
                const int ii = nb[f][0], jj = nb[f][1];
                if (jj < 0 || jj >= g.ny) continue;
                const int c = g.index(ii, jj);
                const double w = hm(k, p.conductivity[c]) / (f < 2 ? g.dx * g.dx : g.dy * g.dy);
                a(r, r) -= w;
                a(r, c) += w;
            }
            if (i == wi && j == wj) b(r) += wellq / (g.dx * g.dy);
        }
    }
    Eigen::VectorXd h = a.partialPivLu().solve(b);
    return {h.data(), h.data() + n};
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace

TEST_SUITE("groundtruth") {

TEST_CASE("grid geometry") {
    Grid2D g;
    CHECK(g.x_center(0) == 10.0);
    CHECK(g.x_center(50) == 1010.0);
    CHECK(g.length_x() == 1020.0);
    CHECK(g.cell_of_x(0.0) == 0);
    CHECK(g.cell_of_x(19.999) == 0);
    CHECK(g.cell_of_x(20.0) == 1);
    CHECK(g.cell_of_x(1020.0) == 50);
    CHECK(g.index(3, 2) == 105);
    Grid2D bad{1, 5, 1.0, 1.0};
    CHECK_THROWS_AS(bad.validate(), SpecError);
}

TEST_CASE("boundary schedule") {
    BoundarySide s = BoundarySide::constant(0.0);
    s.change_step = 20;
    s.new_head = 2.0;
    CHECK(s.head_at_step(20) == 0.0);
    CHECK(s.head_at_step(21) == 2.0);
    auto p = base_problem();
    CHECK(p.initial_heads[p.grid.index(0, 7)] == 1.0);
    CHECK(p.initial_heads[p.grid.index(50, 7)] == 0.0);
    CHECK(p.initial_heads[p.grid.index(1, 7)] == 0.0);
}

TEST_CASE("constant state is preserved") {
    auto p = base_problem();
    p.bc.left = BoundarySide::constant(4.0);
    p.bc.right = BoundarySide::constant(4.0);
    p.initial_heads.assign(p.grid.cell_count(), 4.0);
    p.n_steps = 3;
    auto s = simulate(p);
    CHECK(max_abs_diff(s.slice(3), p.initial_heads) < 1e-12);
}

TEST_CASE("long run reaches the direct steady solution") {
    auto p = small_problem(13, 9);
    p.dt = 1e6;
    p.n_steps = 20;
    auto s = simulate(p);
    auto ref = steady_reference(p);
    CHECK(max_abs_diff(s.slice(p.n_steps), ref) < 1e-8);
}

TEST_CASE("mass balance holds every step") {
    auto p = small_problem(15, 11);
    p.wells.push_back({7, 5, 40.0, std::nullopt});
    p.n_steps = 10;
    auto s = simulate(p);
    REQUIRE(s.diagnostics.size() == 10);
    for (const auto& d : s.diagnostics) {
        CHECK(d.mass_balance_error() < 1e-8);
        CHECK(d.relative_residual < 1e-10);
        CHECK(d.well_extraction == doctest::Approx(40.0));
    }

    // independent bookkeeping on the base case
    auto b = base_problem();
    b.n_steps = 5;
    auto sb = simulate(b);
    const auto& g = b.grid;
    for (int n = 1; n <= 5; ++n) {
        double storage = 0.0, inflow = 0.0;
        for (int j = 0; j < g.ny; ++j) {
            for (int i = 1; i < g.nx - 1; ++i) storage += (sb.head(n, i, j) - sb.head(n - 1, i, j));
            inflow += (sb.head(n, 0, j) - sb.head(n, 1, j)) / (g.dx * g.dx) + (sb.head(n, 50, j) - sb.head(n, 49, j)) / (g.dx * g.dx);
        }
        storage *= b.specific_storage / b.dt;
        CHECK(std::abs(storage - inflow) < 1e-8 * std::abs(inflow));
    }
}

TEST_CASE("midline symmetry") {
    auto p = base_problem();
    p.n_steps = 10;
    auto s = simulate(p);
    for (int n = 0; n <= 10; ++n)
        for (int j = 0; j < 25; ++j)
            for (int i = 0; i < 51; ++i) CHECK(std::abs(s.head(n, i, j) - s.head(n, i, 50 - j)) < 1e-10);
}

TEST_CASE("base case obeys the maximum principle and is monotone") {
    auto p = base_problem();
    auto s = simulate(p);
    REQUIRE(s.times.size() == 51);
    CHECK(s.times[50] == doctest::Approx(10.0));
    CHECK(max_abs_diff(s.slice(0), p.initial_heads) == 0.0);
    for (double h : s.heads) {
        CHECK(h >= -1e-9);
        CHECK(h <= 1.0 + 1e-9);
    }
    // heads only rise and decrease away from the left boundary
    for (int n = 1; n <= 50; ++n)
        for (int i = 1; i < 50; ++i) {
            CHECK(s.head(n, i, 25) >= s.head(n - 1, i, 25) - 1e-12);
            CHECK(s.head(n, i + 1, 25) <= s.head(n, i, 25) + 1e-12);
        }
}

TEST_CASE("halving dt changes the final field by less than 1%") {
    auto p = base_problem();
    auto s1 = simulate(p);
    p.dt = 0.1;
    p.n_steps = 100;
    p.initial_heads = initial_heads_with_boundaries(p.grid, p.bc, 0.0);
    auto s2 = simulate(p);
    double num = 0.0, den = 0.0;
    auto a = s1.slice(50), b = s2.slice(100);
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += (a[i] - b[i]) * (a[i] - b[i]);
        den += b[i] * b[i];
    }
    CHECK(std::sqrt(num / den) < 0.01);
}

TEST_CASE("steady drawdown scales with the rate") {
    auto p = small_problem(11, 11);
    p.bc.left = BoundarySide::constant(5.0);
    p.bc.right = BoundarySide::constant(5.0);
    p.conductivity.assign(p.grid.cell_count(), 2.0);
    p.initial_heads.assign(p.grid.cell_count(), 5.0);
    p.dt = 1e7;
    p.n_steps = 10;
    auto drawdown = [&](double q) {
        auto w = p;
        w.wells.push_back({5, 5, q, std::nullopt});
        auto s = simulate(w);
        std::vector<double> d(s.slice(w.n_steps).begin(), s.slice(w.n_steps).end());
        for (double& v : d) v = 5.0 - v;
        return d;
    };
    auto d1 = drawdown(3.0), d2 = drawdown(6.0);
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(std::abs(d2[i] - 2.0 * d1[i]) < 1e-6);
    auto ref = steady_reference(p, 3.0, 5, 5);
    for (std::size_t i = 0; i < d1.size(); ++i) CHECK(std::abs(5.0 - d1[i] - ref[i]) < 1e-7);
}

TEST_CASE("boundary change applies after its step") {
    auto p = base_problem();
    p.bc.right.change_step = 20;
    p.bc.right.new_head = 2.0;
    auto s = simulate(p);
    CHECK(s.head(20, 50, 3) == 0.0);
    CHECK(s.head(21, 50, 3) == 2.0);
    auto q = base_problem();
    auto r = simulate(q);
    for (int n = 0; n <= 20; ++n) CHECK(max_abs_diff(s.slice(n), r.slice(n)) == 0.0);
    CHECK(s.head(30, 45, 25) > r.head(30, 45, 25));
}

TEST_CASE("well switches to head control once and stays there") {
    FlowProblem p;
    p.conductivity.assign(p.grid.cell_count(), 1.0);
    p.bc.left = BoundarySide::constant(202.0);
    p.bc.right = BoundarySide::constant(198.0);
    p.initial_heads = initial_heads_with_boundaries(p.grid, p.bc, 200.0);
    p.wells.push_back({26, 26, 200.0, 81.0});
    auto s = simulate(p);
    int switched = -1;
    for (const auto& e : s.well_log) {
        if (e.mode == WellMode::HeadControlled && switched < 0) switched = e.step;
        if (switched >= 0) {
            CHECK(e.mode == WellMode::HeadControlled);
            CHECK(e.head == doctest::Approx(81.0).epsilon(1e-12));
        }
        CHECK(e.head >= 81.0 - 1e-9);
    }
    CHECK(switched > 0);
    CHECK(s.head(switched, 26, 26) == 81.0);

    // without a floor the same well overshoots
    p.wells[0].head_floor.reset();
    auto free = simulate(p);
    CHECK(free.head(50, 26, 26) < 81.0);
}

TEST_CASE("tentative head above the floor keeps rate control") {
    FlowProblem p;
    p.conductivity.assign(p.grid.cell_count(), 1.0);
    p.bc.left = BoundarySide::constant(1.0);
    p.bc.right = BoundarySide::constant(1.0);
    p.initial_heads.assign(p.grid.cell_count(), 1.0);
    p.wells.push_back({10, 10, 0.01, -100.0});
    std::vector<WellMode> modes{WellMode::RateControlled};
    std::vector<double> empty;
    CHECK_THROWS_AS(apply_well_control(p, p.initial_heads, 1, modes, empty), SpecError);
    auto tentative = assemble_and_step(p, p.initial_heads, 1, modes);
    auto out = tentative;
    CHECK_FALSE(apply_well_control(p, p.initial_heads, 1, modes, out));
    CHECK(modes[0] == WellMode::RateControlled);
    CHECK(out == tentative);

    // a floor above the tentative head forces head control at exactly the floor
    p.wells[0].head_floor = 1.0;
    CHECK(apply_well_control(p, p.initial_heads, 1, modes, out));
    CHECK(modes[0] == WellMode::HeadControlled);
    CHECK(out[p.grid.index(10, 10)] == 1.0);
}

TEST_CASE("invalid problems are rejected") {
    auto p = base_problem();
    p.conductivity[5] = 0.0;
    CHECK_THROWS_AS(simulate(p), SpecError);
    p = base_problem();
    p.dt = 0.0;
    CHECK_THROWS_AS(simulate(p), SpecError);
    p = base_problem();
    p.wells.push_back({0, 5, 1.0, std::nullopt});
    CHECK_THROWS_AS(simulate(p), SpecError);
    p = base_problem();
    p.wells.push_back({5, 5, -1.0, std::nullopt});
    CHECK_THROWS_AS(simulate(p), SpecError);
}

TEST_CASE("simulation is bitwise deterministic") {
    auto p = small_problem(20, 20);
    p.wells.push_back({10, 10, 5.0, std::nullopt});
    CHECK(simulate(p) == simulate(p));
}

TEST_CASE("observation extraction") {
    auto p = small_problem(6, 5);
    p.n_steps = 4;
    auto s = simulate(p);
    std::vector<int> steps{1, 3};
    auto all = extract_observations(s, steps, 30, 1);
    CHECK(all.size() == 60);
    std::set<std::pair<double, double>> cells;
    for (std::size_t k = 0; k < 30; ++k) cells.insert({all[k].x, all[k].y});
    CHECK(cells.size() == 30);
    for (const auto& o : all) {
        const int i = p.grid.cell_of_x(o.x), j = p.grid.cell_of_y(o.y);
        CHECK(o.x == p.grid.x_center(i));
        CHECK(o.h == s.head(o.step, i, j));
        CHECK(o.t == s.times[o.step]);
    }
    auto a = extract_observations(s, steps, 7, 42), b = extract_observations(s, steps, 7, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) CHECK((a[k].x == b[k].x && a[k].h == b[k].h));
    CHECK_THROWS_AS(extract_observations(s, steps, 31, 1), SpecError);
}

TEST_CASE("observation CSV round trip keeps full precision") {
    auto p = small_problem(6, 5);
    p.n_steps = 2;
    auto s = simulate(p);
    std::vector<int> steps{1, 2};
    auto obs = extract_observations(s, steps, 10, 3);
    auto path = std::filesystem::temp_directory_path() / "tgnn_test_obs.csv";
    write_observations_csv(path, obs);
    auto back = read_observations_csv(path);
    std::filesystem::remove(path);
    REQUIRE(back.size() == obs.size());
    for (std::size_t k = 0; k < obs.size(); ++k) {
        CHECK(back[k].step == obs[k].step);
        CHECK(back[k].h == obs[k].h);
        CHECK(back[k].x == obs[k].x);
    }
    CHECK(solution_csv(s).rfind("step,t,x,y,h", 0) == 0);
}

}
