#include <doctest.h>

#include <cmath>
#include <random>

#include "tgnn/error.hpp"
#include "tgnn/physics_loss.hpp"

using namespace tgnn;

namespace {

MlpParams constant_net(double c) {
    MlpParams p({3, 4, 1}, Activation::Tanh);
    p.bias(1)[0] = c;
    return p;
}

struct Fixture {
    MlpParams params;
    PointSets points;
    PhysicsSetup setup;
};

// Small random problem where every term, including both penalty sides, is active.
Fixture fixture(std::uint64_t seed) {
    Fixture f;
    f.params = init(seed, {3, 5, 5, 1}, Activation::Tanh, {10.0, 1020.0, 1020.0, 0.5, 0.8});
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01;
    for (int l = 0; l < f.params.n_layers(); ++l)
        for (Eigen::Index i = 0; i < f.params.bias(l).size(); ++i) f.params.bias(l)[i] = 0.3 * n01(rng);
    std::uniform_real_distribution<double> ut(0.0, 10.0), ux(10.0, 1010.0), uh(0.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        f.points.data.push_back({ut(rng), ux(rng), ux(rng), uh(rng)});
        f.points.colloc.push_back({ut(rng), ux(rng), ux(rng)});
        f.points.bc.push_back({ut(rng), 10.0, ux(rng), 1.0});
        f.points.ic.push_back({0.0, ux(rng), ux(rng), 0.0});
        f.points.new_bc.push_back({ut(rng), 1010.0, ux(rng), 2.0});
        f.points.well.push_back({ut(rng), 530.0, 530.0});
    }
    f.setup.field = std::make_shared<ConductivityField>(ConductivityField::from_seed({}, 6, seed + 1));
    f.setup.well_rate = 50.0;
    f.setup.specific_storage = 0.3;  // keeps the storage term comparable to the flux terms on this toy net
    // bounds and floor placed inside the output range so each penalty has active points
    double lo = 1e300, hi = -1e300;
    for (const auto& p : f.points.colloc) {
        const double h = predict(f.params, p.t, p.x, p.y);
        lo = std::min(lo, h);
        hi = std::max(hi, h);
    }
    f.setup.ek_lower = lo + 0.3 * (hi - lo);
    f.setup.ek_upper = lo + 0.7 * (hi - lo);
    f.setup.ec_floor = lo + 0.5 * (hi - lo);
    return f;
}

double rel_err(double a, double b, double floor) { return std::abs(a - b) / std::max(std::abs(b), floor); }

}  // namespace

TEST_SUITE("physics_loss") {

TEST_CASE("data term arithmetic") {
    auto p = constant_net(0.4);
    std::vector<LabeledPoint> one{{1.0, 100.0, 100.0, 0.9}};
    CHECK(mse_data(p, one) == doctest::Approx(0.25).epsilon(1e-14));
    std::vector<LabeledPoint> exact{{1.0, 100.0, 100.0, 0.4}, {3.0, 700.0, 50.0, 0.4}};
    CHECK(mse_data(p, exact) == 0.0);
    CHECK_THROWS_AS(mse_data(p, {}), SpecError);
}

TEST_CASE("data term equals a brute-force sum") {
    auto f = fixture(1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<LabeledPoint> pts;
    for (int k = 0; k < 100; ++k) pts.push_back({10 * u(rng), 1020 * u(rng), 1020 * u(rng), u(rng)});
    double sum = 0.0;
    for (const auto& q : pts) {
        const double r = predict(f.params, q.t, q.x, q.y) - q.h;
        sum += r * r;
    }
    CHECK(mse_data(f.params, pts) == doctest::Approx(sum / 100.0).epsilon(1e-14));
}

TEST_CASE("boundary and initial terms") {
    auto p = constant_net(0.2);
    std::vector<LabeledPoint> ic{{0.0, 300.0, 300.0, 0.0}};
    CHECK(mse_ic(p, ic) == doctest::Approx(0.04).epsilon(1e-14));
    std::vector<LabeledPoint> bc{{2.0, 10.0, 300.0, 0.2}};
    CHECK(mse_bc(p, bc) == 0.0);
    std::vector<LabeledPoint> nbc{{5.0, 1010.0, 400.0, 2.0}};
    CHECK(mse_new_bc(p, nbc) == doctest::Approx(1.8 * 1.8).epsilon(1e-14));
}

TEST_CASE("penalty arithmetic") {
    std::vector<SpaceTimePoint> one{{1.0, 100.0, 100.0}};
    CHECK(mse_ek_bounds(constant_net(1.5), one, 0.0, 1.0) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(mse_ek_bounds(constant_net(-0.3), one, 0.0, 1.0) == doctest::Approx(0.09).epsilon(1e-14));
    CHECK(mse_ek_bounds(constant_net(0.7), one, 0.0, 1.0) == 0.0);
    CHECK(mse_ec_floor(constant_net(80.0), one, 81.0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(mse_ec_floor(constant_net(81.5), one, 81.0) == 0.0);
}

TEST_CASE("penalties never grow when outputs move inside the feasible band") {
    auto f = fixture(2);
    const double mid = 0.5 * (f.setup.ek_lower + f.setup.ek_upper);
    auto shrink = f.params;
    double prev = mse_ek_bounds(f.params, f.points.colloc, f.setup.ek_lower, f.setup.ek_upper);
    for (double a : {0.9, 0.7, 0.4, 0.1}) {
        // pull every output toward the band center: h' = mid + a (h - mid)
        auto s = f.params.scaling();
        s.output_shift = mid + a * (s.output_shift - mid);
        s.output_scale *= a;
        shrink.set_scaling(s);
        const double cur = mse_ek_bounds(shrink, f.points.colloc, f.setup.ek_lower, f.setup.ek_upper);
        CHECK(cur <= prev);
        prev = cur;
    }
    double prev_ec = mse_ec_floor(f.params, f.points.colloc, f.setup.ec_floor);
    auto up = f.params;
    for (double d : {0.01, 0.1, 1.0}) {
        auto s = f.params.scaling();
        s.output_shift += d;
        up.set_scaling(s);
        const double cur = mse_ec_floor(up, f.points.colloc, f.setup.ec_floor);
        CHECK(cur <= prev_ec);
        prev_ec = cur;
    }
}

TEST_CASE("constant and affine heads have zero residual") {
    auto f = fixture(3);
    auto c = constant_net(0.6);
    for (const auto& p : f.points.colloc) CHECK(pde_residual(c, f.setup, p) == 0.0);

    // h = x / L through a single linear layer, uniform K
    MlpParams lin({3, 1}, Activation::Identity);
    lin.weight(0) << 0.0, 1.0, 0.0;
    PhysicsSetup homo;
    for (const auto& p : f.points.colloc) CHECK(pde_residual(lin, homo, p) == 0.0);
}

TEST_CASE("manufactured solution against finite differences of the flux form") {
    auto field = ConductivityField::from_seed({}, 10, 4);
    const double ss = 1e-4, L = 1020.0;
    auto h = [&](double t, double x, double y) { return std::sin(M_PI * x / L) * std::cos(0.5 * M_PI * y / L) * std::exp(-t); };
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(50.0, 970.0), ut(0.0, 10.0);
    for (int k = 0; k < 20; ++k) {
        const double t = ut(rng), x = u(rng), y = u(rng);
        const double a = M_PI / L, b = 0.5 * M_PI / L;
        const double sx = std::sin(a * x), cx = std::cos(a * x), sy = std::sin(b * y), cy = std::cos(b * y), e = std::exp(-t);
        NetJet j{sx * cy * e, -sx * cy * e, a * cx * cy * e, -b * sx * sy * e, -a * a * sx * cy * e, -b * b * sx * cy * e};
        const double f = pde_residual(j, field.synthesize_logk(x, y), ss);

        const double d = 0.05, dt = 1e-5;
        auto K = [&](double xx, double yy) { return field.conductivity(xx, yy); };
        const double flux_x = (K(x + d / 2, y) * (h(t, x + d, y) - h(t, x, y)) - K(x - d / 2, y) * (h(t, x, y) - h(t, x - d, y))) / (d * d);
        const double flux_y = (K(x, y + d / 2) * (h(t, x, y + d) - h(t, x, y)) - K(x, y - d / 2) * (h(t, x, y) - h(t, x, y - d))) / (d * d);
        const double ref = ss * (h(t + dt, x, y) - h(t - dt, x, y)) / (2 * dt) - flux_x - flux_y;
        CHECK(rel_err(f, ref, 1e-12) < 1e-5);
    }
}

TEST_CASE("homogeneous field reduces to the constant-K residual exactly") {
    auto f = fixture(5);
    PhysicsSetup s;
    s.field = std::make_shared<ConductivityField>(build_basis_2d({}, 6), std::vector<double>(6, 0.0));
    for (const auto& p : f.points.colloc) {
        const NetJet j = physical_jet(f.params, p.t, p.x, p.y);
        CHECK(pde_residual(f.params, s, p) == s.specific_storage * j.d_t - (j.d_xx + j.d_yy));
    }
}

TEST_CASE("well residual") {
    PhysicsSetup s;
    s.well_rate = 50.0;
    s.cell_area = 400.0;
    SpaceTimePoint w{3.0, 530.0, 530.0};
    CHECK(well_residual(constant_net(200.0), s, w) == doctest::Approx(0.125).epsilon(1e-14));
    auto f = fixture(6);
    f.setup.well_rate = 0.0;
    for (const auto& p : f.points.well) CHECK(well_residual(f.params, f.setup, p) == pde_residual(f.params, f.setup, p));
    f.setup.well_rate = 50.0;
    double sum = 0.0;
    for (const auto& p : f.points.well) {
        const double r = pde_residual(f.params, f.setup, p) + 50.0 / 400.0;
        sum += r * r;
    }
    CHECK(mse_pde_well(f.params, f.setup, f.points.well) == doctest::Approx(sum / 10.0).epsilon(1e-13));
}

TEST_CASE("pde term arithmetic") {
    // h = c x^2 / 2 on uniform K gives residual -c everywhere
    MlpParams quad({3, 1, 1}, Activation::Identity);
    PhysicsSetup s;
    std::vector<SpaceTimePoint> pts{{1.0, 100.0, 100.0}, {2.0, 300.0, 400.0}};
    CHECK(mse_pde(constant_net(0.3), s, pts) == 0.0);
    auto f = fixture(7);
    double sum = 0.0;
    for (const auto& p : f.points.colloc) sum += std::pow(pde_residual(f.params, f.setup, p), 2);
    CHECK(mse_pde(f.params, f.setup, f.points.colloc) == doctest::Approx(sum / 10.0).epsilon(1e-13));
}

TEST_CASE("total is the weighted sum of the terms") {
    auto f = fixture(8);
    LossWeights w{1, 2, 3, 4, 5, 6, 7, 8};
    auto b = total_loss(f.params, f.points, f.setup, w);
    std::vector<SpaceTimePoint> ec = f.points.colloc;
    ec.insert(ec.end(), f.points.well.begin(), f.points.well.end());
    const double expect[] = {mse_data(f.params, f.points.data),
                             mse_pde(f.params, f.setup, f.points.colloc),
                             mse_bc(f.params, f.points.bc),
                             mse_ic(f.params, f.points.ic),
                             mse_ec_floor(f.params, ec, f.setup.ec_floor),
                             mse_ek_bounds(f.params, f.points.colloc, f.setup.ek_lower, f.setup.ek_upper),
                             mse_pde_well(f.params, f.setup, f.points.well),
                             mse_new_bc(f.params, f.points.new_bc)};
    double total = 0.0;
    for (std::size_t i = 0; i < kLossTermCount; ++i) {
        const auto t = kAllLossTerms[i];
        REQUIRE(b.term(t).has_value());
        CHECK(*b.term(t) >= 0.0);
        CHECK(*b.term(t) == doctest::Approx(expect[i]).epsilon(1e-12));
        CHECK(b.weights[i] == w.get(t));
        total += w.get(t) * *b.term(t);
    }
    CHECK(b.total == doctest::Approx(total).epsilon(1e-15));
    CHECK(*b.term(LossTerm::Ec) > 0.0);
    CHECK(*b.term(LossTerm::Ek) > 0.0);

    auto z = total_loss(f.params, f.points, f.setup, LossWeights::zero());
    CHECK(z.total == 0.0);
    for (auto t : kAllLossTerms) CHECK_FALSE(z.term(t).has_value());

    // no observation data: the data term is absent even with no data points
    auto nodata = f.points;
    nodata.data.clear();
    LossWeights wd{0, 1, 1, 1, 0, 1, 0, 0};
    auto nd = total_loss(f.params, nodata, f.setup, wd);
    CHECK_FALSE(nd.term(LossTerm::Data).has_value());
    CHECK(nd.term(LossTerm::Pde).has_value());
}

TEST_CASE("empty point set with a nonzero weight is rejected") {
    auto f = fixture(9);
    f.points.bc.clear();
    CHECK_THROWS_AS(total_loss(f.params, f.points, f.setup, LossWeights{}), SpecError);
    LossWeights neg;
    neg.ic = -1.0;
    CHECK_THROWS_AS(neg.validate(), SpecError);
}

TEST_CASE("gradient of each term matches finite differences") {
    for (std::uint64_t seed : {11u, 12u}) {
        auto f = fixture(seed);
        for (auto term : kAllLossTerms) {
            CAPTURE(to_string(term));
            auto w = LossWeights::zero();
            w.get(term) = 1.0;
            LossEvaluator ev(f.points, f.setup, w, f.params.scaling());
            GradientBundle g(f.params.layout());
            auto b = ev.evaluate(f.params, g);
            CHECK(b.total == doctest::Approx(ev.evaluate(f.params).total).epsilon(1e-15));
            const double scale = g.values().cwiseAbs().maxCoeff();
            REQUIRE(scale > 0.0);
            const double h = 1e-6;
            for (Eigen::Index i = 0; i < f.params.values().size(); ++i) {
                auto p = f.params, m = f.params;
                p.values()[i] += h;
                m.values()[i] -= h;
                const double fd = (ev.evaluate(p).total - ev.evaluate(m).total) / (2 * h);
                CHECK(rel_err(fd, g.values()[i], 1e-3 * scale) < 1e-4);
            }
        }
    }
}

TEST_CASE("frozen layers receive no gradient") {
    auto f = fixture(13);
    LossEvaluator ev(f.points, f.setup, LossWeights{}, f.params.scaling());
    GradientBundle all(f.params.layout()), part(f.params.layout());
    ev.evaluate(f.params, all);
    ev.evaluate(f.params, part, {true, false, false});
    const auto& lay = f.params.layout();
    CHECK(part.values().head(lay.layer_end(0)) == all.values().head(lay.layer_end(0)));
    CHECK(part.values().tail(lay.size() - lay.layer_end(0)).isZero(0.0));
}

}
