#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <algorithm>
#include <random>

#include <json.hpp>

#include "tgnn/error.hpp"
#include "tgnn/scenarios.hpp"

using namespace tgnn;

namespace {

// Small but complete spec: 12x12 grid over the usual 1020 domain, tiny network.
ScenarioSpec tiny(ScenarioKind kind = ScenarioKind::FuturePrediction) {
    ScenarioSpec s;
    s.kind = kind;
    s.id = "tiny";
    s.grid = {12, 12, 85.0, 85.0};
    s.covariance.domain_len_x = s.covariance.domain_len_y = 1020.0;
    s.n_steps = 10;
    s.dt = 0.5;
    s.obs_first = 1;
    s.obs_last = 4;
    s.obs_points = 40;
    s.eval_first = 5;
    s.eval_last = 10;
    s.hidden_layers = 3;
    s.width = 6;
    s.epochs = 20;
    s.log_every = 5;
    s.n_colloc = 60;
    s.n_bc = 10;
    s.n_ic = 30;
    s.n_well = 10;
    s.n_new_bc = 10;
    s.n_transfer_ic = 30;
    s.weights.pde = 1e6;
    return s;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("tgnn_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

std::string models_section(const ScenarioResult& r) { return nlohmann::json::parse(metrics_json(r))["models"].dump(); }

}  // namespace

TEST_SUITE("scenarios") {

TEST_CASE("relative L2") {
    std::vector<double> t{3, 4}, p{3, 9};
    CHECK(relative_l2(p, t) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(relative_l2(t, t) == 0.0);
    std::vector<double> z{0, 0};
    CHECK_THROWS_AS(relative_l2(t, z), NumericError);
    CHECK_THROWS_AS(relative_l2(std::vector<double>{1.0}, t), SpecError);

    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    std::vector<double> a(300), b(300);
    for (int i = 0; i < 300; ++i) {
        a[i] = n01(rng);
        b[i] = a[i] + 0.1 * n01(rng);
    }
    double num = 0, den = 0;
    for (int i = 0; i < 300; ++i) {
        num += (b[i] - a[i]) * (b[i] - a[i]);
        den += a[i] * a[i];
    }
    CHECK(relative_l2(b, a) == doctest::Approx(std::sqrt(num / den)).epsilon(1e-13));
}

TEST_CASE("R2 score") {
    std::vector<double> t{1, 2, 3, 6};
    CHECK(r2_score(t, t) == 1.0);
    std::vector<double> mean(4, 3.0);
    CHECK(r2_score(mean, t) == doctest::Approx(0.0).epsilon(1e-15));
    std::vector<double> p{1.5, 2, 2.5, 6.5};
    // SSE = 0.75, SST = 14
    CHECK(r2_score(p, t) == doctest::Approx(1.0 - 0.75 / 14.0).epsilon(1e-15));
    std::vector<double> flat{2, 2};
    CHECK_THROWS_AS(r2_score(flat, flat), NumericError);
}

TEST_CASE("noise is bounded by the per-location range") {
    std::vector<Observation> d;
    for (int s = 1; s <= 5; ++s)
        for (int c = 0; c < 4; ++c) d.push_back({s, 0.2 * s, 10.0 + 20 * c, 10.0, 0.1 * s * (c + 1)});
    CHECK(add_noise(d, 0.0, 3).size() == d.size());
    auto clean = add_noise(d, 0.0, 3);
    for (std::size_t k = 0; k < d.size(); ++k) CHECK(clean[k].h == d[k].h);
    auto n = add_noise(d, 10.0, 3);
    bool changed = false;
    for (std::size_t k = 0; k < d.size(); ++k) {
        const int c = static_cast<int>(k % 4);
        const double range = 0.1 * 4 * (c + 1);  // max - min over steps 1..5
        CHECK(std::abs(n[k].h - d[k].h) <= range * 0.1 + 1e-15);
        changed |= n[k].h != d[k].h;
        CHECK(n[k].x == d[k].x);
    }
    CHECK(changed);
    auto again = add_noise(d, 10.0, 3);
    for (std::size_t k = 0; k < d.size(); ++k) CHECK(again[k].h == n[k].h);

    // range measured from the first monitored step
    auto fi = add_noise(d, 10.0, 3, HdiffMode::FromInitial);
    for (std::size_t k = 0; k < d.size(); ++k) {
        const int c = static_cast<int>(k % 4);
        CHECK(std::abs(fi[k].h - d[k].h) <= 0.1 * 4 * (c + 1) * 0.1 + 1e-15);
    }
}

TEST_CASE("outliers replace floor(pN) records by U(1,2)") {
    std::vector<Observation> d;
    for (int k = 0; k < 103; ++k) d.push_back({1, 0.2, 10.0 * k, 5.0, -0.5});
    auto same = add_outliers(d, 0.0, 1);
    for (const auto& o : same) CHECK(o.h == -0.5);
    auto o = add_outliers(d, 0.1, 1);
    int replaced = 0;
    for (const auto& r : o) {
        if (r.h != -0.5) {
            ++replaced;
            CHECK(r.h >= 1.0);
            CHECK(r.h <= 2.0);
        }
    }
    CHECK(replaced == 10);
    auto o2 = add_outliers(d, 0.1, 1);
    for (std::size_t k = 0; k < o.size(); ++k) CHECK(o[k].h == o2[k].h);
    CHECK_THROWS_AS(add_outliers(d, 1.0, 1), SpecError);
}

TEST_CASE("spec text round trip and strictness") {
    auto s = tiny(ScenarioKind::ChangedBc);
    s.right_change_step = 5;
    s.right_new_head = 2.0;
    s.xi = sample_xi(4, 20);
    s.ensemble_seeds = {3, 4};
    auto back = ScenarioSpec::parse(s.to_string());
    CHECK(back.to_string() == s.to_string());
    CHECK(back.xi == s.xi);
    CHECK(back.right_change_step == 5);
    CHECK(back.weights.pde == 1e6);

    CHECK_THROWS_AS(ScenarioSpec::parse("id = x\n"), SpecError);
    CHECK_THROWS_AS(ScenarioSpec::parse("kind = future_prediction\nbogus_key = 1\n"), SpecError);
    CHECK_THROWS_AS(ScenarioSpec::parse("kind = sideways\n"), SpecError);
    CHECK_THROWS_AS(ScenarioSpec::parse("kind = future_prediction\neval_first = 30\neval_last = 29\n"), SpecError);
    CHECK_THROWS_AS(ScenarioSpec::parse("kind = changed_bc\n"), SpecError);
    CHECK_THROWS_AS(ScenarioSpec::parse("kind = future_prediction\noutlier_fraction = 1\n"), SpecError);
    CHECK_NOTHROW(ScenarioSpec::parse("kind = future_prediction\n"));
    try {
        ScenarioSpec::parse("kind = future_prediction\nwidth = 0\n");
        FAIL("expected SpecError");
    } catch (const SpecError& e) {
        CHECK(std::string(e.what()).find("width") != std::string::npos);
    }
    for (const auto& k : scenario_keys()) CHECK(std::count(scenario_keys().begin(), scenario_keys().end(), k) == 1);
}

TEST_CASE("point sets respect the window and the boundary schedule") {
    auto s = tiny(ScenarioKind::ChangedBc);
    s.right_change_step = 4;
    s.right_new_head = 2.0;
    s.weights.new_bc = 1.0;
    auto data = prepare_data(s);
    CHECK(data.obs.size() == 4u * 40u);
    auto ps = make_point_sets(s, data, 0.0, s.total_time());
    const double lo = s.grid.x_center(0), hi = s.grid.x_center(s.grid.nx - 1);
    CHECK(ps.colloc.size() == 60);
    for (const auto& p : ps.colloc) {
        CHECK(p.t >= 0.0);
        CHECK(p.t <= 5.0);
        CHECK(p.x >= lo);
        CHECK(p.x <= hi);
    }
    for (const auto& p : ps.bc) {
        CHECK((p.x == lo || p.x == hi));
        if (p.x == hi) {
            CHECK(p.t <= 2.0);
            CHECK(p.h == 0.0);
        } else {
            CHECK(p.h == 1.0);
        }
    }
    REQUIRE(ps.new_bc.size() == 10);
    for (const auto& p : ps.new_bc) {
        CHECK(p.x == hi);
        CHECK(p.t >= 2.0);
        CHECK(p.h == 2.0);
    }
    CHECK(ps.ic.size() == 30);
    auto late = make_point_sets(s, data, 2.0, 5.0);
    CHECK(late.ic.empty());
}

TEST_CASE("future prediction run writes artifacts and is deterministic") {
    auto s = tiny();
    auto dir = scratch("run");
    auto a = run_scenario(s, dir);
    REQUIRE(a.runs.size() == 2);
    CHECK(a.runs[0].report.model == "TgNN");
    CHECK(a.runs[1].report.model == "ANN");
    const auto* t = a.report("TgNN");
    REQUIRE(t != nullptr);
    CHECK(t->per_step.size() == 6);
    CHECK(t->relative_l2 >= 0.0);
    CHECK(t->r2 <= 1.0);
    for (const auto& art : a.artifacts) CHECK(std::filesystem::exists(dir / art.path));
    CHECK(std::filesystem::exists(dir / "metrics.json"));
    CHECK(std::filesystem::exists(dir / "predictions_TgNN.csv"));

    // stored predictions reproduce the report
    auto re = evaluate_predictions_csv(dir / "predictions_TgNN.csv", "tiny", "TgNN");
    CHECK(re.relative_l2 == doctest::Approx(t->relative_l2).epsilon(1e-12));
    CHECK(re.r2 == doctest::Approx(t->r2).epsilon(1e-12));

    auto b = run_scenario(s);
    CHECK(models_section(a) == models_section(b));
    CHECK(a.runs[0].params == b.runs[0].params);
    std::filesystem::remove_all(dir);

    // TgNN and ANN share the initialization
    auto ann_only = s;
    ann_only.epochs = 1;
    ann_only.lr = 1e-12;
    auto c = run_scenario(ann_only);
    CHECK((c.runs[0].params.values() - c.runs[1].params.values()).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("changed boundary run") {
    auto s = tiny(ScenarioKind::ChangedBc);
    s.right_change_step = 4;
    s.right_new_head = 2.0;
    s.weights.new_bc = 1.0;
    s.ek_upper = 2.0;
    auto r = run_scenario(s);
    REQUIRE(r.runs.size() == 2);
    CHECK(r.report("ANN") != nullptr);
}

TEST_CASE("transfer run keeps the frozen tail bitwise") {
    auto s = tiny(ScenarioKind::Transfer);
    s.right_change_step = 4;
    s.right_new_head = 2.0;
    s.hidden_layers = 7;
    s.weights.data = 1.0;
    s.ek_upper = 2.0;
    auto r = run_scenario(s);
    const auto* pre = r.run("pretrained");
    const auto* tr = r.run("transfer");
    const auto* c1 = r.run("contrast1");
    const auto* c2 = r.run("contrast2");
    REQUIRE(pre != nullptr);
    REQUIRE(tr != nullptr);
    REQUIRE(c1 != nullptr);
    REQUIRE(c2 != nullptr);
    const auto& lay = pre->params.layout();
    const auto tail = lay.size() - lay.weight_offset(3);
    CHECK(tr->params.values().tail(tail) == pre->params.values().tail(tail));
    CHECK(tr->params.values().head(lay.weight_offset(3)) != pre->params.values().head(lay.weight_offset(3)));
    // contrast 1 keeps its own random tail
    auto fresh = initial_params(s);
    CHECK(c1->params.values().tail(tail) != pre->params.values().tail(tail));
    CHECK(c2->params.values().tail(tail) != c1->params.values().tail(tail));
    (void)fresh;

    // the same protocol starting from the stored pretrained network
    auto again = run_transfer_from(s, pre->params);
    CHECK(again.run("transfer")->params == tr->params);
    auto wrong = pre->params;
    wrong.set_scaling({1.0, 1.0, 1.0, 0.0, 1.0});
    CHECK_THROWS_AS(run_transfer_from(s, wrong), SpecError);
}

TEST_CASE("engineering control run") {
    auto s = tiny(ScenarioKind::EngineeringControl);
    s.has_well = true;
    s.well_x = 510.0;
    s.well_y = 510.0;
    s.well_rate = 300.0;
    s.well_head_floor = 195.0;
    s.left_head = 202.0;
    s.right_head = 198.0;
    s.initial_head = 200.0;
    s.output_shift = 200.0;
    s.weights.ec = 1.0;
    s.weights.pde_well = 1e6;
    s.ec_floor = 195.0;
    s.ek_lower = 0.0;
    s.ek_upper = 1000.0;
    auto r = run_scenario(s);
    REQUIRE(r.report("TgNN") != nullptr);
    REQUIRE(r.report("TgNN_noEC") != nullptr);
    CHECK(r.report("TgNN")->well_prediction.size() == 6);
    CHECK(r.truth_well_log.size() == 11);
}

TEST_CASE("ensemble aggregation") {
    auto s = tiny();
    s.epochs = 5;
    s.ensemble_seeds = {7, 7};
    auto e = run_ensemble(s);
    REQUIRE(e.results.size() == 2);
    const auto* st = e.stats("TgNN");
    REQUIRE(st != nullptr);
    CHECK(st->first.variance == 0.0);
    CHECK(st->second.variance == 0.0);

    s.ensemble_seeds = {1, 2, 3};
    auto f = run_ensemble(s, {}, 2);
    REQUIRE(f.results.size() == 3);
    for (const auto& model : {"TgNN", "ANN"}) {
        const auto* m = f.stats(model);
        REQUIRE(m != nullptr);
        double mean = 0.0;
        for (const auto& r : f.results) mean += r.report(model)->relative_l2;
        mean /= 3.0;
        CHECK(m->first.mean == doctest::Approx(mean).epsilon(1e-14));
        CHECK(m->first.values.size() == 3);
    }
    // parallel and serial ensembles agree bitwise
    auto g = run_ensemble(s, {}, 1);
    CHECK(ensemble_json(f) == ensemble_json(g));

    auto summary = summarize({1.0, 2.0, 3.0, 4.0});
    CHECK(summary.mean == 2.5);
    CHECK(summary.variance == 1.25);

    s.ensemble_seeds = {1};
    CHECK_THROWS_AS(run_ensemble(s), SpecError);
}

TEST_CASE("failures name their stage") {
    auto s = tiny();
    s.covariance.mean_logk = 800.0;  // K overflows
    try {
        run_scenario(s);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).rfind("stage '", 0) == 0);
    }
}

}
