#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>

#include "tgnn/error.hpp"
#include "tgnn/training.hpp"

using namespace tgnn;

namespace {

// Teacher network sampled on 50 points; a data-only evaluator.
struct TeacherStudent {
    MlpParams teacher;
    PointSets points;
};

TeacherStudent teacher_student() {
    TeacherStudent ts;
    ts.teacher = init(21, {3, 4, 1}, Activation::Tanh);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int k = 0; k < 50; ++k) {
        const double t = 10 * u(rng), x = 1020 * u(rng), y = 1020 * u(rng);
        ts.points.data.push_back({t, x, y, predict(ts.teacher, t, x, y)});
    }
    return ts;
}

LossWeights data_only() {
    auto w = LossWeights::zero();
    w.data = 1.0;
    return w;
}

}  // namespace

TEST_SUITE("training") {

TEST_CASE("first Adam step moves each parameter by about lr against its gradient") {
    auto p = init(1, {3, 3, 1}, Activation::Tanh);
    const auto before = p.values();
    GradientBundle g(p.layout());
    for (Eigen::Index i = 0; i < g.values().size(); ++i) g.values()[i] = (i % 3 == 0 ? -1.0 : 1.0) * (0.1 + i);
    AdamState s(p.layout(), {});
    adam_step(p, g, s);
    CHECK(s.t == 1);
    for (Eigen::Index i = 0; i < g.values().size(); ++i) {
        const double step = p.values()[i] - before[i];
        CHECK(step == doctest::Approx(-1e-3 * (g.values()[i] > 0 ? 1.0 : -1.0)).epsilon(1e-6));
    }
}

TEST_CASE("zero gradient leaves parameters and decays moments") {
    auto p = init(2, {3, 3, 1}, Activation::Tanh);
    AdamState s(p.layout(), {});
    s.m.setConstant(0.5);
    s.v.setConstant(0.25);
    s.t = 3;
    const auto before = p.values();
    GradientBundle g(p.layout());
    adam_step(p, g, s);
    // m keeps its sign, so the parameters do move; with zero moments they would not
    CHECK(s.m.isApproxToConstant(0.45, 1e-15));
    CHECK(s.v.isApproxToConstant(0.25 * 0.999, 1e-15));

    auto q = init(2, {3, 3, 1}, Activation::Tanh);
    AdamState fresh(q.layout(), {});
    adam_step(q, g, fresh);
    CHECK(q.values() == before);
    CHECK(fresh.m.isZero(0.0));
}

TEST_CASE("scalar quadratic follows the Adam recursion") {
    MlpParams p({3, 1}, Activation::Identity);
    AdamConfig cfg;
    cfg.lr = 0.1;
    AdamState s(p.layout(), cfg);
    const Eigen::Index bias = p.layout().bias_offset(0);
    double th = 0.0, m = 0.0, v = 0.0;
    for (int k = 1; k <= 2000; ++k) {
        GradientBundle g(p.layout());
        g.values()[bias] = 2.0 * (p.values()[bias] - 3.0);
        adam_step(p, g, s);
        const double gr = 2.0 * (th - 3.0);
        m = 0.9 * m + 0.1 * gr;
        v = 0.999 * v + 0.001 * gr * gr;
        th -= 0.1 * (m / (1 - std::pow(0.9, k))) / (std::sqrt(v / (1 - std::pow(0.999, k))) + 1e-8);
        REQUIRE(p.values()[bias] == doctest::Approx(th).epsilon(1e-12));
    }
    CHECK(std::abs(p.values()[bias] - 3.0) < 1e-3);
}

TEST_CASE("frozen layers keep parameters and moments") {
    auto p = init(3, {3, 4, 4, 1}, Activation::Tanh);
    const auto before = p;
    AdamState s(p.layout(), {});
    GradientBundle g(p.layout());
    g.values().setConstant(0.7);
    const std::vector<bool> mask{true, false, true};
    for (int k = 0; k < 5; ++k) adam_step(p, g, s, mask);
    const auto& lay = p.layout();
    const auto b = lay.weight_offset(1), n = lay.layer_end(1) - b;
    CHECK(p.values().segment(b, n) == before.values().segment(b, n));
    CHECK(s.m.segment(b, n).isZero(0.0));
    CHECK(s.v.segment(b, n).isZero(0.0));
    CHECK(p.weight(0) != before.weight(0));
    CHECK_THROWS_AS(adam_step(p, g, s, {true}), SpecError);
}

TEST_CASE("one epoch at zero learning rate changes nothing") {
    auto ts = teacher_student();
    LossEvaluator ev(ts.points, {}, data_only(), {});
    auto p = init(5, {3, 6, 1}, Activation::Tanh);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.adam.lr = 0.0;
    auto r = train(p, ev, cfg);
    CHECK(r.params == p);
    REQUIRE(r.log.size() == 1);
    CHECK(r.log[0].loss.total == r.final_loss.total);
}

TEST_CASE("student learns a teacher and the loss trends down") {
    auto ts = teacher_student();
    LossEvaluator ev(ts.points, {}, data_only(), {});
    TrainConfig cfg;
    cfg.epochs = 3000;
    cfg.adam.lr = 1e-2;
    cfg.log_every = 1;
    auto r = train(init(6, {3, 8, 8, 1}, Activation::Tanh), ev, cfg);
    CHECK(*r.final_loss.term(LossTerm::Data) < 1e-3);
    REQUIRE(r.log.size() == 3000);
    double first = 0.0, last = 0.0;
    for (int k = 0; k < 300; ++k) {
        first += r.log[k].loss.total;
        last += r.log[2700 + k].loss.total;
    }
    CHECK(last < first);
    for (std::size_t k = 1; k < r.log.size(); ++k) CHECK(r.log[k].wall_ms >= r.log[k - 1].wall_ms);
}

TEST_CASE("convex objective descends monotonically at small lr") {
    // linear network, quadratic data loss
    PointSets pts;
    for (int k = 0; k < 20; ++k) pts.data.push_back({0.5 * k, 50.0 * k, 1000.0 - 40.0 * k, 10.0 + 0.3 * k});
    LossEvaluator ev(pts, {}, data_only(), {});
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.adam.lr = 1e-3;
    auto r = train(MlpParams({3, 1}, Activation::Identity), ev, cfg);
    for (std::size_t k = 1; k < r.log.size(); ++k) CHECK(r.log[k].loss.total < r.log[k - 1].loss.total);
}

TEST_CASE("training is bitwise deterministic") {
    auto ts = teacher_student();
    LossEvaluator ev(ts.points, {}, data_only(), {});
    TrainConfig cfg;
    cfg.epochs = 200;
    auto a = train(init(7, {3, 5, 5, 1}, Activation::Tanh), ev, cfg);
    auto b = train(init(7, {3, 5, 5, 1}, Activation::Tanh), ev, cfg);
    CHECK(a.params == b.params);
    CHECK(checkpoint_to_string(a.params) == checkpoint_to_string(b.params));
}

TEST_CASE("non-finite loss aborts with the epoch") {
    auto ts = teacher_student();
    ts.points.data[3].h = std::numeric_limits<double>::infinity();
    LossEvaluator ev(ts.points, {}, data_only(), {});
    TrainConfig cfg;
    cfg.epochs = 5;
    try {
        train(init(8, {3, 4, 1}, Activation::Tanh), ev, cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("epoch 1") != std::string::npos);
    }
}

TEST_CASE("invalid configurations are rejected") {
    auto ts = teacher_student();
    LossEvaluator ev(ts.points, {}, data_only(), {});
    TrainConfig cfg;
    cfg.epochs = 0;
    CHECK_THROWS_AS(train(init(1, {3, 4, 1}, Activation::Tanh), ev, cfg), SpecError);
    cfg.epochs = 2;
    cfg.trainable = {true};
    CHECK_THROWS_AS(train(init(1, {3, 4, 1}, Activation::Tanh), ev, cfg), SpecError);
}

TEST_CASE("checkpoints and log") {
    auto ts = teacher_student();
    LossEvaluator ev(ts.points, {}, data_only(), {});
    auto dir = std::filesystem::temp_directory_path() / "tgnn_test_ckpt";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.log_every = 5;
    cfg.checkpoint_dir = dir;
    cfg.checkpoint_every = 5;
    auto r = train(init(9, {3, 4, 1}, Activation::Tanh), ev, cfg);
    CHECK(std::filesystem::exists(dir / "epoch_5.ckpt"));
    CHECK(load_checkpoint(dir / "epoch_10.ckpt") == r.params);
    std::filesystem::remove_all(dir);
    REQUIRE(r.log.size() == 3);
    CHECK(r.log[1].epoch == 5);
    auto csv = training_log_csv(r.log);
    CHECK(csv.rfind("epoch,data,pde,bc,ic,ec,ek,pde_well,new_bc,total,wall_ms\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    auto rec = loss_record(r.final_loss);
    REQUIRE(rec.size() == 2);
    CHECK(rec[0].first == "data");
}

TEST_CASE("transfer mask and retraining") {
    CHECK(transfer_trainable_mask(8, 3, true) == std::vector<bool>{true, true, true, false, false, false, false, false});
    CHECK(transfer_trainable_mask(8, 3, false).back());
    CHECK_THROWS_AS(transfer_trainable_mask(8, 8, true), SpecError);

    PointSets pts;
    for (int k = 0; k < 20; ++k) {
        pts.colloc.push_back({0.5 * k, 50.0 * k + 10, 1000.0 - 40.0 * k});
        pts.bc.push_back({0.5 * k, 10.0, 50.0 * k, 1.0});
    }
    auto pre = init(10, hidden_layer_sizes(7, 6), Activation::Tanh);
    LossWeights w{0, 1e8, 1, 0, 0, 1, 0, 0};
    LossEvaluator ev(pts, {}, w, pre.scaling());
    TrainConfig cfg;
    cfg.epochs = 30;
    cfg.trainable = transfer_trainable_mask(8, 3, true);
    auto r = transfer_retrain(pre, ev, cfg);
    const auto& lay = pre.layout();
    const auto frozen = lay.weight_offset(3);
    CHECK(r.params.values().tail(lay.size() - frozen) == pre.values().tail(lay.size() - frozen));
    CHECK(r.params.values().head(frozen) != pre.values().head(frozen));

    cfg.trainable.assign(8, false);
    CHECK(transfer_retrain(pre, ev, cfg).params == pre);

    pts.data.push_back({1.0, 100.0, 100.0, 0.5});
    w.data = 1.0;
    LossEvaluator with_data(pts, {}, w, pre.scaling());
    CHECK_THROWS_AS(transfer_retrain(pre, with_data, cfg), SpecError);
}

TEST_CASE("initial condition from a network") {
    auto p = init(11, {3, 5, 1}, Activation::Tanh, {10.0, 1020.0, 1020.0, 0.3, 2.0});
    std::vector<SpaceTimePoint> loc{{0.0, 10.0, 500.0}, {7.0, 990.0, 30.0}};
    auto ic = ic_from_network(p, 4.0, loc);
    REQUIRE(ic.size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        CHECK(ic[k].t == 4.0);
        CHECK(ic[k].x == loc[k].x);
        CHECK(ic[k].h == doctest::Approx(predict(p, 4.0, loc[k].x, loc[k].y)).epsilon(1e-14));
    }
}

}
