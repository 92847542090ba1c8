#include "tgnn/physics_loss.hpp"

#include <cmath>

#include "tgnn/error.hpp"

namespace tgnn {

std::string to_string(LossTerm term) {
    switch (term) {
        case LossTerm::Data: return "data";
        case LossTerm::Pde: return "pde";
        case LossTerm::Bc: return "bc";
        case LossTerm::Ic: return "ic";
        case LossTerm::Ec: return "ec";
        case LossTerm::Ek: return "ek";
        case LossTerm::PdeWell: return "pde_well";
        case LossTerm::NewBc: return "new_bc";
    }
    return "?";
}

double LossWeights::get(LossTerm t) const { return const_cast<LossWeights*>(this)->get(t); }

double& LossWeights::get(LossTerm t) {
    switch (t) {
        case LossTerm::Data: return data;
        case LossTerm::Pde: return pde;
        case LossTerm::Bc: return bc;
        case LossTerm::Ic: return ic;
        case LossTerm::Ec: return ec;
        case LossTerm::Ek: return ek;
        case LossTerm::PdeWell: return pde_well;
        case LossTerm::NewBc: return new_bc;
    }
    return data;
}

void LossWeights::validate() const {
    for (auto t : kAllLossTerms) {
        const double w = get(t);
        if (!(w >= 0.0) || !std::isfinite(w)) throw SpecError("loss weight '" + to_string(t) + "' must be >= 0");
    }
}

LogKSample PhysicsSetup::logk(double x, double y) const {
    if (field) return field->synthesize_logk(x, y);
    return {std::log(homogeneous_k), 0.0, 0.0};
}

double pde_residual(const NetJet& h, const LogKSample& k, double specific_storage) {
    const double kv = k.k();
    return specific_storage * h.d_t - kv * (h.d_xx + h.d_yy) - kv * k.dz_dx * h.d_x - kv * k.dz_dy * h.d_y;
}

double pde_residual(const MlpParams& params, const PhysicsSetup& setup, const SpaceTimePoint& p) {
    return pde_residual(physical_jet(params, p.t, p.x, p.y), setup.logk(p.x, p.y), setup.specific_storage);
}

double well_residual(const MlpParams& params, const PhysicsSetup& setup, const SpaceTimePoint& p) {
    return pde_residual(params, setup, p) + setup.well_rate / setup.cell_area;
}

namespace {

double mse_labeled(const MlpParams& params, std::span<const LabeledPoint> points, const char* what) {
    if (points.empty()) throw SpecError(std::string(what) + ": empty point set");
    double sum = 0.0;
    for (const auto& p : points) {
        const double r = predict(params, p.t, p.x, p.y) - p.h;
        sum += r * r;
    }
    return sum / static_cast<double>(points.size());
}

double relu(double v) { return v > 0.0 ? v : 0.0; }

}  // namespace

double mse_data(const MlpParams& params, std::span<const LabeledPoint> points) {
    return mse_labeled(params, points, "mse_data");
}
double mse_bc(const MlpParams& params, std::span<const LabeledPoint> points) {
    return mse_labeled(params, points, "mse_bc");
}
double mse_ic(const MlpParams& params, std::span<const LabeledPoint> points) {
    return mse_labeled(params, points, "mse_ic");
}
double mse_new_bc(const MlpParams& params, std::span<const LabeledPoint> points) {
    return mse_labeled(params, points, "mse_new_bc");
}

double mse_pde(const MlpParams& params, const PhysicsSetup& setup, std::span<const SpaceTimePoint> points) {
    if (points.empty()) throw SpecError("mse_pde: empty point set");
    double sum = 0.0;
    for (const auto& p : points) {
        const double f = pde_residual(params, setup, p);
        sum += f * f;
    }
    return sum / static_cast<double>(points.size());
}

double mse_pde_well(const MlpParams& params, const PhysicsSetup& setup, std::span<const SpaceTimePoint> points) {
    if (points.empty()) throw SpecError("mse_pde_well: empty point set");
    double sum = 0.0;
    for (const auto& p : points) {
        const double f = well_residual(params, setup, p);
        sum += f * f;
    }
    return sum / static_cast<double>(points.size());
}

double mse_ek_bounds(const MlpParams& params, std::span<const SpaceTimePoint> points, double lower, double upper) {
    if (points.empty()) throw SpecError("mse_ek_bounds: empty point set");
    double sum = 0.0;
    for (const auto& p : points) {
        const double h = predict(params, p.t, p.x, p.y);
        const double up = relu(h - upper);
        const double lo = relu(lower - h);
        sum += up * up + lo * lo;
    }
    return sum / static_cast<double>(points.size());
}

double mse_ec_floor(const MlpParams& params, std::span<const SpaceTimePoint> points, double floor) {
    if (points.empty()) throw SpecError("mse_ec_floor: empty point set");
    double sum = 0.0;
    for (const auto& p : points) {
        const double r = relu(floor - predict(params, p.t, p.x, p.y));
        sum += r * r;
    }
    return sum / static_cast<double>(points.size());
}

namespace {

template <typename P>
void append_scaled(Eigen::Matrix3Xd& m, Eigen::Index& col, std::span<const P> pts, const Scaling& s) {
    for (const auto& p : pts) m.col(col++) = scale_input(s, p.t, p.x, p.y);
}

}  // namespace

LossEvaluator::LossEvaluator(PointSets points, PhysicsSetup setup, LossWeights weights, Scaling scaling)
    : points_(std::move(points)), setup_(std::move(setup)), weights_(weights), scaling_(scaling) {
    weights_.validate();
    auto require = [&](LossTerm t, std::size_t n) {
        if (on(t) && n == 0) throw SpecError("loss term '" + to_string(t) + "' has a nonzero weight but no points");
    };
    require(LossTerm::Data, points_.data.size());
    require(LossTerm::Pde, points_.colloc.size());
    require(LossTerm::Bc, points_.bc.size());
    require(LossTerm::Ic, points_.ic.size());
    require(LossTerm::NewBc, points_.new_bc.size());
    require(LossTerm::Ek, points_.colloc.size());
    require(LossTerm::Ec, points_.colloc.size() + points_.well.size());
    require(LossTerm::PdeWell, points_.well.size());

    const std::pair<LossTerm, const std::vector<LabeledPoint>*> labeled[] = {
        {LossTerm::Data, &points_.data},
        {LossTerm::Bc, &points_.bc},
        {LossTerm::Ic, &points_.ic},
        {LossTerm::NewBc, &points_.new_bc}};
    Eigen::Index total = 0;
    for (const auto& [t, v] : labeled) {
        if (on(t)) total += static_cast<Eigen::Index>(v->size());
    }
    value_inputs_.resize(3, total);
    value_targets_.resize(total);
    Eigen::Index col = 0;
    for (const auto& [t, v] : labeled) {
        if (!on(t)) continue;
        const Eigen::Index begin = col;
        for (std::size_t k = 0; k < v->size(); ++k) value_targets_[begin + static_cast<Eigen::Index>(k)] = (*v)[k].h;
        append_scaled<LabeledPoint>(value_inputs_, col, *v, scaling_);
        value_ranges_[static_cast<std::size_t>(t)] = {begin, col - begin};
    }

    const bool need_colloc = on(LossTerm::Pde) || on(LossTerm::Ek) || on(LossTerm::Ec);
    const bool need_well = on(LossTerm::PdeWell) || on(LossTerm::Ec);
    n_colloc_ = need_colloc ? static_cast<Eigen::Index>(points_.colloc.size()) : 0;
    n_well_ = need_well ? static_cast<Eigen::Index>(points_.well.size()) : 0;
    jet_inputs_.resize(3, n_colloc_ + n_well_);
    col = 0;
    if (need_colloc) append_scaled<SpaceTimePoint>(jet_inputs_, col, points_.colloc, scaling_);
    if (need_well) append_scaled<SpaceTimePoint>(jet_inputs_, col, points_.well, scaling_);
    const Eigen::Index nj = jet_inputs_.cols();
    k_.resize(nj);
    kx_.resize(nj);
    ky_.resize(nj);
    for (Eigen::Index c = 0; c < nj; ++c) {
        const auto& p = c < n_colloc_ ? points_.colloc[static_cast<std::size_t>(c)]
                                      : points_.well[static_cast<std::size_t>(c - n_colloc_)];
        const auto s = setup_.logk(p.x, p.y);
        k_[c] = s.k();
        kx_[c] = s.dk_dx();
        ky_[c] = s.dk_dy();
    }
}

LossBundle LossEvaluator::evaluate(const MlpParams& params) const { return run(params, nullptr, {}); }

LossBundle LossEvaluator::evaluate(const MlpParams& params, GradientBundle& grad,
                                   const std::vector<bool>& trainable) const {
    return run(params, &grad, trainable);
}

LossBundle LossEvaluator::run(const MlpParams& params, GradientBundle* grad, const std::vector<bool>& trainable) const {
    if (!(params.scaling() == scaling_)) throw SpecError("loss evaluator: network scaling differs from the evaluator's");
    LossBundle out;
    for (auto t : kAllLossTerms) out.weights[static_cast<std::size_t>(t)] = weights_.get(t);
    const double a = scaling_.output_scale;
    const double shift = scaling_.output_shift;

    if (value_inputs_.cols() > 0) {
        NetTape& tape = value_tape_;
        const Eigen::RowVectorXd raw = forward_batch(params, value_inputs_, &tape);
        JetSeeds seeds;
        if (grad) seeds.value = Eigen::RowVectorXd::Zero(raw.size());
        for (auto t : {LossTerm::Data, LossTerm::Bc, LossTerm::Ic, LossTerm::NewBc}) {
            if (!on(t)) continue;
            const auto [begin, n] = value_ranges_[static_cast<std::size_t>(t)];
            const Eigen::ArrayXd r =
                (shift + a * raw.segment(begin, n).array() - value_targets_.segment(begin, n).array()).transpose();
            out.terms[static_cast<std::size_t>(t)] = r.square().sum() / static_cast<double>(n);
            if (grad) seeds.value.segment(begin, n) = (weights_.get(t) * 2.0 * a / static_cast<double>(n)) * r.transpose();
        }
        if (grad) backprop(params, tape, seeds, *grad, trainable);
    }

    if (jet_inputs_.cols() > 0) {
        NetTape& tape = jet_tape_;
        const JetBatch j = jet_batch(params, jet_inputs_, &tape);
        const Eigen::Index nj = j.size();
        JetSeeds seeds;
        if (grad) {
            for (auto* s : {&seeds.value, &seeds.d_t, &seeds.d_x, &seeds.d_y, &seeds.d_xx, &seeds.d_yy}) {
                *s = Eigen::RowVectorXd::Zero(nj);
            }
        }
        const Eigen::ArrayXd h = (shift + a * j.value.array()).transpose();
        const double lx = scaling_.x_scale;
        const double ly = scaling_.y_scale;
        const double ss = setup_.specific_storage;
        // f = S_s h_t - K (h_xx + h_yy) - K_x h_x - K_y h_y, with h derivatives from the scaled jet
        auto residual = [&](Eigen::Index begin, Eigen::Index n) {
            return Eigen::ArrayXd(
                (ss * a / scaling_.t_scale * j.d_t.segment(begin, n).array() -
                 k_.segment(begin, n).array() *
                     (a / (lx * lx) * j.d_xx.segment(begin, n).array() + a / (ly * ly) * j.d_yy.segment(begin, n).array()) -
                 kx_.segment(begin, n).array() * (a / lx) * j.d_x.segment(begin, n).array() -
                 ky_.segment(begin, n).array() * (a / ly) * j.d_y.segment(begin, n).array())
                    .transpose());
        };
        auto seed_residual = [&](Eigen::Index begin, Eigen::Index n, const Eigen::ArrayXd& f, double w) {
            const Eigen::ArrayXd df = (w * 2.0 / static_cast<double>(n)) * f;
            const auto kk = k_.segment(begin, n).array().transpose();
            seeds.d_t.segment(begin, n).array() += (df * (ss * a / scaling_.t_scale)).transpose();
            seeds.d_xx.segment(begin, n).array() -= (df * kk * (a / (lx * lx))).transpose();
            seeds.d_yy.segment(begin, n).array() -= (df * kk * (a / (ly * ly))).transpose();
            seeds.d_x.segment(begin, n).array() -= (df * kx_.segment(begin, n).array().transpose() * (a / lx)).transpose();
            seeds.d_y.segment(begin, n).array() -= (df * ky_.segment(begin, n).array().transpose() * (a / ly)).transpose();
        };
        if (on(LossTerm::Pde)) {
            const Eigen::ArrayXd f = residual(0, n_colloc_);
            out.terms[static_cast<std::size_t>(LossTerm::Pde)] = f.square().sum() / static_cast<double>(n_colloc_);
            if (grad) seed_residual(0, n_colloc_, f, weights_.pde);
        }
        if (on(LossTerm::PdeWell)) {
            const Eigen::ArrayXd f = residual(n_colloc_, n_well_) + setup_.well_rate / setup_.cell_area;
            out.terms[static_cast<std::size_t>(LossTerm::PdeWell)] = f.square().sum() / static_cast<double>(n_well_);
            if (grad) seed_residual(n_colloc_, n_well_, f, weights_.pde_well);
        }
        if (on(LossTerm::Ek)) {
            const Eigen::ArrayXd hc = h.head(n_colloc_);
            const Eigen::ArrayXd up = (hc - setup_.ek_upper).max(0.0);
            const Eigen::ArrayXd lo = (setup_.ek_lower - hc).max(0.0);
            const double n = static_cast<double>(n_colloc_);
            out.terms[static_cast<std::size_t>(LossTerm::Ek)] = (up.square() + lo.square()).sum() / n;
            if (grad) seeds.value.head(n_colloc_).array() += (weights_.ek * 2.0 * a / n * (up - lo)).transpose();
        }
        if (on(LossTerm::Ec)) {
            const Eigen::ArrayXd r = (setup_.ec_floor - h).max(0.0);
            const double n = static_cast<double>(nj);
            out.terms[static_cast<std::size_t>(LossTerm::Ec)] = r.square().sum() / n;
            if (grad) seeds.value.array() -= (weights_.ec * 2.0 * a / n * r).transpose();
        }
        if (grad) backprop(params, tape, seeds, *grad, trainable);
    }

    out.total = 0.0;
    for (auto t : kAllLossTerms) {
        const auto& v = out.terms[static_cast<std::size_t>(t)];
        if (v) out.total += weights_.get(t) * *v;
    }
    return out;
}

LossBundle total_loss(const MlpParams& params, const PointSets& points, const PhysicsSetup& setup,
                      const LossWeights& weights) {
    return LossEvaluator(points, setup, weights, params.scaling()).evaluate(params);
}

}  // namespace tgnn
