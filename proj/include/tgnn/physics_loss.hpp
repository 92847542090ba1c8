#pragma once

/**
 * @file physics_loss.hpp
 * @brief Loss terms of the theory-guided objective and their weighted total.
 *
 * All residuals are assembled in physical units. With h the network head,
 *
 *   f      = S_s h_t - K (h_xx + h_yy) - K_x h_x - K_y h_y
 *   f_well = f + Q / (dx dy)
 *
 * and the penalty terms use ReLU(lower - h), ReLU(h - upper) and
 * ReLU(H_EC - h). Each term is the mean of the squared residual over its
 * own point set; the total is the weighted sum of the terms that carry a
 * nonzero weight.
 */

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tgnn/kle.hpp"
#include "tgnn/net.hpp"

namespace tgnn {

struct LabeledPoint {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
    double h = 0.0;
};

struct SpaceTimePoint {
    double t = 0.0;
    double x = 0.0;
    double y = 0.0;
};

/// Penalty points for EK are the collocation points; EC uses collocation plus well points.
struct PointSets {
    std::vector<LabeledPoint> data;
    std::vector<SpaceTimePoint> colloc;
    std::vector<LabeledPoint> bc;
    std::vector<LabeledPoint> ic;
    std::vector<LabeledPoint> new_bc;
    std::vector<SpaceTimePoint> well;
};

enum class LossTerm { Data, Pde, Bc, Ic, Ec, Ek, PdeWell, NewBc };
inline constexpr std::size_t kLossTermCount = 8;
inline constexpr std::array<LossTerm, kLossTermCount> kAllLossTerms = {
    LossTerm::Data, LossTerm::Pde, LossTerm::Bc, LossTerm::Ic,
    LossTerm::Ec,   LossTerm::Ek,  LossTerm::PdeWell, LossTerm::NewBc};

std::string to_string(LossTerm term);

struct LossWeights {
    double data = 1.0;
    double pde = 1.0;
    double bc = 1.0;
    double ic = 1.0;
    double ec = 1.0;
    double ek = 1.0;
    double pde_well = 1.0;
    double new_bc = 1.0;

    double get(LossTerm t) const;
    double& get(LossTerm t);
    void validate() const;
    static LossWeights zero() { return {0, 0, 0, 0, 0, 0, 0, 0}; }
};

struct PhysicsSetup {
    double specific_storage = 1e-4;
    /// Heterogeneous K; when null the medium is homogeneous with `homogeneous_k`.
    std::shared_ptr<const ConductivityField> field;
    double homogeneous_k = 1.0;
    double well_rate = 0.0;   ///< Q [L^3/T]
    double cell_area = 400.0; ///< dx * dy of the well cell
    double ek_lower = 0.0;
    double ek_upper = 1.0;
    double ec_floor = 81.0;

    LogKSample logk(double x, double y) const;
};

struct LossBundle {
    std::array<std::optional<double>, kLossTermCount> terms{};
    std::array<double, kLossTermCount> weights{};
    double total = 0.0;

    std::optional<double> term(LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
};

/// Residual from a physical-unit jet and a conductivity sample.
double pde_residual(const NetJet& h, const LogKSample& k, double specific_storage);
double pde_residual(const MlpParams& params, const PhysicsSetup& setup, const SpaceTimePoint& p);
double well_residual(const MlpParams& params, const PhysicsSetup& setup, const SpaceTimePoint& p);

double mse_data(const MlpParams& params, std::span<const LabeledPoint> points);
double mse_bc(const MlpParams& params, std::span<const LabeledPoint> points);
double mse_ic(const MlpParams& params, std::span<const LabeledPoint> points);
double mse_new_bc(const MlpParams& params, std::span<const LabeledPoint> points);
double mse_pde(const MlpParams& params, const PhysicsSetup& setup, std::span<const SpaceTimePoint> points);
double mse_pde_well(const MlpParams& params, const PhysicsSetup& setup, std::span<const SpaceTimePoint> points);
double mse_ek_bounds(const MlpParams& params, std::span<const SpaceTimePoint> points, double lower, double upper);
double mse_ec_floor(const MlpParams& params, std::span<const SpaceTimePoint> points, double floor);

/**
 * Batched evaluator for repeated loss/gradient evaluation on fixed point
 * sets. Scaled inputs and conductivity samples are computed once.
 */
class LossEvaluator {
public:
    LossEvaluator(PointSets points, PhysicsSetup setup, LossWeights weights, Scaling scaling);

    LossBundle evaluate(const MlpParams& params) const;
    /// Loss plus d(total)/d(theta) accumulated into a zeroed `grad`.
    LossBundle evaluate(const MlpParams& params, GradientBundle& grad, const std::vector<bool>& trainable = {}) const;

    const PointSets& points() const { return points_; }
    const LossWeights& weights() const { return weights_; }
    const PhysicsSetup& setup() const { return setup_; }

private:
    LossBundle run(const MlpParams& params, GradientBundle* grad, const std::vector<bool>& trainable) const;
    bool on(LossTerm t) const { return weights_.get(t) != 0.0; }

    PointSets points_;
    PhysicsSetup setup_;
    LossWeights weights_;
    Scaling scaling_;

    Eigen::Matrix3Xd value_inputs_;
    Eigen::RowVectorXd value_targets_;
    std::array<std::pair<Eigen::Index, Eigen::Index>, kLossTermCount> value_ranges_{};
    Eigen::Matrix3Xd jet_inputs_;
    Eigen::Index n_colloc_ = 0;
    Eigen::Index n_well_ = 0;
    Eigen::RowVectorXd k_, kx_, ky_;
    // Buffers reused across calls; one evaluator must not be shared between threads.
    mutable NetTape value_tape_, jet_tape_;
};

/// One-shot total; zero-weight terms are absent and not evaluated.
LossBundle total_loss(const MlpParams& params, const PointSets& points, const PhysicsSetup& setup,
                      const LossWeights& weights);

}  // namespace tgnn
