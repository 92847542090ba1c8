#pragma once

/**
 * @file training.hpp
 * @brief Adam optimization of the composite loss and layer-frozen retraining.
 */

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tgnn/net.hpp"
#include "tgnn/physics_loss.hpp"

namespace tgnn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    AdamState() = default;
    AdamState(const ParamLayout& layout, AdamConfig config);

    Eigen::VectorXd m;
    Eigen::VectorXd v;
    std::int64_t t = 0;
    AdamConfig config;
};

/**
 * One Adam update. Entries of layers with trainable[l] == false keep their
 * parameter values and moments bitwise; an empty mask trains everything.
 */
void adam_step(MlpParams& params, const GradientBundle& grad, AdamState& state,
               const std::vector<bool>& trainable = {});

struct TrainConfig {
    int epochs = 20000;
    AdamConfig adam;
    std::uint64_t seed = 0;           ///< recorded only; training itself is full-batch and deterministic
    std::vector<bool> trainable;      ///< per parameterized layer; empty trains all
    int log_every = 1;
    std::filesystem::path checkpoint_dir;  ///< empty disables checkpoints
    int checkpoint_every = 0;

    void validate(int n_layers) const;
};

struct EpochRecord {
    int epoch = 0;
    LossBundle loss;  ///< loss at the parameters entering this epoch
    double wall_ms = 0.0;
};

struct TrainResult {
    MlpParams params;
    std::vector<EpochRecord> log;
    LossBundle final_loss;
    double wall_seconds = 0.0;
};

/// Full-batch Adam on `loss`. Throws NumericError naming the epoch if the loss turns non-finite.
TrainResult train(MlpParams initial, const LossEvaluator& loss, const TrainConfig& config);

/// Mask that trains the first `trainable_hidden` hidden layers; the output layer trains unless `freeze_output`.
std::vector<bool> transfer_trainable_mask(int n_layers, int trainable_hidden, bool freeze_output);

/**
 * Retrains `pretrained` on a new objective with frozen layers. The objective
 * must carry no data term. Frozen layers come back bitwise unchanged.
 */
TrainResult transfer_retrain(const MlpParams& pretrained, const LossEvaluator& loss, const TrainConfig& config);

/// Initial-condition points for a new phase taken from a network's own prediction at `t_switch`.
std::vector<LabeledPoint> ic_from_network(const MlpParams& params, double t_switch,
                                          const std::vector<SpaceTimePoint>& locations);

/// CSV with epoch, one column per loss term (blank when absent), total and wall_ms.
std::string training_log_csv(const std::vector<EpochRecord>& log);

/// Flat term-name -> value record of one bundle.
std::vector<std::pair<std::string, double>> loss_record(const LossBundle& loss);

}  // namespace tgnn
