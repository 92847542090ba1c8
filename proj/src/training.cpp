#include "tgnn/training.hpp"

#include <chrono>
#include <cmath>

#include "tgnn/error.hpp"
#include "tgnn/keyvalue.hpp"

namespace tgnn {

AdamState::AdamState(const ParamLayout& layout, AdamConfig cfg)
    : m(Eigen::VectorXd::Zero(layout.size())), v(Eigen::VectorXd::Zero(layout.size())), config(cfg) {}

void adam_step(MlpParams& params, const GradientBundle& grad, AdamState& state, const std::vector<bool>& trainable) {
    const auto& layout = params.layout();
    if (!(grad.layout() == layout) || state.m.size() != layout.size() || state.v.size() != layout.size()) {
        throw SpecError("adam_step: parameter, gradient and state shapes differ");
    }
    if (!trainable.empty() && static_cast<int>(trainable.size()) != params.n_layers()) {
        throw SpecError("adam_step: trainable mask needs one flag per parameterized layer");
    }
    const auto& c = state.config;
    ++state.t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
    auto& theta = params.values();
    const auto& g = grad.values();
    for (int l = 0; l < params.n_layers(); ++l) {
        if (!trainable.empty() && !trainable[static_cast<std::size_t>(l)]) continue;
        const Eigen::Index begin = layout.weight_offset(l);
        const Eigen::Index n = layout.layer_end(l) - begin;
        auto m = state.m.segment(begin, n).array();
        auto v = state.v.segment(begin, n).array();
        const auto gs = g.segment(begin, n).array();
        m = c.beta1 * m + (1.0 - c.beta1) * gs;
        v = c.beta2 * v + (1.0 - c.beta2) * gs.square();
        theta.segment(begin, n).array() -= c.lr * (m / bc1) / ((v / bc2).sqrt() + c.eps);
    }
}

void TrainConfig::validate(int n_layers) const {
    if (epochs < 1) throw SpecError("train: epochs must be >= 1");
    if (!(adam.lr >= 0.0) || !std::isfinite(adam.lr)) throw SpecError("train: learning rate must be >= 0");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw SpecError("train: Adam betas must lie in [0, 1)");
    }
    if (!(adam.eps > 0.0)) throw SpecError("train: Adam epsilon must be > 0");
    if (!trainable.empty() && static_cast<int>(trainable.size()) != n_layers) {
        throw SpecError("train: freeze mask needs " + std::to_string(n_layers) + " entries");
    }
    if (log_every < 1) throw SpecError("train: log_every must be >= 1");
}

namespace {

bool finite(const LossBundle& l) {
    if (!std::isfinite(l.total)) return false;
    for (const auto& t : l.terms) {
        if (t && !std::isfinite(*t)) return false;
    }
    return true;
}

std::string describe(const LossBundle& l) {
    std::string s;
    for (const auto& [k, v] : loss_record(l)) s += " " + k + "=" + format_double(v);
    return s;
}

}  // namespace

TrainResult train(MlpParams initial, const LossEvaluator& loss, const TrainConfig& config) {
    config.validate(initial.n_layers());
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    auto elapsed_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - start).count(); };

    TrainResult result;
    result.params = std::move(initial);
    AdamState state(result.params.layout(), config.adam);
    GradientBundle grad(result.params.layout());
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        grad.set_zero();
        const LossBundle l = loss.evaluate(result.params, grad, config.trainable);
        if (!finite(l) || !grad.values().allFinite()) {
            throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + ":" + describe(l));
        }
        if (epoch == 1 || epoch == config.epochs || epoch % config.log_every == 0) {
            result.log.push_back({epoch, l, elapsed_ms()});
        }
        adam_step(result.params, grad, state, config.trainable);
        if (!config.checkpoint_dir.empty() && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
            save_checkpoint(config.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), result.params);
        }
    }
    result.final_loss = loss.evaluate(result.params);
    if (!finite(result.final_loss)) {
        throw NumericError("train: non-finite loss after epoch " + std::to_string(config.epochs) + ":" +
                           describe(result.final_loss));
    }
    result.wall_seconds = elapsed_ms() / 1000.0;
    return result;
}

std::vector<bool> transfer_trainable_mask(int n_layers, int trainable_hidden, bool freeze_output) {
    if (trainable_hidden < 0 || trainable_hidden > n_layers - 1) {
        throw SpecError("transfer: trainable hidden layer count out of range");
    }
    std::vector<bool> mask(static_cast<std::size_t>(n_layers), false);
    for (int l = 0; l < trainable_hidden; ++l) mask[static_cast<std::size_t>(l)] = true;
    mask.back() = !freeze_output;
    return mask;
}

TrainResult transfer_retrain(const MlpParams& pretrained, const LossEvaluator& loss, const TrainConfig& config) {
    if (loss.weights().data != 0.0) throw SpecError("transfer: the retraining objective must not use observation data");
    return train(pretrained, loss, config);
}

std::vector<LabeledPoint> ic_from_network(const MlpParams& params, double t_switch,
                                          const std::vector<SpaceTimePoint>& locations) {
    Eigen::Matrix3Xd pts(3, static_cast<Eigen::Index>(locations.size()));
    for (std::size_t k = 0; k < locations.size(); ++k) {
        pts.col(static_cast<Eigen::Index>(k)) << t_switch, locations[k].x, locations[k].y;
    }
    const Eigen::RowVectorXd h = predict_batch(params, pts);
    std::vector<LabeledPoint> out;
    out.reserve(locations.size());
    for (std::size_t k = 0; k < locations.size(); ++k) {
        out.push_back({t_switch, locations[k].x, locations[k].y, h[static_cast<Eigen::Index>(k)]});
    }
    return out;
}

std::string training_log_csv(const std::vector<EpochRecord>& log) {
    std::string out = "epoch";
    for (auto t : kAllLossTerms) out += "," + to_string(t);
    out += ",total,wall_ms\n";
    for (const auto& r : log) {
        out += std::to_string(r.epoch);
        for (const auto& v : r.loss.terms) {
            out += ',';
            if (v) out += format_double(*v);
        }
        out += "," + format_double(r.loss.total) + "," + format_double(r.wall_ms) + "\n";
    }
    return out;
}

std::vector<std::pair<std::string, double>> loss_record(const LossBundle& loss) {
    std::vector<std::pair<std::string, double>> out;
    for (auto t : kAllLossTerms) {
        if (const auto v = loss.term(t)) out.emplace_back(to_string(t), *v);
    }
    out.emplace_back("total", loss.total);
    return out;
}

}  // namespace tgnn
