#pragma once

/**
 * @file net.hpp
 * @brief Fully-connected network with exact input jets and reverse-mode gradients.
 *
 * The network maps scaled inputs s = (t / T, x / L_x, y / L_y) to a raw
 * output y; the physical head is h = shift + scale * y. Hidden layers use a
 * twice-differentiable activation, the output layer is linear.
 *
 * A jet carries per point the value, first derivatives in (t, x, y) and the
 * diagonal second derivatives in (x, y), all in scaled coordinates. Points
 * are evaluated in batches (one column per point) so each layer is a single
 * matrix product over every channel.
 */

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace tgnn {

enum class Activation { Tanh, Sigmoid, Identity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Coordinate and output scaling baked into a network.
struct Scaling {
    double t_scale = 10.0;
    double x_scale = 1020.0;
    double y_scale = 1020.0;
    double output_shift = 0.0;
    double output_scale = 1.0;

    bool operator==(const Scaling&) const = default;
};

/// Flat parameter vector with per-layer views. Layer l maps sizes[l] -> sizes[l+1].
class ParamLayout {
public:
    ParamLayout() = default;
    explicit ParamLayout(std::vector<int> layer_sizes);

    const std::vector<int>& layer_sizes() const { return sizes_; }
    int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
    int fan_in(int l) const { return sizes_[static_cast<std::size_t>(l)]; }
    int fan_out(int l) const { return sizes_[static_cast<std::size_t>(l) + 1]; }
    Eigen::Index weight_offset(int l) const { return offsets_[static_cast<std::size_t>(l)]; }
    Eigen::Index bias_offset(int l) const { return weight_offset(l) + fan_in(l) * fan_out(l); }
    Eigen::Index layer_end(int l) const { return offsets_[static_cast<std::size_t>(l) + 1]; }
    Eigen::Index size() const { return offsets_.back(); }

    bool operator==(const ParamLayout& o) const { return sizes_ == o.sizes_; }

private:
    std::vector<int> sizes_;
    std::vector<Eigen::Index> offsets_;
};

class MlpParams {
public:
    MlpParams() = default;
    MlpParams(std::vector<int> layer_sizes, Activation activation, Scaling scaling = {});

    const ParamLayout& layout() const { return layout_; }
    const std::vector<int>& layer_sizes() const { return layout_.layer_sizes(); }
    int n_layers() const { return layout_.n_layers(); }
    Activation activation() const { return activation_; }
    const Scaling& scaling() const { return scaling_; }
    void set_scaling(const Scaling& s) { scaling_ = s; }

    Eigen::Map<Eigen::MatrixXd> weight(int l);
    Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
    Eigen::Map<Eigen::VectorXd> bias(int l);
    Eigen::Map<const Eigen::VectorXd> bias(int l) const;

    Eigen::VectorXd& values() { return theta_; }
    const Eigen::VectorXd& values() const { return theta_; }

    bool all_finite() const { return theta_.allFinite(); }
    bool operator==(const MlpParams& o) const {
        return layout_ == o.layout_ && activation_ == o.activation_ && scaling_ == o.scaling_ && theta_ == o.theta_;
    }

private:
    ParamLayout layout_;
    Activation activation_ = Activation::Tanh;
    Scaling scaling_;
    Eigen::VectorXd theta_;
};

/// d(objective)/d(theta), laid out like MlpParams::values().
class GradientBundle {
public:
    GradientBundle() = default;
    explicit GradientBundle(const ParamLayout& layout) : layout_(layout), values_(Eigen::VectorXd::Zero(layout.size())) {}

    const ParamLayout& layout() const { return layout_; }
    Eigen::VectorXd& values() { return values_; }
    const Eigen::VectorXd& values() const { return values_; }
    Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
    Eigen::Map<const Eigen::VectorXd> bias(int l) const;
    void set_zero() { values_.setZero(); }

private:
    ParamLayout layout_;
    Eigen::VectorXd values_;
};

/// Value, first derivatives and diagonal second derivatives at one point.
struct NetJet {
    double value = 0.0;
    double d_t = 0.0;
    double d_x = 0.0;
    double d_y = 0.0;
    double d_xx = 0.0;
    double d_yy = 0.0;
};

/// Per-point jet components of a batch.
struct JetBatch {
    Eigen::RowVectorXd value, d_t, d_x, d_y, d_xx, d_yy;

    Eigen::Index size() const { return value.size(); }
    NetJet at(Eigen::Index k) const { return {value[k], d_t[k], d_x[k], d_y[k], d_xx[k], d_yy[k]}; }
};

/// Adjoint seeds: d(objective)/d(component) per point. Empty rows count as zero.
struct JetSeeds {
    Eigen::RowVectorXd value, d_t, d_x, d_y, d_xx, d_yy;
};

/// Intermediate state of a batched evaluation, consumed by backprop().
struct NetTape {
    int channels = 0;  ///< 1 for values only, 6 for full jets
    Eigen::Index points = 0;
    std::vector<Eigen::MatrixXd> inputs;  ///< per layer, fan_in x (channels * points)
    std::vector<Eigen::MatrixXd> pre;     ///< per layer, fan_out x (channels * points)
    std::vector<Eigen::ArrayXXd> d1, d2, d3;  ///< activation derivatives at the pre-activation
    Eigen::MatrixXd output;                   ///< raw network output, 1 x (channels * points)
    // Scratch reused by backprop() so repeated calls on one tape do not reallocate.
    mutable Eigen::MatrixXd adj_in, adj_out;
};

/// Raw outputs for scaled inputs (one column per point).
Eigen::RowVectorXd forward_batch(const MlpParams& params, const Eigen::Ref<const Eigen::Matrix3Xd>& inputs,
                                 NetTape* tape = nullptr);

/// Exact jets in scaled coordinates by second-order forward propagation.
JetBatch jet_batch(const MlpParams& params, const Eigen::Ref<const Eigen::Matrix3Xd>& inputs,
                   NetTape* tape = nullptr);

/**
 * Reverse accumulation of the seeded objective into `grad`. The tape must come
 * from forward_batch (only value seeds are allowed) or jet_batch. Layers with
 * trainable[l] == false get no gradient; an empty mask trains every layer.
 */
void backprop(const MlpParams& params, const NetTape& tape, const JetSeeds& seeds, GradientBundle& grad,
              const std::vector<bool>& trainable = {});

double forward(const MlpParams& params, const Eigen::Vector3d& scaled_input);
NetJet jet(const MlpParams& params, const Eigen::Vector3d& scaled_input);

Eigen::Vector3d scale_input(const Scaling& s, double t, double x, double y);

/// Head and its derivatives in physical units at (t, x, y).
NetJet physical_jet(const MlpParams& params, double t, double x, double y);
double predict(const MlpParams& params, double t, double x, double y);
/// Physical heads for many points; columns are (t, x, y) in physical units.
Eigen::RowVectorXd predict_batch(const MlpParams& params, const Eigen::Ref<const Eigen::Matrix3Xd>& physical);

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
MlpParams init(std::uint64_t seed, std::vector<int> layer_sizes, Activation activation, Scaling scaling = {});

/// Re-draw the weights of the selected layers as init() would for `seed`, zeroing their biases.
void reinitialize_layers(MlpParams& params, std::uint64_t seed, const std::vector<bool>& layers);

std::vector<int> hidden_layer_sizes(int hidden_layers, int width);

std::string checkpoint_to_string(const MlpParams& params);
MlpParams checkpoint_from_string(const std::string& text, const std::string& source = "<string>");
void save_checkpoint(const std::filesystem::path& path, const MlpParams& params);
MlpParams load_checkpoint(const std::filesystem::path& path);

}  // namespace tgnn
