#include "tgnn/net.hpp"

#include <cmath>
#include <random>

#include "tgnn/error.hpp"
#include "tgnn/keyvalue.hpp"

namespace tgnn {

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Identity: return "identity";
    }
    return "?";
}

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::Tanh;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "identity") return Activation::Identity;
    throw SpecError("unknown activation '" + s + "'");
}

ParamLayout::ParamLayout(std::vector<int> layer_sizes) : sizes_(std::move(layer_sizes)) {
    if (sizes_.size() < 2) throw SpecError("network: need at least an input and an output layer");
    if (sizes_.front() != 3) throw SpecError("network: input layer must have 3 units (t, x, y)");
    if (sizes_.back() != 1) throw SpecError("network: output layer must have 1 unit");
    for (int s : sizes_) {
        if (s < 1) throw SpecError("network: layer sizes must be >= 1");
    }
    offsets_.push_back(0);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
        offsets_.push_back(offsets_.back() + static_cast<Eigen::Index>(sizes_[l]) * sizes_[l + 1] + sizes_[l + 1]);
    }
}

MlpParams::MlpParams(std::vector<int> layer_sizes, Activation activation, Scaling scaling)
    : layout_(std::move(layer_sizes)), activation_(activation), scaling_(scaling),
      theta_(Eigen::VectorXd::Zero(layout_.size())) {
    if (!(scaling_.t_scale > 0.0) || !(scaling_.x_scale > 0.0) || !(scaling_.y_scale > 0.0) ||
        !(scaling_.output_scale != 0.0)) {
        throw SpecError("network: scaling factors must be nonzero and input scales positive");
    }
}

Eigen::Map<Eigen::MatrixXd> MlpParams::weight(int l) {
    return {theta_.data() + layout_.weight_offset(l), layout_.fan_out(l), layout_.fan_in(l)};
}
Eigen::Map<const Eigen::MatrixXd> MlpParams::weight(int l) const {
    return {theta_.data() + layout_.weight_offset(l), layout_.fan_out(l), layout_.fan_in(l)};
}
Eigen::Map<Eigen::VectorXd> MlpParams::bias(int l) {
    return {theta_.data() + layout_.bias_offset(l), layout_.fan_out(l)};
}
Eigen::Map<const Eigen::VectorXd> MlpParams::bias(int l) const {
    return {theta_.data() + layout_.bias_offset(l), layout_.fan_out(l)};
}

Eigen::Map<const Eigen::MatrixXd> GradientBundle::weight(int l) const {
    return {values_.data() + layout_.weight_offset(l), layout_.fan_out(l), layout_.fan_in(l)};
}
Eigen::Map<const Eigen::VectorXd> GradientBundle::bias(int l) const {
    return {values_.data() + layout_.bias_offset(l), layout_.fan_out(l)};
}

namespace {

constexpr int kJetChannels = 6;  // value, t, x, y, xx, yy

/// Activation value (written to s0) and its first three derivatives at `a`.
template <class A, class S0>
void activate(Activation act, const A& a, S0&& s0, Eigen::ArrayXXd& s1, Eigen::ArrayXXd* s2, Eigen::ArrayXXd* s3) {
    switch (act) {
        case Activation::Tanh:
            // Eigen vectorizes exp for double but not tanh.
            s0 = 1.0 - 2.0 / ((2.0 * a).exp() + 1.0);
            s1 = 1.0 - s0.square();
            if (s2) *s2 = -2.0 * s0 * s1;
            if (s3) *s3 = s1 * (4.0 * s0.square() - 2.0 * s1);
            break;
        case Activation::Sigmoid:
            s0 = 1.0 / (1.0 + (-a).exp());
            s1 = s0 * (1.0 - s0);
            if (s2) *s2 = s1 * (1.0 - 2.0 * s0);
            if (s3) *s3 = s1 * (1.0 - 2.0 * s0).square() - 2.0 * s1.square();
            break;
        case Activation::Identity:
            s0 = a;
            s1.setOnes(a.rows(), a.cols());
            if (s2) s2->setZero(a.rows(), a.cols());
            if (s3) s3->setZero(a.rows(), a.cols());
            break;
    }
}

/// Propagates all channels through the network, leaving every intermediate in `tp`.
void propagate(const MlpParams& p, const Eigen::Ref<const Eigen::Matrix3Xd>& inputs, int channels, NetTape& tp) {
    const Eigen::Index n = inputs.cols();
    const int layers = p.n_layers();
    const auto lsz = static_cast<std::size_t>(layers);
    tp.channels = channels;
    tp.points = n;
    tp.inputs.resize(lsz);
    tp.pre.resize(lsz);
    tp.d1.resize(lsz);
    tp.d2.resize(lsz);
    tp.d3.resize(lsz);

    auto& in = tp.inputs[0];
    in.setZero(3, channels * n);
    in.leftCols(n) = inputs;
    if (channels == kJetChannels) {
        for (int s = 0; s < 3; ++s) in.row(s).segment((s + 1) * n, n).setOnes();
    }

    for (int l = 0; l < layers; ++l) {
        const auto lu = static_cast<std::size_t>(l);
        const auto& z = tp.inputs[lu];
        auto& y = l == layers - 1 ? tp.output : tp.pre[lu];
        y.resize(p.layout().fan_out(l), channels * n);
        // Value columns get their own product so they round exactly as in a value-only pass.
        y.leftCols(n).noalias() = p.weight(l) * z.leftCols(n);
        if (channels > 1) y.rightCols((channels - 1) * n).noalias() = p.weight(l) * z.rightCols((channels - 1) * n);
        y.leftCols(n).colwise() += p.bias(l);
        if (l == layers - 1) break;

        auto& next = tp.inputs[lu + 1];
        next.resize(y.rows(), channels * n);
        auto& s1 = tp.d1[lu];
        auto& s2 = tp.d2[lu];
        const bool full = channels == kJetChannels;
        activate(p.activation(), y.leftCols(n).array(), next.leftCols(n).array(), s1, full ? &s2 : nullptr,
                 full ? &tp.d3[lu] : nullptr);
        if (channels == kJetChannels) {
            const auto dt = y.middleCols(n, n).array();
            const auto dx = y.middleCols(2 * n, n).array();
            const auto dy = y.middleCols(3 * n, n).array();
            const auto ex = y.middleCols(4 * n, n).array();
            const auto ey = y.middleCols(5 * n, n).array();
            next.middleCols(n, n).array() = s1 * dt;
            next.middleCols(2 * n, n).array() = s1 * dx;
            next.middleCols(3 * n, n).array() = s1 * dy;
            next.middleCols(4 * n, n).array() = s2 * dx.square() + s1 * ex;
            next.middleCols(5 * n, n).array() = s2 * dy.square() + s1 * ey;
        }
    }
}

}  // namespace

Eigen::RowVectorXd forward_batch(const MlpParams& params, const Eigen::Ref<const Eigen::Matrix3Xd>& inputs,
                                 NetTape* tape) {
    NetTape local;
    NetTape& tp = tape ? *tape : local;
    propagate(params, inputs, 1, tp);
    return tp.output.row(0);
}

JetBatch jet_batch(const MlpParams& params, const Eigen::Ref<const Eigen::Matrix3Xd>& inputs, NetTape* tape) {
    const Eigen::Index n = inputs.cols();
    NetTape local;
    NetTape& tp = tape ? *tape : local;
    propagate(params, inputs, kJetChannels, tp);
    const Eigen::MatrixXd& y = tp.output;
    JetBatch j;
    j.value = y.row(0).segment(0, n);
    j.d_t = y.row(0).segment(n, n);
    j.d_x = y.row(0).segment(2 * n, n);
    j.d_y = y.row(0).segment(3 * n, n);
    j.d_xx = y.row(0).segment(4 * n, n);
    j.d_yy = y.row(0).segment(5 * n, n);
    return j;
}

void backprop(const MlpParams& params, const NetTape& tape, const JetSeeds& seeds, GradientBundle& grad,
              const std::vector<bool>& trainable) {
    const int layers = params.n_layers();
    const Eigen::Index n = tape.points;
    const int channels = tape.channels;
    if (static_cast<int>(tape.inputs.size()) != layers) throw SpecError("backprop: tape does not match network");
    if (!(grad.layout() == params.layout())) throw SpecError("backprop: gradient layout does not match network");
    if (!trainable.empty() && static_cast<int>(trainable.size()) != layers) {
        throw SpecError("backprop: trainable mask needs one flag per parameterized layer");
    }
    auto is_trainable = [&](int l) { return trainable.empty() || trainable[static_cast<std::size_t>(l)]; };
    int lowest = layers;
    for (int l = 0; l < layers; ++l) {
        if (is_trainable(l)) {
            lowest = l;
            break;
        }
    }
    if (lowest == layers) return;

    const Eigen::RowVectorXd* parts[kJetChannels] = {&seeds.value, &seeds.d_t, &seeds.d_x,
                                                     &seeds.d_y,   &seeds.d_xx, &seeds.d_yy};
    Eigen::MatrixXd& g = tape.adj_in;
    Eigen::MatrixXd& gy = tape.adj_out;
    g.setZero(1, channels * n);
    for (int c = 0; c < kJetChannels; ++c) {
        const auto& s = *parts[c];
        if (s.size() == 0) continue;
        if (c >= channels) throw SpecError("backprop: derivative seeds need a jet tape");
        if (s.size() != n) throw SpecError("backprop: seed length does not match the batch");
        g.row(0).segment(c * n, n) = s;
    }

    for (int l = layers - 1; l >= lowest; --l) {
        const auto lu = static_cast<std::size_t>(l);
        if (l == layers - 1) {
            gy.swap(g);
        } else {
            const auto& d1 = tape.d1[lu];
            gy.resize(g.rows(), g.cols());
            const auto gz = g.leftCols(n).array();
            if (channels == 1) {
                gy.array() = d1 * gz;
            } else {
                const auto& d2 = tape.d2[lu];
                const auto& d3 = tape.d3[lu];
                const auto& y = tape.pre[lu];
                const auto dt = y.middleCols(n, n).array();
                const auto dx = y.middleCols(2 * n, n).array();
                const auto dy = y.middleCols(3 * n, n).array();
                const auto ex = y.middleCols(4 * n, n).array();
                const auto ey = y.middleCols(5 * n, n).array();
                const auto gt = g.middleCols(n, n).array();
                const auto gx = g.middleCols(2 * n, n).array();
                const auto gyy = g.middleCols(3 * n, n).array();
                const auto gxx = g.middleCols(4 * n, n).array();
                const auto gyy2 = g.middleCols(5 * n, n).array();
                gy.leftCols(n).array() = d1 * gz + d2 * (dt * gt + dx * gx + dy * gyy) +
                                         (d3 * dx.square() + d2 * ex) * gxx + (d3 * dy.square() + d2 * ey) * gyy2;
                gy.middleCols(n, n).array() = d1 * gt;
                gy.middleCols(2 * n, n).array() = d1 * gx + 2.0 * d2 * dx * gxx;
                gy.middleCols(3 * n, n).array() = d1 * gyy + 2.0 * d2 * dy * gyy2;
                gy.middleCols(4 * n, n).array() = d1 * gxx;
                gy.middleCols(5 * n, n).array() = d1 * gyy2;
            }
        }
        if (is_trainable(l)) {
            Eigen::Map<Eigen::MatrixXd> gw(grad.values().data() + grad.layout().weight_offset(l),
                                           grad.layout().fan_out(l), grad.layout().fan_in(l));
            Eigen::Map<Eigen::VectorXd> gb(grad.values().data() + grad.layout().bias_offset(l),
                                           grad.layout().fan_out(l));
            gw.noalias() += gy * tape.inputs[lu].transpose();
            gb += gy.leftCols(n).rowwise().sum();
        }
        if (l > lowest) g.noalias() = params.weight(l).transpose() * gy;
    }
}

double forward(const MlpParams& params, const Eigen::Vector3d& scaled_input) {
    return forward_batch(params, scaled_input)[0];
}

NetJet jet(const MlpParams& params, const Eigen::Vector3d& scaled_input) {
    return jet_batch(params, scaled_input).at(0);
}

Eigen::Vector3d scale_input(const Scaling& s, double t, double x, double y) {
    return {t / s.t_scale, x / s.x_scale, y / s.y_scale};
}

NetJet physical_jet(const MlpParams& params, double t, double x, double y) {
    const auto& s = params.scaling();
    const NetJet r = jet(params, scale_input(s, t, x, y));
    const double a = s.output_scale;
    return {s.output_shift + a * r.value,
            a * r.d_t / s.t_scale,
            a * r.d_x / s.x_scale,
            a * r.d_y / s.y_scale,
            a * r.d_xx / (s.x_scale * s.x_scale),
            a * r.d_yy / (s.y_scale * s.y_scale)};
}

double predict(const MlpParams& params, double t, double x, double y) {
    const auto& s = params.scaling();
    return s.output_shift + s.output_scale * forward(params, scale_input(s, t, x, y));
}

Eigen::RowVectorXd predict_batch(const MlpParams& params, const Eigen::Ref<const Eigen::Matrix3Xd>& physical) {
    const auto& s = params.scaling();
    Eigen::Matrix3Xd scaled(3, physical.cols());
    scaled.row(0) = physical.row(0) / s.t_scale;
    scaled.row(1) = physical.row(1) / s.x_scale;
    scaled.row(2) = physical.row(2) / s.y_scale;
    Eigen::RowVectorXd out = forward_batch(params, scaled);
    return (s.output_shift + s.output_scale * out.array()).matrix();
}

namespace {

void draw_weights(MlpParams& params, std::uint64_t seed, const std::vector<bool>& layers) {
    std::mt19937_64 rng(seed);
    for (int l = 0; l < params.n_layers(); ++l) {
        const int fi = params.layout().fan_in(l);
        const int fo = params.layout().fan_out(l);
        const double limit = std::sqrt(6.0 / (fi + fo));
        std::uniform_real_distribution<double> dist(-limit, limit);
        const bool take = layers.empty() || layers[static_cast<std::size_t>(l)];
        auto w = params.weight(l);
        for (int r = 0; r < fo; ++r) {
            for (int c = 0; c < fi; ++c) {
                const double v = dist(rng);
                if (take) w(r, c) = v;
            }
        }
        if (take) params.bias(l).setZero();
    }
}

}  // namespace

MlpParams init(std::uint64_t seed, std::vector<int> layer_sizes, Activation activation, Scaling scaling) {
    MlpParams p(std::move(layer_sizes), activation, scaling);
    draw_weights(p, seed, {});
    return p;
}

void reinitialize_layers(MlpParams& params, std::uint64_t seed, const std::vector<bool>& layers) {
    if (static_cast<int>(layers.size()) != params.n_layers()) {
        throw SpecError("reinitialize: need one flag per parameterized layer");
    }
    draw_weights(params, seed, layers);
}

std::vector<int> hidden_layer_sizes(int hidden_layers, int width) {
    if (hidden_layers < 0 || width < 1) throw SpecError("network: invalid hidden layer shape");
    std::vector<int> sizes{3};
    for (int i = 0; i < hidden_layers; ++i) sizes.push_back(width);
    sizes.push_back(1);
    return sizes;
}

std::string checkpoint_to_string(const MlpParams& params) {
    KeyValueDoc doc;
    doc.set("format", std::string("tgnn-checkpoint"));
    doc.set("version", 1);
    doc.set("layer_sizes", std::span<const int>(params.layer_sizes()));
    doc.set("activation", to_string(params.activation()));
    const auto& s = params.scaling();
    doc.set("t_scale", s.t_scale);
    doc.set("x_scale", s.x_scale);
    doc.set("y_scale", s.y_scale);
    doc.set("output_shift", s.output_shift);
    doc.set("output_scale", s.output_scale);
    for (int l = 0; l < params.n_layers(); ++l) {
        const auto w = params.weight(l);
        std::vector<double> row_major;
        row_major.reserve(static_cast<std::size_t>(w.size()));
        for (Eigen::Index r = 0; r < w.rows(); ++r) {
            for (Eigen::Index c = 0; c < w.cols(); ++c) row_major.push_back(w(r, c));
        }
        doc.set("W" + std::to_string(l), std::span<const double>(row_major));
        const auto b = params.bias(l);
        doc.set("b" + std::to_string(l), std::span<const double>(b.data(), static_cast<std::size_t>(b.size())));
    }
    return doc.to_string();
}

MlpParams checkpoint_from_string(const std::string& text, const std::string& source) {
    const auto doc = KeyValueDoc::parse(text, source);
    if (doc.get_string("format") != "tgnn-checkpoint") throw SpecError(source + ": not a tgnn-checkpoint document");
    if (doc.get_int("version") != 1) throw SpecError(source + ": unsupported checkpoint version");
    std::vector<int> sizes;
    for (auto v : doc.get_ints("layer_sizes")) sizes.push_back(static_cast<int>(v));
    Scaling s;
    s.t_scale = doc.get_double("t_scale");
    s.x_scale = doc.get_double("x_scale");
    s.y_scale = doc.get_double("y_scale");
    s.output_shift = doc.get_double("output_shift");
    s.output_scale = doc.get_double("output_scale");
    MlpParams p(sizes, activation_from_string(doc.get_string("activation")), s);
    const auto expected_keys = static_cast<std::size_t>(9 + 2 * p.n_layers());
    if (doc.entries().size() != expected_keys) throw SpecError(source + ": unexpected keys in checkpoint");
    for (int l = 0; l < p.n_layers(); ++l) {
        const auto w = doc.get_doubles("W" + std::to_string(l));
        const auto b = doc.get_doubles("b" + std::to_string(l));
        auto wm = p.weight(l);
        auto bv = p.bias(l);
        if (static_cast<Eigen::Index>(w.size()) != wm.size() || static_cast<Eigen::Index>(b.size()) != bv.size()) {
            throw SpecError(source + ": layer " + std::to_string(l) + " has the wrong number of values");
        }
        for (Eigen::Index r = 0; r < wm.rows(); ++r) {
            for (Eigen::Index c = 0; c < wm.cols(); ++c) wm(r, c) = w[static_cast<std::size_t>(r * wm.cols() + c)];
        }
        for (Eigen::Index r = 0; r < bv.size(); ++r) bv[r] = b[static_cast<std::size_t>(r)];
    }
    if (!p.all_finite()) throw SpecError(source + ": non-finite parameter values");
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const MlpParams& params) {
    write_text_file(path, checkpoint_to_string(params));
}

MlpParams load_checkpoint(const std::filesystem::path& path) {
    return checkpoint_from_string(read_text_file(path), path.string());
}

}  // namespace tgnn
