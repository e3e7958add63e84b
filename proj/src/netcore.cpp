#include "qpmerge/netcore.hpp"

#include <string>

namespace qpmerge {
namespace {

Vector activate(Activation a, const Vector& v) {
    if (a == Activation::relu) return v.cwiseMax(0.0);
    return v;
}

// Outputs of every layer before its activation, for a single sample.
std::vector<Vector> pre_activations(const LinearNetwork& net, const Vector& x) {
    std::vector<Vector> pre;
    pre.reserve(net.layers.size());
    Vector h = x;
    for (int l = 0; l < net.depth(); ++l) {
        pre.push_back(net.layers[l] * h);
        h = pre.back();
        if (l + 1 < net.depth()) h = activate(net.activations[l], h);
    }
    return pre;
}

// Product W_M ... W_{N+1}, with optional ReLU masks between factors. Both the
// exact factorisation and the Jacobian go through here so they agree bitwise
// on linear networks.
Matrix upper_product(const LinearNetwork& net, int layer, const std::vector<Vector>* pre) {
    const Eigen::Index width = net.weight(layer).rows();
    Matrix j = Matrix::Identity(width, width);
    for (int l = layer; l < net.depth(); ++l) {
        // gap between layer l and l+1 (1-based) is activations[l-1]
        if (net.activations[l - 1] == Activation::relu) {
            const Vector& z = (*pre)[l - 1];
            for (Eigen::Index i = 0; i < z.size(); ++i) {
                if (!(z[i] > 0.0)) j.row(i).setZero();
            }
        }
        j = net.layers[l] * j;
    }
    return j;
}

}  // namespace

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "identity"; }

Activation activation_from_string(const std::string& name) {
    if (name == "identity") return Activation::identity;
    if (name == "relu") return Activation::relu;
    throw InvalidArgument("unknown activation '" + name + "'");
}

LinearNetwork LinearNetwork::linear(std::vector<Matrix> weights) {
    LinearNetwork net;
    net.activations.assign(weights.empty() ? 0 : weights.size() - 1, Activation::identity);
    net.layers = std::move(weights);
    net.validate();
    return net;
}

const Matrix& LinearNetwork::weight(int layer) const {
    check_layer_index(*this, layer);
    return layers[layer - 1];
}

bool LinearNetwork::is_linear() const {
    for (auto a : activations)
        if (a != Activation::identity) return false;
    return true;
}

void LinearNetwork::validate() const {
    if (layers.empty()) throw DimensionError("network has no layers");
    if (activations.size() + 1 != layers.size())
        throw DimensionError("network with " + std::to_string(layers.size()) + " layers needs " +
                             std::to_string(layers.size() - 1) + " activations");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        if (layers[l].size() == 0) throw DimensionError("layer " + std::to_string(l + 1) + " is empty");
        if (!layers[l].allFinite())
            throw NumericalError("layer " + std::to_string(l + 1) + " has non-finite entries");
        if (l > 0 && layers[l].cols() != layers[l - 1].rows())
            throw DimensionError("layer " + std::to_string(l + 1) + " expects input " +
                                 std::to_string(layers[l].cols()) + " but layer " + std::to_string(l) +
                                 " produces " + std::to_string(layers[l - 1].rows()));
    }
}

void check_layer_index(const LinearNetwork& net, int layer) {
    if (layer < 1 || layer > net.depth())
        throw InvalidArgument("layer index " + std::to_string(layer) + " outside [1, " +
                              std::to_string(net.depth()) + "]");
}

Vector forward(const LinearNetwork& net, const Vector& x) {
    if (x.size() != net.input_dim())
        throw DimensionError("input has dimension " + std::to_string(x.size()) + ", network expects " +
                             std::to_string(net.input_dim()));
    Vector h = x;
    for (int l = 0; l < net.depth(); ++l) {
        h = net.layers[l] * h;
        if (l + 1 < net.depth()) h = activate(net.activations[l], h);
    }
    return h;
}

Vector layer_input(const LinearNetwork& net, int layer, const Vector& x) {
    check_layer_index(net, layer);
    if (x.size() != net.input_dim())
        throw DimensionError("input has dimension " + std::to_string(x.size()) + ", network expects " +
                             std::to_string(net.input_dim()));
    Vector h = x;
    for (int l = 0; l + 1 < layer; ++l) h = activate(net.activations[l], net.layers[l] * h);
    return h;
}

Factorization factorize(const LinearNetwork& net, int layer) {
    check_layer_index(net, layer);
    if (!net.is_linear())
        throw InvalidArgument("exact factorisation needs an all-identity network; use linearize_downstream");
    Factorization f;
    const Eigen::Index in = net.input_dim();
    f.lower = Matrix::Identity(in, in);
    for (int l = 0; l + 1 < layer; ++l) f.lower = net.layers[l] * f.lower;
    f.upper = upper_product(net, layer, nullptr);
    return f;
}

Vector hidden_residual(const Matrix& delta, const Vector& layer_in) {
    if (delta.cols() != layer_in.size())
        throw DimensionError("residual expects input " + std::to_string(delta.cols()) + ", got " +
                             std::to_string(layer_in.size()));
    return delta * layer_in;
}

Vector hidden_residual(const ResidualUpdate& update, const Matrix& lower, const Vector& x) {
    if (lower.cols() != x.size() || lower.rows() != update.delta.cols())
        throw DimensionError("lower composition does not chain with input and residual");
    const Vector zx = lower * x;
    return update.delta * zx;
}

LinearNetwork apply_merged_residual(const LinearNetwork& net, int layer, const Matrix& merged_delta) {
    const Matrix& w = net.weight(layer);
    if (merged_delta.rows() != w.rows() || merged_delta.cols() != w.cols())
        throw DimensionError("merged residual is " + std::to_string(merged_delta.rows()) + "x" +
                             std::to_string(merged_delta.cols()) + ", layer " + std::to_string(layer) + " is " +
                             std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
    LinearNetwork out = net;
    out.layers[layer - 1] += merged_delta;
    return out;
}

DownstreamMap linearize_downstream(const LinearNetwork& net, int layer, const Vector& x) {
    check_layer_index(net, layer);
    bool linear_above = true;
    for (int l = layer; l < net.depth(); ++l) linear_above = linear_above && net.activations[l - 1] == Activation::identity;
    if (linear_above) return {upper_product(net, layer, nullptr), DownstreamKind::exact};
    if (x.size() != net.input_dim()) throw DimensionError("input dimension does not match network");
    const auto pre = pre_activations(net, x);
    return {upper_product(net, layer, &pre), DownstreamKind::jacobian};
}

}  // namespace qpmerge
