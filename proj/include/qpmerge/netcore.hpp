#pragma once

// Dense feed-forward networks with identity or ReLU gaps between layers.
//
// Layer indices are 1-based throughout the library: layer N is layers[N-1].
// activations[l] is applied to the output of layer l+1, so a network with M
// layers carries M-1 activation flags.

#include <vector>

#include "qpmerge/common.hpp"

namespace qpmerge {

enum class Activation { identity, relu };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct LinearNetwork {
    std::vector<Matrix> layers;
    std::vector<Activation> activations;

    /// All-identity network from a weight stack.
    static LinearNetwork linear(std::vector<Matrix> weights);

    int depth() const { return static_cast<int>(layers.size()); }
    Eigen::Index input_dim() const { return layers.front().cols(); }
    Eigen::Index output_dim() const { return layers.back().rows(); }
    const Matrix& weight(int layer) const;
    bool is_linear() const;

    /// Throws DimensionError / NumericalError when the invariants do not hold.
    void validate() const;
};

struct ResidualUpdate {
    int layer = 1;
    Matrix delta;
    int task = 0;
};

enum class DownstreamKind { exact, jacobian };

struct DownstreamMap {
    Matrix matrix;
    DownstreamKind kind = DownstreamKind::exact;
};

/// Z is the product of the layers below N, L of the layers above it.
struct Factorization {
    Matrix lower;
    Matrix upper;
};

Vector forward(const LinearNetwork& net, const Vector& x);

/// Input to layer N for sample x, i.e. Z x for linear nets. Evaluated
/// functionally, so ReLU gaps below N are honoured.
Vector layer_input(const LinearNetwork& net, int layer, const Vector& x);

Factorization factorize(const LinearNetwork& net, int layer);

Vector hidden_residual(const ResidualUpdate& update, const Matrix& lower, const Vector& x);
Vector hidden_residual(const Matrix& delta, const Vector& layer_in);

LinearNetwork apply_merged_residual(const LinearNetwork& net, int layer, const Matrix& merged_delta);

/// Jacobian of (output of layer N) -> (network output) at the base activation
/// pattern for x. ReLU masks use the subgradient 0 at exactly zero.
DownstreamMap linearize_downstream(const LinearNetwork& net, int layer, const Vector& x);

/// Checks that `layer` is a valid 1-based index for `net`.
void check_layer_index(const LinearNetwork& net, int layer);

}  // namespace qpmerge
