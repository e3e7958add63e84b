#pragma once

// The squared-output calibration objective as an explicit convex quadratic in
// per-task merge coefficients, plus its closed-form and box-constrained solvers.
//
// Coefficients are laid out task-major: flat index k * P + p, where P = r for
// the diagonal mask and P = basis size for a general basis.

#include <optional>
#include <vector>

#include "qpmerge/netcore.hpp"
#include "qpmerge/orthonormal_basis.hpp"

namespace qpmerge {

struct CalibrationSet {
    std::vector<Vector> inputs;
    std::vector<Vector> targets;
    std::vector<int> tasks;  // optional; empty or one label per sample

    std::size_t size() const { return inputs.size(); }
    void validate() const;
    /// Samples whose task label equals `task`.
    CalibrationSet subset(int task) const;
};

/// Per-sample quantities the objective builders need for one merge layer:
/// layer inputs (Z x_j), downstream maps L_j and base residuals b_j.
struct LayerLinearization {
    int layer = 1;
    std::vector<Vector> inputs;
    std::vector<Matrix> downstream;
    std::vector<Vector> residuals;
    bool exact = true;  // false when any L_j is a ReLU Jacobian

    std::size_t size() const { return inputs.size(); }
};

LayerLinearization linearize_layer(const LinearNetwork& net, int layer, const CalibrationSet& calib);

struct QuadraticObjective {
    Matrix hessian;
    Vector linear;
    double constant = 0.0;
    int tasks = 0;
    int directions = 0;
    bool linearized = false;

    Eigen::Index dim() const { return linear.size(); }
    Eigen::Index flat_index(int task, int direction) const {
        return static_cast<Eigen::Index>(task) * directions + direction;
    }
};

struct SolveInfo {
    Eigen::Index rank = 0;
    // ||g - P_range(H) g|| / ||g||; the minimiser is taken over Range(H) when large
    double range_residual = 0.0;
    bool outside_range = false;
    int iterations = 0;
    double objective = 0.0;
};

struct MergeCoefficients {
    Matrix values;  // tasks x directions
    std::string basis_id = "standard";
    SolveInfo info;

    Vector flat() const;
};

Vector flatten_coefficients(const Matrix& values);
Matrix unflatten_coefficients(const Vector& flat, int tasks, int directions);

std::vector<Vector> base_residuals(const LinearNetwork& net, const CalibrationSet& calib);

QuadraticObjective build_diagonal_qp(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                                     const CalibrationSet& calib);
QuadraticObjective build_diagonal_qp(const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas);

QuadraticObjective build_general_basis_qp(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                                          const CalibrationSet& calib, const OrthonormalBasis& basis);
QuadraticObjective build_general_basis_qp(const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas,
                                          const OrthonormalBasis& basis);

double objective_value(const QuadraticObjective& qp, const Vector& d);
Vector objective_gradient(const QuadraticObjective& qp, const Vector& d);

inline constexpr double kPseudoInverseCutoff = 1e-10;

/// Minimum-norm minimiser -H^+ g.
MergeCoefficients solve_unconstrained(const QuadraticObjective& qp, double cutoff = kPseudoInverseCutoff);

struct BoxOptions {
    int steps = 500;
    double step_size = 1e-2;
    std::optional<Vector> init;  // default: uniform soup point 1/K
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    // Reject iterates that increase the objective.
    bool accept_only_descent = false;
};

/// Projected Adam on [lo, hi]^dim. Returns the final iterate.
MergeCoefficients solve_box_constrained(const QuadraticObjective& qp, double lo, double hi,
                                        const BoxOptions& opts = {});

/// Minimum-norm minimiser of (d^T m + beta)^2.
Vector solve_1d(const Vector& m, double beta);

/// sum_k diag(d_k) delta_k
Matrix merge_diagonal(const std::vector<ResidualUpdate>& deltas, const Matrix& coeffs);
/// sum_k sum_p d_kp q_p q_p^T delta_k
Matrix merge_in_basis(const std::vector<ResidualUpdate>& deltas, const Matrix& coeffs, const OrthonormalBasis& basis);

/// sum_j ||h(x_j) - y_j||^2 evaluated exactly through the network.
double calibration_loss(const LinearNetwork& net, const CalibrationSet& calib);
/// sum_j ||b_j + L_j delta a_j||^2, the objective's model of the loss after adding `merged_delta`.
double linearized_loss(const LayerLinearization& lin, const Matrix& merged_delta);

/// Checks the deltas share `layer`-compatible shapes; returns the common layer index.
int common_layer(const std::vector<ResidualUpdate>& deltas);

}  // namespace qpmerge
