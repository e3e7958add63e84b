#pragma once

// Heuristic merging rules. Every rule except Fisher merging is a fixed or
// random point of the diagonal-mask family, so each exposes its per-task row
// coefficients (tasks x rows) next to the merged delta.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "qpmerge/netcore.hpp"
#include "qpmerge/qp.hpp"

namespace qpmerge {

/// Per-parameter non-negative precisions, same shape as the layer weight.
struct FisherDiagonal {
    Matrix precision;
};

Matrix soup_coefficients(const std::vector<ResidualUpdate>& deltas);
Matrix task_arithmetic_coefficients(const std::vector<ResidualUpdate>& deltas, const std::vector<double>& lambdas);
Matrix dare_coefficients(const std::vector<ResidualUpdate>& deltas, double keep_prob, std::uint64_t seed);
Matrix ties_coefficients(const std::vector<ResidualUpdate>& deltas, double density);

Matrix soup(const std::vector<ResidualUpdate>& deltas);
Matrix task_arithmetic(const std::vector<ResidualUpdate>& deltas, const std::vector<double>& lambdas);
Matrix dare_row_uniform(const std::vector<ResidualUpdate>& deltas, double keep_prob, std::uint64_t seed);
Matrix ties_rowwise(const std::vector<ResidualUpdate>& deltas, double density);

/// Precision-weighted mean (sum F_k)^-1 sum F_k theta_k, elementwise. Coordinates
/// with zero total precision fall back to the unweighted mean.
Matrix fisher_merge(const std::vector<Matrix>& thetas, const std::vector<FisherDiagonal>& fishers);

/// Fisher merge of full layer weights W + delta_k, returned as a delta relative to W.
Matrix fisher_merge_delta(const Matrix& base_weight, const std::vector<ResidualUpdate>& deltas,
                          const std::vector<FisherDiagonal>& fishers);

/// Diagonal Gaussian-likelihood Fisher of the network outputs with respect to
/// layer `layer`'s weights, sum_j sum_o (d h_o(x_j) / d W)^2, evaluated at `net`.
FisherDiagonal output_fisher(const LinearNetwork& net, int layer, const CalibrationSet& calib);

struct BaselineParams {
    std::vector<double> lambdas;  // empty: 1.0 for every task
    double keep_prob = 0.5;
    double density = 0.5;
    std::uint64_t seed = 0;
};

/// Names accepted by `baseline_merge`.
bool is_baseline(const std::string& method);
/// True for rules that are points of the diagonal-mask family.
bool is_diagonal_feasible(const std::string& method);

/// Row coefficients of a diagonal-feasible baseline; empty for fisher.
std::optional<Matrix> baseline_coefficients(const std::string& method, const std::vector<ResidualUpdate>& deltas,
                                            const BaselineParams& params);

/// Merged delta at one layer for a baseline named soup | ta | dare | ties | fisher.
/// `net` and `calib` are only used by fisher (to derive per-task Fishers at each fine-tune).
Matrix baseline_merge(const std::string& method, const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                      const CalibrationSet& calib, const BaselineParams& params);

}  // namespace qpmerge
