#pragma once

// Single-layer method dispatch, the basis-geometry sweep and the method
// comparison table. The CLI is a thin layer over these.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qpmerge/basis.hpp"
#include "qpmerge/baselines.hpp"
#include "qpmerge/multilayer.hpp"

namespace qpmerge {

enum class BasisKind { eigen, standard, svd, random };

BasisKind basis_kind_from_string(const std::string& name);

struct MethodConfig {
    BaselineParams baseline;
    BasisKind basis = BasisKind::eigen;
    int basis_size = 0;  // 0: min(r, c)
    QpSolverOptions solver;
};

struct SingleLayerMerge {
    Matrix merged_delta;
    std::optional<Matrix> coefficients;  // tasks x directions when the method has them
    std::optional<SubspaceDiagnostics> diagnostics;
    std::string basis_id = "standard";
};

/// Residual-space basis of the requested kind for one merge layer.
OrthonormalBasis make_basis(BasisKind kind, const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas,
                            int p, std::uint64_t seed);

/// base | soup | ta | dare | ties | fisher | qp-diag | qp-basis at one layer.
SingleLayerMerge merge_single_layer(const std::string& method, const LinearNetwork& net,
                                    const std::vector<ResidualUpdate>& deltas, const CalibrationSet& calib,
                                    const MethodConfig& config);

bool is_known_method(const std::string& method);

struct SweepOptions {
    int p_min = 1;
    int p_max = 0;  // 0: min(r, c)
    int random_bases = 20;
    std::uint64_t seed = 0;
};

struct SweepRow {
    std::string basis;
    int p = 0;
    double fraction = 0.0;
    double relaxed_loss = 0.0;
    double qp_mse = 0.0;   // linearised objective at the closed-form optimum, per sample
    double gap = 0.0;
    double net_mse = 0.0;  // exact network MSE after applying the merge
    bool approximate = false;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::vector<std::string> warnings;
};

/// For every p and basis family (eigen, standard, svd, random x seeds), the
/// subspace diagnostics and the general-basis QP optimum.
SweepResult geometry_sweep(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                           const CalibrationSet& calib, const SweepOptions& opts);

struct CompareOptions {
    std::vector<double> lambda_grid{0.25, 0.5, 0.75, 1.0};
    double keep_prob = 0.5;
    double density = 0.5;
    std::uint64_t seed = 0;
    int basis_size = 0;
    QpSolverOptions solver;
};

struct CompareRow {
    std::string method;
    int layer = 0;
    double objective = 0.0;  // linearised calibration objective of the merged layer
    double mse = 0.0;        // exact pooled MSE
    std::map<int, double> task_mse;
    std::optional<double> fraction;
    bool diagonal_feasible = false;
    bool failed = false;
    std::string error;
};

struct CompareResult {
    std::vector<CompareRow> rows;
    bool dominance_ok = true;
    std::string dominance_message;
};

CompareResult compare_methods(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                              const CalibrationSet& calib, const CompareOptions& opts);

/// Pooled and per-task MSE (sum_j ||h(x_j) - y_j||^2 / n), plus argmax accuracy
/// when every target is one-hot.
struct EvalMetrics {
    double mse = 0.0;
    std::map<int, double> task_mse;
    std::optional<double> accuracy;
    std::map<int, double> task_accuracy;
};

EvalMetrics evaluate(const LinearNetwork& net, const CalibrationSet& calib);

}  // namespace qpmerge
