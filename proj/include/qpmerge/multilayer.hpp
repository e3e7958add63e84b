#pragma once

// Layer-by-layer merging. Each step rebuilds the single-layer objective from the
// current partially merged network, so every subproblem is an exact convex QP
// for linear networks; the sequence as a whole is greedy.

#include <map>
#include <string>
#include <vector>

#include "qpmerge/baselines.hpp"
#include "qpmerge/netcore.hpp"
#include "qpmerge/qp.hpp"

namespace qpmerge {

using DeltasByLayer = std::map<int, std::vector<ResidualUpdate>>;

enum class SolverKind { exact, box };

struct QpSolverOptions {
    SolverKind kind = SolverKind::exact;
    double lo = 0.0;
    double hi = 1.0;
    BoxOptions box;
};

enum class LayerOrder { bottom_up, top_down };

struct PlanStep {
    int layer = 1;
    std::string method = "qp-diag";  // qp-diag or a baseline name
    BaselineParams params;
};

struct MergePlan {
    std::vector<PlanStep> steps;
    LayerOrder order = LayerOrder::bottom_up;

    /// Layer indices must be strictly monotone in the declared order.
    void validate() const;
};

struct LayerRecord {
    int layer = 0;
    std::string method;
    double objective_before = 0.0;  // objective at zero coefficients (layer left as is)
    double objective_after = 0.0;
    double loss_after = 0.0;        // exact calibration loss of the network after this step
    Matrix coefficients;            // tasks x rows; empty for non-diagonal methods
};

struct MergeReport {
    std::vector<LayerRecord> layers;
    double final_loss = 0.0;
    double final_mse = 0.0;
    std::map<int, double> task_mse;
};

/// Calibration loss, pooled MSE (sum_j ||e_j||^2 / n) and per-task MSE of `net`.
void fill_evaluation(MergeReport& report, const LinearNetwork& net, const CalibrationSet& calib);

struct MergeResult {
    LinearNetwork network;
    MergeReport report;
};

/// Runs a plan step by step, rebuilding residuals, layer inputs and downstream
/// maps from the partially merged network before each step.
MergeResult execute_plan(const LinearNetwork& net, const MergePlan& plan, const DeltasByLayer& deltas,
                         const CalibrationSet& calib, const QpSolverOptions& solver = {});

struct SequentialOptions {
    QpSolverOptions solver;
    LayerOrder order = LayerOrder::bottom_up;
};

MergeResult sequential_merge(const LinearNetwork& net, const DeltasByLayer& deltas, const CalibrationSet& calib,
                             const SequentialOptions& opts = {});

/// Baseline merge at every layer, then a QP refinement at each refine layer in
/// ascending order. The refinement solves over the original deltas re-centred at
/// the baseline-merged weights, so zero coefficients keep the baseline state.
MergeResult hybrid_refine(const LinearNetwork& net, const DeltasByLayer& deltas, const CalibrationSet& calib,
                          const std::string& init_method, const BaselineParams& params,
                          const std::vector<int>& refine_layers, const QpSolverOptions& solver = {});

/// Mean over calibration inputs of ||h(W_a + e d_a, W_b + e d_b) - h - first-order terms||.
double interaction_error(const LinearNetwork& net, const ResidualUpdate& lower, const ResidualUpdate& upper,
                         const CalibrationSet& calib, double scale);

/// Solves one single-layer diagonal QP with the configured solver.
MergeCoefficients solve_qp(const QuadraticObjective& qp, const QpSolverOptions& solver);

}  // namespace qpmerge
