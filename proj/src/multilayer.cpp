#include "qpmerge/multilayer.hpp"

#include <algorithm>
#include <set>

namespace qpmerge {
namespace {

const std::vector<ResidualUpdate>& deltas_at(const DeltasByLayer& deltas, int layer) {
    auto it = deltas.find(layer);
    if (it == deltas.end() || it->second.empty())
        throw InvalidArgument("no residual updates for layer " + std::to_string(layer));
    return it->second;
}

void check_deltas(const LinearNetwork& net, const DeltasByLayer& deltas) {
    if (deltas.empty()) throw InvalidArgument("nothing to merge: no layers given");
    for (const auto& [layer, list] : deltas) {
        check_layer_index(net, layer);
        if (common_layer(list) != layer) throw InvalidArgument("residual filed under the wrong layer");
        const Matrix& w = net.weight(layer);
        if (list.front().delta.rows() != w.rows() || list.front().delta.cols() != w.cols())
            throw DimensionError("residuals at layer " + std::to_string(layer) + " do not match the weight shape");
    }
}

// One QP step at `layer` on the current network. Returns the updated network.
LinearNetwork qp_step(const LinearNetwork& current, int layer, const std::vector<ResidualUpdate>& list,
                      const CalibrationSet& calib, const QpSolverOptions& solver, LayerRecord& record) {
    const LayerLinearization lin = linearize_layer(current, layer, calib);
    const QuadraticObjective qp = build_diagonal_qp(lin, list);
    const MergeCoefficients coeffs = solve_qp(qp, solver);
    record.objective_before = qp.constant;
    record.objective_after = objective_value(qp, coeffs.flat());
    record.coefficients = coeffs.values;
    return apply_merged_residual(current, layer, merge_diagonal(list, coeffs.values));
}

}  // namespace

void MergePlan::validate() const {
    if (steps.empty()) throw InvalidArgument("merge plan has no steps");
    for (std::size_t i = 1; i < steps.size(); ++i) {
        const bool ok = order == LayerOrder::bottom_up ? steps[i].layer > steps[i - 1].layer
                                                       : steps[i].layer < steps[i - 1].layer;
        if (!ok) throw InvalidArgument("merge plan layers must be strictly monotone in application order");
    }
}

MergeCoefficients solve_qp(const QuadraticObjective& qp, const QpSolverOptions& solver) {
    if (solver.kind == SolverKind::box) return solve_box_constrained(qp, solver.lo, solver.hi, solver.box);
    return solve_unconstrained(qp);
}

void fill_evaluation(MergeReport& report, const LinearNetwork& net, const CalibrationSet& calib) {
    const auto residuals = base_residuals(net, calib);
    std::map<int, std::pair<double, int>> per_task;
    double total = 0.0;
    for (std::size_t j = 0; j < residuals.size(); ++j) {
        const double e = residuals[j].squaredNorm();
        total += e;
        if (!calib.tasks.empty()) {
            auto& slot = per_task[calib.tasks[j]];
            slot.first += e;
            slot.second += 1;
        }
    }
    report.final_loss = total;
    report.final_mse = total / static_cast<double>(residuals.size());
    report.task_mse.clear();
    for (const auto& [task, acc] : per_task) report.task_mse[task] = acc.first / acc.second;
}

MergeResult execute_plan(const LinearNetwork& net, const MergePlan& plan, const DeltasByLayer& deltas,
                         const CalibrationSet& calib, const QpSolverOptions& solver) {
    net.validate();
    calib.validate();
    plan.validate();
    check_deltas(net, deltas);

    MergeResult result{net, {}};
    for (const auto& step : plan.steps) {
        const auto& list = deltas_at(deltas, step.layer);
        LayerRecord record;
        record.layer = step.layer;
        record.method = step.method;
        if (step.method == "qp-diag") {
            result.network = qp_step(result.network, step.layer, list, calib, solver, record);
        } else {
            const LayerLinearization lin = linearize_layer(result.network, step.layer, calib);
            const Matrix merged = baseline_merge(step.method, result.network, list, calib, step.params);
            record.objective_before = linearized_loss(lin, Matrix::Zero(merged.rows(), merged.cols()));
            record.objective_after = linearized_loss(lin, merged);
            result.network = apply_merged_residual(result.network, step.layer, merged);
        }
        record.loss_after = calibration_loss(result.network, calib);
        result.report.layers.push_back(std::move(record));
    }
    fill_evaluation(result.report, result.network, calib);
    return result;
}

MergeResult sequential_merge(const LinearNetwork& net, const DeltasByLayer& deltas, const CalibrationSet& calib,
                             const SequentialOptions& opts) {
    if (calib.size() == 0) throw InvalidArgument("calibration set is empty");
    MergePlan plan;
    plan.order = opts.order;
    for (const auto& [layer, list] : deltas) plan.steps.push_back({layer, "qp-diag", {}});
    if (opts.order == LayerOrder::top_down) std::reverse(plan.steps.begin(), plan.steps.end());
    return execute_plan(net, plan, deltas, calib, opts.solver);
}

MergeResult hybrid_refine(const LinearNetwork& net, const DeltasByLayer& deltas, const CalibrationSet& calib,
                          const std::string& init_method, const BaselineParams& params,
                          const std::vector<int>& refine_layers, const QpSolverOptions& solver) {
    if (!is_baseline(init_method)) throw InvalidArgument("unknown merge method '" + init_method + "'");
    net.validate();
    calib.validate();
    check_deltas(net, deltas);
    std::set<int> refine(refine_layers.begin(), refine_layers.end());
    for (int layer : refine)
        if (!deltas.count(layer)) throw InvalidArgument("refine layer " + std::to_string(layer) + " has no residuals");

    MergeResult result{net, {}};
    std::map<int, Matrix> start;
    // baseline deltas are derived from the base network at every layer
    for (const auto& [layer, list] : deltas) {
        LayerRecord record;
        record.layer = layer;
        record.method = init_method;
        const LayerLinearization lin = linearize_layer(result.network, layer, calib);
        const Matrix merged = baseline_merge(init_method, net, list, calib, params);
        record.objective_before = linearized_loss(lin, Matrix::Zero(merged.rows(), merged.cols()));
        record.objective_after = linearized_loss(lin, merged);
        if (auto coeffs = baseline_coefficients(init_method, list, params)) {
            record.coefficients = *coeffs;
            start[layer] = *coeffs;
        }
        result.network = apply_merged_residual(result.network, layer, merged);
        record.loss_after = calibration_loss(result.network, calib);
        result.report.layers.push_back(std::move(record));
    }
    for (int layer : refine) {
        LayerRecord record;
        record.layer = layer;
        record.method = "qp-refine";
        result.network = qp_step(result.network, layer, deltas.at(layer), calib, solver, record);
        // report total coefficients relative to the unmerged layer when the baseline has them
        if (auto it = start.find(layer); it != start.end()) record.coefficients += it->second;
        record.loss_after = calibration_loss(result.network, calib);
        result.report.layers.push_back(std::move(record));
    }
    fill_evaluation(result.report, result.network, calib);
    return result;
}

double interaction_error(const LinearNetwork& net, const ResidualUpdate& lower, const ResidualUpdate& upper,
                         const CalibrationSet& calib, double scale) {
    if (lower.layer == upper.layer) throw InvalidArgument("interaction error needs two distinct layers");
    calib.validate();
    const LinearNetwork both =
        apply_merged_residual(apply_merged_residual(net, lower.layer, scale * lower.delta), upper.layer, scale * upper.delta);
    double total = 0.0;
    for (const auto& x : calib.inputs) {
        const Vector base = forward(net, x);
        Vector first_order = base;
        for (const ResidualUpdate* u : {&lower, &upper}) {
            const Vector z = layer_input(net, u->layer, x);
            first_order += linearize_downstream(net, u->layer, x).matrix * (scale * (u->delta * z));
        }
        total += (forward(both, x) - first_order).norm();
    }
    return total / static_cast<double>(calib.size());
}

}  // namespace qpmerge
