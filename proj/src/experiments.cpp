#include "qpmerge/experiments.hpp"

#include "qpmerge/datastore.hpp"

#include <algorithm>
#include <sstream>

namespace qpmerge {
namespace {

int default_basis_size(const std::vector<ResidualUpdate>& deltas, const LayerLinearization& lin) {
    const auto r = deltas.front().delta.rows();
    const auto c = lin.downstream.front().rows();
    return static_cast<int>(std::min(r, c));
}

std::string format_lambda(double lambda) {
    std::ostringstream os;
    os << lambda;
    return os.str();
}

}  // namespace

BasisKind basis_kind_from_string(const std::string& name) {
    if (name == "eigen") return BasisKind::eigen;
    if (name == "standard") return BasisKind::standard;
    if (name == "svd") return BasisKind::svd;
    if (name == "random") return BasisKind::random;
    throw InvalidArgument("unknown basis kind '" + name + "'");
}

bool is_known_method(const std::string& method) {
    return method == "base" || method == "qp-diag" || method == "qp-basis" || is_baseline(method);
}

OrthonormalBasis make_basis(BasisKind kind, const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas,
                            int p, std::uint64_t seed) {
    switch (kind) {
        case BasisKind::eigen: return eigen_residual_basis(lin, p);
        case BasisKind::standard: return ranked_standard_basis(lin, p);
        case BasisKind::svd: return svd_basis(deltas, p);
        case BasisKind::random: return random_basis(deltas.front().delta.rows(), p, seed);
    }
    throw InvalidArgument("unknown basis kind");
}

SingleLayerMerge merge_single_layer(const std::string& method, const LinearNetwork& net,
                                    const std::vector<ResidualUpdate>& deltas, const CalibrationSet& calib,
                                    const MethodConfig& config) {
    if (!is_known_method(method)) throw InvalidArgument("unknown merge method '" + method + "'");
    const int layer = common_layer(deltas);
    SingleLayerMerge out;
    const Eigen::Index tasks = static_cast<Eigen::Index>(deltas.size());
    const Eigen::Index rows = deltas.front().delta.rows();

    if (method == "base") {
        out.merged_delta = Matrix::Zero(rows, deltas.front().delta.cols());
        out.coefficients = Matrix::Zero(tasks, rows);
        return out;
    }
    if (is_baseline(method)) {
        out.merged_delta = baseline_merge(method, net, deltas, calib, config.baseline);
        out.coefficients = baseline_coefficients(method, deltas, config.baseline);
        if (method == "fisher") out.basis_id = "fisher";
        return out;
    }

    const LayerLinearization lin = linearize_layer(net, layer, calib);
    if (method == "qp-diag") {
        const QuadraticObjective qp = build_diagonal_qp(lin, deltas);
        const MergeCoefficients coeffs = solve_qp(qp, config.solver);
        out.merged_delta = merge_diagonal(deltas, coeffs.values);
        out.coefficients = coeffs.values;
        out.diagnostics = subspace_diagnostics(lin, standard_basis(rows));
        return out;
    }

    const int p = config.basis_size > 0 ? config.basis_size : default_basis_size(deltas, lin);
    const OrthonormalBasis basis = make_basis(config.basis, lin, deltas, p, config.baseline.seed);
    const QuadraticObjective qp = build_general_basis_qp(lin, deltas, basis);
    const MergeCoefficients coeffs = solve_qp(qp, config.solver);
    out.merged_delta = merge_in_basis(deltas, coeffs.values, basis);
    out.coefficients = coeffs.values;
    out.diagnostics = subspace_diagnostics(lin, basis);
    out.basis_id = basis.id();
    return out;
}

SweepResult geometry_sweep(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                           const CalibrationSet& calib, const SweepOptions& opts) {
    const int layer = common_layer(deltas);
    const LayerLinearization lin = linearize_layer(net, layer, calib);
    const int limit = default_basis_size(deltas, lin);
    SweepResult result;

    int p_min = std::max(1, opts.p_min);
    int p_max = opts.p_max > 0 ? opts.p_max : limit;
    if (p_max > limit) {
        result.warnings.push_back("p range clipped to " + std::to_string(limit) + " (min of residual rows and outputs)");
        p_max = limit;
    }
    if (p_min > p_max) {
        result.warnings.push_back("empty p range after clipping");
        return result;
    }
    const double n = static_cast<double>(lin.size());

    struct Family {
        std::string name;
        BasisKind kind;
        std::uint64_t seed;
    };
    std::vector<Family> families{{"eigen", BasisKind::eigen, 0}, {"standard", BasisKind::standard, 0}, {"svd", BasisKind::svd, 0}};
    for (int i = 0; i < opts.random_bases; ++i)
        families.push_back({"random-" + std::to_string(i), BasisKind::random, derive_seed(opts.seed, static_cast<std::uint64_t>(i))});

    for (const auto& family : families) {
        for (int p = p_min; p <= p_max; ++p) {
            const OrthonormalBasis basis = make_basis(family.kind, lin, deltas, p, family.seed);
            if (basis.truncated)
                result.warnings.push_back(family.name + " basis reached only " + std::to_string(basis.size()) +
                                          " directions at p=" + std::to_string(p));
            SweepRow row;
            row.basis = family.name;
            row.p = p;
            if (basis.size() == 0) {
                const auto d = subspace_diagnostics(lin, OrthonormalBasis{Matrix::Zero(basis.dim(), 0)});
                row.fraction = 0.0;
                row.relaxed_loss = d.relaxed_loss;
                row.qp_mse = row.net_mse = calibration_loss(net, calib) / n;
                result.rows.push_back(row);
                continue;
            }
            const SubspaceDiagnostics diag = subspace_diagnostics(lin, basis);
            const QuadraticObjective qp = build_general_basis_qp(lin, deltas, basis);
            const MergeCoefficients coeffs = solve_unconstrained(qp);
            row.fraction = diag.fraction;
            row.relaxed_loss = diag.relaxed_loss;
            row.gap = diag.gap_vs_optimal;
            row.approximate = diag.approximate;
            row.qp_mse = objective_value(qp, coeffs.flat()) / n;
            row.net_mse =
                calibration_loss(apply_merged_residual(net, layer, merge_in_basis(deltas, coeffs.values, basis)), calib) / n;
            result.rows.push_back(row);
        }
    }
    return result;
}

CompareResult compare_methods(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                              const CalibrationSet& calib, const CompareOptions& opts) {
    const int layer = common_layer(deltas);
    const LayerLinearization lin = linearize_layer(net, layer, calib);

    struct Entry {
        std::string label;
        std::string method;
        MethodConfig config;
    };
    MethodConfig common;
    common.baseline.keep_prob = opts.keep_prob;
    common.baseline.density = opts.density;
    common.baseline.seed = derive_seed(opts.seed, 11);
    common.solver = opts.solver;
    common.basis_size = opts.basis_size;
    common.basis = BasisKind::eigen;

    std::vector<Entry> entries{{"base", "base", common}, {"soup", "soup", common}};
    for (double lambda : opts.lambda_grid) {
        Entry e{"ta:" + format_lambda(lambda), "ta", common};
        e.config.baseline.lambdas = {lambda};
        entries.push_back(e);
    }
    for (const char* m : {"dare", "ties", "fisher", "qp-diag", "qp-basis"}) entries.push_back({m, m, common});

    CompareResult result;
    for (const auto& e : entries) {
        CompareRow row;
        row.method = e.method == "qp-basis" ? "qp-basis:eigen" : e.label;
        row.layer = layer;
        row.diagonal_feasible = e.method == "base" || is_diagonal_feasible(e.method);
        try {
            const SingleLayerMerge m = merge_single_layer(e.method, net, deltas, calib, e.config);
            row.objective = linearized_loss(lin, m.merged_delta);
            const EvalMetrics metrics = evaluate(apply_merged_residual(net, layer, m.merged_delta), calib);
            row.mse = metrics.mse;
            row.task_mse = metrics.task_mse;
            if (e.method == "qp-basis" && m.diagnostics) row.fraction = m.diagnostics->fraction;
        } catch (const Error& err) {
            row.failed = true;
            row.error = err.what();
        }
        result.rows.push_back(std::move(row));
    }

    const auto qp_row = std::find_if(result.rows.begin(), result.rows.end(), [](const CompareRow& r) { return r.method == "qp-diag"; });
    if (qp_row != result.rows.end() && !qp_row->failed) {
        const Matrix zero = Matrix::Zero(deltas.front().delta.rows(), deltas.front().delta.cols());
        const double tol = 1e-10 * linearized_loss(lin, zero) + 1e-300;
        for (const auto& r : result.rows) {
            if (!r.diagonal_feasible || r.failed) continue;
            if (qp_row->objective > r.objective + tol) {
                result.dominance_ok = false;
                result.dominance_message = "qp-diag objective " + format_double(qp_row->objective) + " exceeds " +
                                           r.method + " objective " + format_double(r.objective);
            }
        }
    }
    return result;
}

EvalMetrics evaluate(const LinearNetwork& net, const CalibrationSet& calib) {
    calib.validate();
    EvalMetrics out;
    bool one_hot = true;
    for (const auto& y : calib.targets) {
        int ones = 0;
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            if (y[i] == 1.0) ++ones;
            else if (y[i] != 0.0) one_hot = false;
        }
        one_hot = one_hot && ones == 1;
    }

    std::map<int, std::pair<double, int>> per_task;
    std::map<int, int> task_hits;
    double total = 0.0;
    int hits = 0;
    for (std::size_t j = 0; j < calib.size(); ++j) {
        const Vector out_j = forward(net, calib.inputs[j]);
        if (out_j.size() != calib.targets[j].size()) throw DimensionError("model output does not match target dimension");
        const double e = (out_j - calib.targets[j]).squaredNorm();
        total += e;
        const int task = calib.tasks.empty() ? 0 : calib.tasks[j];
        per_task[task].first += e;
        per_task[task].second += 1;
        if (one_hot) {
            Eigen::Index pred = 0, truth = 0;
            out_j.maxCoeff(&pred);
            calib.targets[j].maxCoeff(&truth);
            if (pred == truth) {
                ++hits;
                ++task_hits[task];
            }
        }
    }
    out.mse = total / static_cast<double>(calib.size());
    for (const auto& [task, acc] : per_task) {
        out.task_mse[task] = acc.first / acc.second;
        if (one_hot) out.task_accuracy[task] = static_cast<double>(task_hits[task]) / acc.second;
    }
    if (one_hot) out.accuracy = static_cast<double>(hits) / static_cast<double>(calib.size());
    return out;
}

}  // namespace qpmerge
