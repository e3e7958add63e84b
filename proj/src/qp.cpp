#include "qpmerge/qp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace qpmerge {

const char* to_string(BasisOrigin origin) {
    switch (origin) {
        case BasisOrigin::standard: return "standard";
        case BasisOrigin::eigen_s: return "eigen";
        case BasisOrigin::svd_residuals: return "svd";
        case BasisOrigin::random: return "random";
        case BasisOrigin::custom: break;
    }
    return "custom";
}

std::string OrthonormalBasis::id() const {
    if (origin == BasisOrigin::random) return "random:" + std::to_string(seed);
    return to_string(origin);
}

double OrthonormalBasis::orthonormality_error() const {
    const Matrix gram = columns.transpose() * columns;
    return (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
}

OrthonormalBasis standard_basis(Eigen::Index dim) {
    return {Matrix::Identity(dim, dim), BasisOrigin::standard, 0, false};
}

void CalibrationSet::validate() const {
    if (inputs.empty()) throw InvalidArgument("calibration set is empty");
    if (inputs.size() != targets.size())
        throw DimensionError("calibration set has " + std::to_string(inputs.size()) + " inputs but " +
                             std::to_string(targets.size()) + " targets");
    if (!tasks.empty() && tasks.size() != inputs.size())
        throw DimensionError("calibration task labels do not match sample count");
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        if (inputs[j].size() != inputs.front().size() || targets[j].size() != targets.front().size())
            throw DimensionError("calibration sample " + std::to_string(j) + " has non-uniform dimension");
        if (!inputs[j].allFinite() || !targets[j].allFinite())
            throw NumericalError("calibration sample " + std::to_string(j) + " is not finite");
    }
}

CalibrationSet CalibrationSet::subset(int task) const {
    CalibrationSet out;
    for (std::size_t j = 0; j < inputs.size(); ++j) {
        if (!tasks.empty() && tasks[j] != task) continue;
        out.inputs.push_back(inputs[j]);
        out.targets.push_back(targets[j]);
        out.tasks.push_back(task);
    }
    return out;
}

Vector MergeCoefficients::flat() const { return flatten_coefficients(values); }

Vector flatten_coefficients(const Matrix& values) {
    Vector flat(values.size());
    for (Eigen::Index k = 0; k < values.rows(); ++k)
        for (Eigen::Index p = 0; p < values.cols(); ++p) flat[k * values.cols() + p] = values(k, p);
    return flat;
}

Matrix unflatten_coefficients(const Vector& flat, int tasks, int directions) {
    if (flat.size() != static_cast<Eigen::Index>(tasks) * directions)
        throw DimensionError("coefficient vector length does not match tasks x directions");
    Matrix values(tasks, directions);
    for (int k = 0; k < tasks; ++k)
        for (int p = 0; p < directions; ++p) values(k, p) = flat[static_cast<Eigen::Index>(k) * directions + p];
    return values;
}

std::vector<Vector> base_residuals(const LinearNetwork& net, const CalibrationSet& calib) {
    calib.validate();
    std::vector<Vector> b;
    b.reserve(calib.size());
    for (std::size_t j = 0; j < calib.size(); ++j) {
        Vector out = forward(net, calib.inputs[j]);
        if (out.size() != calib.targets[j].size())
            throw DimensionError("target " + std::to_string(j) + " has dimension " +
                                 std::to_string(calib.targets[j].size()) + ", network output is " +
                                 std::to_string(out.size()));
        b.push_back(out - calib.targets[j]);
    }
    return b;
}

LayerLinearization linearize_layer(const LinearNetwork& net, int layer, const CalibrationSet& calib) {
    check_layer_index(net, layer);
    LayerLinearization lin;
    lin.layer = layer;
    lin.residuals = base_residuals(net, calib);
    lin.inputs.reserve(calib.size());
    lin.downstream.reserve(calib.size());
    for (std::size_t j = 0; j < calib.size(); ++j) {
        lin.inputs.push_back(layer_input(net, layer, calib.inputs[j]));
        DownstreamMap map = linearize_downstream(net, layer, calib.inputs[j]);
        lin.exact = lin.exact && map.kind == DownstreamKind::exact;
        lin.downstream.push_back(std::move(map.matrix));
    }
    return lin;
}

int common_layer(const std::vector<ResidualUpdate>& deltas) {
    if (deltas.empty()) throw InvalidArgument("no residual updates given");
    for (const auto& d : deltas) {
        if (d.layer != deltas.front().layer)
            throw InvalidArgument("residual updates target different layers (" + std::to_string(d.layer) + " vs " +
                                  std::to_string(deltas.front().layer) + ")");
        if (d.delta.rows() != deltas.front().delta.rows() || d.delta.cols() != deltas.front().delta.cols())
            throw DimensionError("residual updates have different shapes");
        if (!d.delta.allFinite()) throw NumericalError("residual update has non-finite entries");
    }
    return deltas.front().layer;
}

namespace {

void check_deltas_against(const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas) {
    if (lin.size() == 0) throw InvalidArgument("calibration set is empty");
    const int layer = common_layer(deltas);
    if (layer != lin.layer)
        throw InvalidArgument("residual updates target layer " + std::to_string(layer) + ", objective built for layer " +
                              std::to_string(lin.layer));
    if (deltas.front().delta.cols() != lin.inputs.front().size() ||
        deltas.front().delta.rows() != lin.downstream.front().cols())
        throw DimensionError("residual update shape does not match layer " + std::to_string(layer));
}

void symmetrize(Matrix& h) { h = 0.5 * (h + h.transpose()).eval(); }

}  // namespace

QuadraticObjective build_diagonal_qp(const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas) {
    check_deltas_against(lin, deltas);
    const int tasks = static_cast<int>(deltas.size());
    const Eigen::Index r = deltas.front().delta.rows();
    const Eigen::Index c = lin.downstream.front().rows();

    QuadraticObjective qp;
    qp.tasks = tasks;
    qp.directions = static_cast<int>(r);
    qp.linearized = !lin.exact;
    qp.hessian = Matrix::Zero(tasks * r, tasks * r);
    qp.linear = Vector::Zero(tasks * r);

    Matrix a(c, tasks * r);
    for (std::size_t j = 0; j < lin.size(); ++j) {
        for (int k = 0; k < tasks; ++k) {
            const Vector rk = deltas[k].delta * lin.inputs[j];
            a.middleCols(k * r, r) = lin.downstream[j] * rk.asDiagonal();
        }
        qp.hessian.noalias() += 2.0 * a.transpose() * a;
        qp.linear.noalias() += 2.0 * a.transpose() * lin.residuals[j];
        qp.constant += lin.residuals[j].squaredNorm();
    }
    symmetrize(qp.hessian);
    return qp;
}

QuadraticObjective build_diagonal_qp(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                                     const CalibrationSet& calib) {
    const int layer = common_layer(deltas);
    return build_diagonal_qp(linearize_layer(net, layer, calib), deltas);
}

QuadraticObjective build_general_basis_qp(const LayerLinearization& lin, const std::vector<ResidualUpdate>& deltas,
                                          const OrthonormalBasis& basis) {
    check_deltas_against(lin, deltas);
    const Eigen::Index r = deltas.front().delta.rows();
    if (basis.dim() != r)
        throw DimensionError("basis lives in R^" + std::to_string(basis.dim()) + ", residual rows are " +
                             std::to_string(r));
    if (basis.size() == 0) throw InvalidArgument("basis has no directions");
    if (basis.orthonormality_error() > 1e-10) throw InvalidArgument("basis columns are not orthonormal");

    const int tasks = static_cast<int>(deltas.size());
    const int dirs = static_cast<int>(basis.size());
    const Matrix& q = basis.columns;

    QuadraticObjective qp;
    qp.tasks = tasks;
    qp.directions = dirs;
    qp.linearized = !lin.exact;
    qp.hessian = Matrix::Zero(tasks * dirs, tasks * dirs);
    qp.linear = Vector::Zero(tasks * dirs);

    Matrix alpha(tasks, dirs);
    for (std::size_t j = 0; j < lin.size(); ++j) {
        // projected activations, projected residuals and the coupling G for sample j
        for (int k = 0; k < tasks; ++k) alpha.row(k) = (q.transpose() * (deltas[k].delta * lin.inputs[j])).transpose();
        const Matrix lq = lin.downstream[j] * q;
        const Vector beta = lq.transpose() * lin.residuals[j];
        const Matrix coupling = lq.transpose() * lq;
        for (int k = 0; k < tasks; ++k) {
            for (int p = 0; p < dirs; ++p) {
                const Eigen::Index row = qp.flat_index(k, p);
                qp.linear[row] += 2.0 * alpha(k, p) * beta[p];
                for (int k2 = 0; k2 < tasks; ++k2)
                    for (int p2 = 0; p2 < dirs; ++p2)
                        qp.hessian(row, qp.flat_index(k2, p2)) += 2.0 * alpha(k, p) * alpha(k2, p2) * coupling(p, p2);
            }
        }
        qp.constant += lin.residuals[j].squaredNorm();
    }
    symmetrize(qp.hessian);
    return qp;
}

QuadraticObjective build_general_basis_qp(const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                                          const CalibrationSet& calib, const OrthonormalBasis& basis) {
    const int layer = common_layer(deltas);
    return build_general_basis_qp(linearize_layer(net, layer, calib), deltas, basis);
}

double objective_value(const QuadraticObjective& qp, const Vector& d) {
    if (d.size() != qp.dim())
        throw DimensionError("coefficient vector has length " + std::to_string(d.size()) + ", objective expects " +
                             std::to_string(qp.dim()));
    return 0.5 * d.dot(qp.hessian * d) + qp.linear.dot(d) + qp.constant;
}

Vector objective_gradient(const QuadraticObjective& qp, const Vector& d) {
    if (d.size() != qp.dim()) throw DimensionError("coefficient vector length does not match objective");
    return qp.hessian * d + qp.linear;
}

MergeCoefficients solve_unconstrained(const QuadraticObjective& qp, double cutoff) {
    if (!qp.hessian.allFinite() || !qp.linear.allFinite() || !std::isfinite(qp.constant))
        throw NumericalError("objective has non-finite entries");
    const Eigen::Index n = qp.dim();
    MergeCoefficients out;
    out.values = Matrix::Zero(qp.tasks, qp.directions);
    if (n == 0) return out;

    Eigen::SelfAdjointEigenSolver<Matrix> eig(qp.hessian);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition of the Hessian failed");
    const Vector& lambda = eig.eigenvalues();
    const Matrix& v = eig.eigenvectors();
    const double lambda_max = lambda.cwiseAbs().maxCoeff();

    Vector d = Vector::Zero(n);
    Vector g_range = Vector::Zero(n);
    Eigen::Index rank = 0;
    if (lambda_max > 0.0) {
        for (Eigen::Index i = 0; i < n; ++i) {
            if (lambda[i] <= cutoff * lambda_max) continue;
            const double coord = v.col(i).dot(qp.linear);
            d -= (coord / lambda[i]) * v.col(i);
            g_range += coord * v.col(i);
            ++rank;
        }
    }
    const double g_norm = qp.linear.norm();
    out.info.rank = rank;
    out.info.range_residual = g_norm > 0.0 ? (qp.linear - g_range).norm() / g_norm : 0.0;
    out.info.outside_range = out.info.range_residual > 1e-8;
    if (!d.allFinite()) throw NumericalError("closed-form solve produced non-finite coefficients");
    out.values = unflatten_coefficients(d, qp.tasks, qp.directions);
    out.info.objective = objective_value(qp, d);
    return out;
}

MergeCoefficients solve_box_constrained(const QuadraticObjective& qp, double lo, double hi, const BoxOptions& opts) {
    if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi))
        throw InvalidArgument("box bounds must satisfy lo < hi");
    if (opts.steps < 1) throw InvalidArgument("box solver needs at least one step");
    if (!(opts.step_size > 0.0)) throw InvalidArgument("step size must be positive");
    if (!qp.hessian.allFinite() || !qp.linear.allFinite()) throw NumericalError("objective has non-finite entries");

    const Eigen::Index n = qp.dim();
    Vector x;
    if (opts.init) {
        if (opts.init->size() != n) throw DimensionError("initial point length does not match objective");
        x = *opts.init;
    } else {
        x = Vector::Constant(n, qp.tasks > 0 ? 1.0 / qp.tasks : 0.0);
    }
    x = x.cwiseMax(lo).cwiseMin(hi);

    Vector m = Vector::Zero(n);
    Vector v = Vector::Zero(n);
    double current = objective_value(qp, x);
    double b1t = 1.0;
    double b2t = 1.0;
    for (int t = 1; t <= opts.steps; ++t) {
        const Vector grad = objective_gradient(qp, x);
        m = opts.beta1 * m + (1.0 - opts.beta1) * grad;
        v = opts.beta2 * v + (1.0 - opts.beta2) * grad.cwiseProduct(grad);
        b1t *= opts.beta1;
        b2t *= opts.beta2;
        const Vector m_hat = m / (1.0 - b1t);
        const Vector v_hat = v / (1.0 - b2t);
        const Vector step = m_hat.array() / (v_hat.array().sqrt() + opts.epsilon);
        Vector candidate = (x - opts.step_size * step).cwiseMax(lo).cwiseMin(hi);
        const double value = objective_value(qp, candidate);
        if (opts.accept_only_descent && value > current) continue;
        x = std::move(candidate);
        current = value;
    }
    if (!x.allFinite()) throw NumericalError("box solver diverged");

    MergeCoefficients out;
    out.values = unflatten_coefficients(x, qp.tasks, qp.directions);
    out.info.iterations = opts.steps;
    out.info.objective = current;
    return out;
}

Vector solve_1d(const Vector& m, double beta) {
    const double norm2 = m.squaredNorm();
    if (norm2 == 0.0) return Vector::Zero(m.size());
    return (-beta / norm2) * m;
}

Matrix merge_diagonal(const std::vector<ResidualUpdate>& deltas, const Matrix& coeffs) {
    common_layer(deltas);
    if (coeffs.rows() != static_cast<Eigen::Index>(deltas.size()) || coeffs.cols() != deltas.front().delta.rows())
        throw DimensionError("diagonal coefficients must be tasks x rows");
    Matrix merged = Matrix::Zero(deltas.front().delta.rows(), deltas.front().delta.cols());
    for (std::size_t k = 0; k < deltas.size(); ++k)
        merged.noalias() += coeffs.row(static_cast<Eigen::Index>(k)).transpose().asDiagonal() * deltas[k].delta;
    return merged;
}

Matrix merge_in_basis(const std::vector<ResidualUpdate>& deltas, const Matrix& coeffs, const OrthonormalBasis& basis) {
    common_layer(deltas);
    if (coeffs.rows() != static_cast<Eigen::Index>(deltas.size()) || coeffs.cols() != basis.size())
        throw DimensionError("basis coefficients must be tasks x basis size");
    if (basis.dim() != deltas.front().delta.rows()) throw DimensionError("basis dimension does not match residual rows");
    const Matrix& q = basis.columns;
    Matrix merged = Matrix::Zero(deltas.front().delta.rows(), deltas.front().delta.cols());
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        const Matrix projected = q.transpose() * deltas[k].delta;
        merged.noalias() += q * (coeffs.row(static_cast<Eigen::Index>(k)).transpose().asDiagonal() * projected);
    }
    return merged;
}

double calibration_loss(const LinearNetwork& net, const CalibrationSet& calib) {
    double total = 0.0;
    for (const auto& b : base_residuals(net, calib)) total += b.squaredNorm();
    return total;
}

double linearized_loss(const LayerLinearization& lin, const Matrix& merged_delta) {
    double total = 0.0;
    for (std::size_t j = 0; j < lin.size(); ++j)
        total += (lin.residuals[j] + lin.downstream[j] * (merged_delta * lin.inputs[j])).squaredNorm();
    return total;
}

}  // namespace qpmerge
