#include "qpmerge/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace qpmerge {

Matrix soup_coefficients(const std::vector<ResidualUpdate>& deltas) {
    common_layer(deltas);
    const auto k = static_cast<Eigen::Index>(deltas.size());
    return Matrix::Constant(k, deltas.front().delta.rows(), 1.0 / static_cast<double>(k));
}

Matrix task_arithmetic_coefficients(const std::vector<ResidualUpdate>& deltas, const std::vector<double>& lambdas) {
    common_layer(deltas);
    if (lambdas.size() != deltas.size())
        throw InvalidArgument("task arithmetic needs one lambda per task (" + std::to_string(deltas.size()) + "), got " +
                              std::to_string(lambdas.size()));
    Matrix coeffs(static_cast<Eigen::Index>(deltas.size()), deltas.front().delta.rows());
    for (std::size_t k = 0; k < deltas.size(); ++k) coeffs.row(static_cast<Eigen::Index>(k)).setConstant(lambdas[k]);
    return coeffs;
}

Matrix dare_coefficients(const std::vector<ResidualUpdate>& deltas, double keep_prob, std::uint64_t seed) {
    common_layer(deltas);
    if (!(keep_prob > 0.0 && keep_prob <= 1.0)) throw InvalidArgument("DARE keep probability must lie in (0, 1]");
    std::mt19937_64 rng(seed);
    std::bernoulli_distribution keep(keep_prob);
    Matrix coeffs(static_cast<Eigen::Index>(deltas.size()), deltas.front().delta.rows());
    for (Eigen::Index k = 0; k < coeffs.rows(); ++k)
        for (Eigen::Index i = 0; i < coeffs.cols(); ++i) coeffs(k, i) = keep(rng) ? 1.0 / keep_prob : 0.0;
    return coeffs;
}

Matrix ties_coefficients(const std::vector<ResidualUpdate>& deltas, double density) {
    common_layer(deltas);
    if (!(density > 0.0 && density <= 1.0)) throw InvalidArgument("TIES density must lie in (0, 1]");
    const auto tasks = static_cast<Eigen::Index>(deltas.size());
    const Eigen::Index rows = deltas.front().delta.rows();
    const auto kept = static_cast<std::size_t>(std::ceil(density * static_cast<double>(rows) - 1e-12));

    // trim: per task, the `kept` rows with the largest L2 norm survive
    Matrix alive = Matrix::Zero(tasks, rows);
    for (Eigen::Index k = 0; k < tasks; ++k) {
        const Vector norms = deltas[static_cast<std::size_t>(k)].delta.rowwise().norm();
        std::vector<Eigen::Index> order(static_cast<std::size_t>(rows));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return norms[a] > norms[b]; });
        for (std::size_t i = 0; i < std::min(kept, order.size()); ++i) alive(k, order[i]) = 1.0;
    }

    // elect a sign per row from the trimmed signed mass, then average agreeing rows
    Matrix coeffs = Matrix::Zero(tasks, rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        Vector mass(tasks);
        for (Eigen::Index k = 0; k < tasks; ++k) mass[k] = alive(k, i) * deltas[static_cast<std::size_t>(k)].delta.row(i).sum();
        double elected = 0.0;
        const double total = mass.sum();
        if (total > 0.0) elected = 1.0;
        if (total < 0.0) elected = -1.0;
        if (total == 0.0) {
            // tie: the lowest-index task with non-zero mass decides
            for (Eigen::Index k = 0; k < tasks && elected == 0.0; ++k)
                if (mass[k] != 0.0) elected = mass[k] > 0.0 ? 1.0 : -1.0;
        }
        if (elected == 0.0) continue;
        int agreeing = 0;
        for (Eigen::Index k = 0; k < tasks; ++k)
            if (mass[k] * elected > 0.0) ++agreeing;
        for (Eigen::Index k = 0; k < tasks; ++k)
            if (mass[k] * elected > 0.0) coeffs(k, i) = 1.0 / agreeing;
    }
    return coeffs;
}

Matrix soup(const std::vector<ResidualUpdate>& deltas) {
    common_layer(deltas);
    Matrix sum = Matrix::Zero(deltas.front().delta.rows(), deltas.front().delta.cols());
    for (const auto& d : deltas) sum += d.delta;
    return sum / static_cast<double>(deltas.size());
}

Matrix task_arithmetic(const std::vector<ResidualUpdate>& deltas, const std::vector<double>& lambdas) {
    return merge_diagonal(deltas, task_arithmetic_coefficients(deltas, lambdas));
}

Matrix dare_row_uniform(const std::vector<ResidualUpdate>& deltas, double keep_prob, std::uint64_t seed) {
    return merge_diagonal(deltas, dare_coefficients(deltas, keep_prob, seed));
}

Matrix ties_rowwise(const std::vector<ResidualUpdate>& deltas, double density) {
    return merge_diagonal(deltas, ties_coefficients(deltas, density));
}

Matrix fisher_merge(const std::vector<Matrix>& thetas, const std::vector<FisherDiagonal>& fishers) {
    if (thetas.empty()) throw InvalidArgument("fisher merge needs at least one model");
    if (fishers.size() != thetas.size()) throw InvalidArgument("fisher merge needs one Fisher per model");
    const Eigen::Index rows = thetas.front().rows();
    const Eigen::Index cols = thetas.front().cols();
    Matrix weighted = Matrix::Zero(rows, cols);
    Matrix precision = Matrix::Zero(rows, cols);
    Matrix plain = Matrix::Zero(rows, cols);
    for (std::size_t k = 0; k < thetas.size(); ++k) {
        const Matrix& f = fishers[k].precision;
        if (thetas[k].rows() != rows || thetas[k].cols() != cols || f.rows() != rows || f.cols() != cols)
            throw DimensionError("fisher merge inputs have non-uniform shapes");
        if ((f.array() < 0.0).any() || !f.allFinite()) throw InvalidArgument("Fisher precisions must be finite and >= 0");
        weighted += f.cwiseProduct(thetas[k]);
        precision += f;
        plain += thetas[k];
    }
    plain /= static_cast<double>(thetas.size());
    Matrix out(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j)
            out(i, j) = precision(i, j) > 0.0 ? weighted(i, j) / precision(i, j) : plain(i, j);
    return out;
}

Matrix fisher_merge_delta(const Matrix& base_weight, const std::vector<ResidualUpdate>& deltas,
                          const std::vector<FisherDiagonal>& fishers) {
    common_layer(deltas);
    if (deltas.front().delta.rows() != base_weight.rows() || deltas.front().delta.cols() != base_weight.cols())
        throw DimensionError("residual shape does not match the layer weight");
    // the weighted mean commutes with the shared offset W, so merging the deltas
    // directly avoids the cancellation in (mean of W + delta_k) - W
    std::vector<Matrix> thetas;
    thetas.reserve(deltas.size());
    for (const auto& d : deltas) thetas.push_back(d.delta);
    return fisher_merge(thetas, fishers);
}

FisherDiagonal output_fisher(const LinearNetwork& net, int layer, const CalibrationSet& calib) {
    calib.validate();
    const Matrix& w = net.weight(layer);
    FisherDiagonal f{Matrix::Zero(w.rows(), w.cols())};
    for (std::size_t j = 0; j < calib.size(); ++j) {
        const Vector z = layer_input(net, layer, calib.inputs[j]);
        const Matrix jac = linearize_downstream(net, layer, calib.inputs[j]).matrix;
        // d h_o / d W_ab = J_oa z_b
        const Vector col_energy = jac.colwise().squaredNorm().transpose();
        f.precision.noalias() += col_energy * z.cwiseProduct(z).transpose();
    }
    return f;
}

bool is_baseline(const std::string& method) {
    return method == "soup" || method == "ta" || method == "dare" || method == "ties" || method == "fisher";
}

bool is_diagonal_feasible(const std::string& method) { return is_baseline(method) && method != "fisher"; }

namespace {

std::vector<double> expand_lambdas(const BaselineParams& params, std::size_t tasks) {
    std::vector<double> lambdas = params.lambdas;
    if (lambdas.empty()) lambdas.assign(tasks, 1.0);
    if (lambdas.size() == 1 && tasks > 1) lambdas.assign(tasks, lambdas.front());
    return lambdas;
}

}  // namespace

std::optional<Matrix> baseline_coefficients(const std::string& method, const std::vector<ResidualUpdate>& deltas,
                                            const BaselineParams& params) {
    if (method == "soup") return soup_coefficients(deltas);
    if (method == "ta") return task_arithmetic_coefficients(deltas, expand_lambdas(params, deltas.size()));
    if (method == "dare") return dare_coefficients(deltas, params.keep_prob, params.seed);
    if (method == "ties") return ties_coefficients(deltas, params.density);
    if (method == "fisher") return std::nullopt;
    throw InvalidArgument("unknown merge method '" + method + "'");
}

Matrix baseline_merge(const std::string& method, const LinearNetwork& net, const std::vector<ResidualUpdate>& deltas,
                      const CalibrationSet& calib, const BaselineParams& params) {
    if (method == "soup") return soup(deltas);
    if (method == "ta") return task_arithmetic(deltas, expand_lambdas(params, deltas.size()));
    if (method == "dare") return dare_row_uniform(deltas, params.keep_prob, params.seed);
    if (method == "ties") return ties_rowwise(deltas, params.density);
    if (method == "fisher") {
        const int layer = common_layer(deltas);
        std::vector<FisherDiagonal> fishers;
        for (const auto& d : deltas) {
            CalibrationSet own = calib.tasks.empty() ? calib : calib.subset(d.task);
            if (own.size() == 0) own = calib;
            fishers.push_back(output_fisher(apply_merged_residual(net, layer, d.delta), layer, own));
        }
        return fisher_merge_delta(net.weight(layer), deltas, fishers);
    }
    throw InvalidArgument("unknown merge method '" + method + "'");
}

}  // namespace qpmerge
