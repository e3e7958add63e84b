#include "qpmerge/basis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace qpmerge {
namespace {

Eigen::Index argmax_abs(const Vector& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[best])) best = i;
    return best;
}

void fix_sign(Eigen::Ref<Vector> v) {
    if (v.size() > 0 && v[argmax_abs(v)] < 0.0) v = -v;
}

// Modified Gram-Schmidt with one re-orthogonalisation pass. Candidates whose
// remaining norm falls below tol * original norm are dropped.
Matrix gram_schmidt(const Matrix& candidates, Eigen::Index max_cols, double tol = 1e-10) {
    Matrix q(candidates.rows(), 0);
    for (Eigen::Index i = 0; i < candidates.cols() && q.cols() < max_cols; ++i) {
        Vector v = candidates.col(i);
        const double norm0 = v.norm();
        if (norm0 == 0.0) continue;
        for (int pass = 0; pass < 2; ++pass)
            for (Eigen::Index k = 0; k < q.cols(); ++k) v -= q.col(k).dot(v) * q.col(k);
        const double norm = v.norm();
        if (norm <= tol * norm0) continue;
        q.conservativeResize(Eigen::NoChange, q.cols() + 1);
        q.col(q.cols() - 1) = v / norm;
    }
    return q;
}

}  // namespace

ResidualEnergyMatrix energy_matrix(const std::vector<Vector>& residuals) {
    if (residuals.empty()) throw InvalidArgument("energy matrix needs at least one residual");
    const Eigen::Index c = residuals.front().size();
    ResidualEnergyMatrix out;
    out.s = Matrix::Zero(c, c);
    for (const auto& b : residuals) {
        if (b.size() != c) throw DimensionError("residuals have non-uniform dimension");
        out.s.noalias() += b * b.transpose();
    }
    out.s = 0.5 * (out.s + out.s.transpose()).eval();
    out.total_energy = out.s.trace();
    return out;
}

EigenSpectrum sorted_spectrum(const Matrix& s) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s);
    if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
    const Eigen::Index n = s.rows();
    const Vector& lambda = eig.eigenvalues();
    const double scale = n > 0 ? std::max(lambda.cwiseAbs().maxCoeff(), std::numeric_limits<double>::min()) : 1.0;
    const double tie = 1e-12 * scale;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::vector<Eigen::Index> lead(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) lead[static_cast<std::size_t>(i)] = argmax_abs(eig.eigenvectors().col(i));
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        if (std::abs(lambda[a] - lambda[b]) > tie) return lambda[a] > lambda[b];
        return lead[static_cast<std::size_t>(a)] < lead[static_cast<std::size_t>(b)];
    });

    EigenSpectrum out{Vector(n), Matrix(n, n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        out.values[i] = lambda[order[static_cast<std::size_t>(i)]];
        out.vectors.col(i) = eig.eigenvectors().col(order[static_cast<std::size_t>(i)]);
        fix_sign(out.vectors.col(i));
    }
    return out;
}

OrthonormalBasis optimal_basis(const ResidualEnergyMatrix& energy, int p) {
    if (p < 1 || p > energy.s.rows())
        throw InvalidArgument("basis size " + std::to_string(p) + " outside [1, " + std::to_string(energy.s.rows()) + "]");
    const EigenSpectrum spec = sorted_spectrum(energy.s);
    return {spec.vectors.leftCols(p), BasisOrigin::eigen_s, 0, false};
}

OrthonormalBasis svd_basis(const std::vector<ResidualUpdate>& deltas, int p) {
    common_layer(deltas);
    const Eigen::Index r = deltas.front().delta.rows();
    if (p < 1 || p > r) throw InvalidArgument("svd basis size " + std::to_string(p) + " outside [1, " + std::to_string(r) + "]");

    struct Direction {
        double sigma;
        Vector weighted;
    };
    std::vector<Direction> dirs;
    for (const auto& d : deltas) {
        Eigen::JacobiSVD<Matrix> svd(d.delta, Eigen::ComputeThinU);
        const Vector& sv = svd.singularValues();
        const double top = sv.size() > 0 ? sv[0] : 0.0;
        for (Eigen::Index i = 0; i < sv.size(); ++i) {
            if (sv[i] <= 1e-12 * top || sv[i] == 0.0) continue;
            dirs.push_back({sv[i], sv[i] * svd.matrixU().col(i)});
        }
    }
    std::stable_sort(dirs.begin(), dirs.end(), [](const Direction& a, const Direction& b) { return a.sigma > b.sigma; });

    Matrix stacked(r, static_cast<Eigen::Index>(dirs.size()));
    for (std::size_t i = 0; i < dirs.size(); ++i) stacked.col(static_cast<Eigen::Index>(i)) = dirs[i].weighted;

    OrthonormalBasis out;
    out.columns = gram_schmidt(stacked, p);
    for (Eigen::Index i = 0; i < out.columns.cols(); ++i) fix_sign(out.columns.col(i));
    out.origin = BasisOrigin::svd_residuals;
    out.truncated = out.columns.cols() < p;
    return out;
}

OrthonormalBasis random_basis(Eigen::Index dim, int p, std::uint64_t seed) {
    if (dim < 1) throw InvalidArgument("random basis needs a positive dimension");
    if (p < 1 || p > dim) throw InvalidArgument("random basis size " + std::to_string(p) + " outside [1, " + std::to_string(dim) + "]");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(dim, dim);
    // column-major fill so that the first p columns do not depend on dim's remainder
    for (Eigen::Index c = 0; c < dim; ++c)
        for (Eigen::Index r = 0; r < dim; ++r) g(r, c) = normal(rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(dim, p);
    const Matrix r = qr.matrixQR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
    for (Eigen::Index i = 0; i < p; ++i)
        if (r(i, i) < 0.0) q.col(i) = -q.col(i);
    return {q, BasisOrigin::random, seed, false};
}

OrthonormalBasis ranked_standard_basis(const LayerLinearization& lin, int p) {
    if (lin.size() == 0) throw InvalidArgument("linearisation has no samples");
    const Eigen::Index r = lin.downstream.front().cols();
    if (p < 1 || p > r) throw InvalidArgument("standard basis size " + std::to_string(p) + " outside [1, " + std::to_string(r) + "]");
    // energy absorbed by the single output direction L_j e_i, summed over samples
    Vector score = Vector::Zero(r);
    for (std::size_t j = 0; j < lin.size(); ++j) {
        const Matrix& l = lin.downstream[j];
        const Vector proj = l.transpose() * lin.residuals[j];
        for (Eigen::Index i = 0; i < r; ++i) {
            const double n2 = l.col(i).squaredNorm();
            if (n2 > 0.0) score[i] += proj[i] * proj[i] / n2;
        }
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(r));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) { return score[a] > score[b]; });
    Matrix q = Matrix::Zero(r, p);
    for (int i = 0; i < p; ++i) q(order[static_cast<std::size_t>(i)], i) = 1.0;
    return {q, BasisOrigin::standard, 0, false};
}

OrthonormalBasis pull_back_basis(const Matrix& downstream, const Matrix& output_basis, BasisOrigin origin) {
    if (downstream.rows() != output_basis.rows())
        throw DimensionError("output basis does not live in the downstream map's output space");
    const Matrix pinv = downstream.completeOrthogonalDecomposition().pseudoInverse();
    const Matrix candidates = pinv * output_basis;
    OrthonormalBasis out;
    out.columns = gram_schmidt(candidates, candidates.cols());
    for (Eigen::Index i = 0; i < out.columns.cols(); ++i) fix_sign(out.columns.col(i));
    out.origin = origin;
    out.truncated = out.columns.cols() < output_basis.cols();
    return out;
}

OrthonormalBasis eigen_residual_basis(const LayerLinearization& lin, int p) {
    if (lin.size() == 0) throw InvalidArgument("linearisation has no samples");
    const Eigen::Index r = lin.downstream.front().cols();
    Matrix metric = Matrix::Zero(r, r);
    Matrix cross = Matrix::Zero(r, lin.downstream.front().rows());
    for (const auto& l : lin.downstream) {
        metric.noalias() += l.transpose() * l;
        cross += l.transpose();
    }
    const auto energy = energy_matrix(lin.residuals);
    const int usable = static_cast<int>(std::min<Eigen::Index>(p, energy.s.rows()));
    // least-squares preimage of each eigenvector over all samples: argmin_q sum_j ||L_j q - u||^2
    const Matrix candidates =
        metric.completeOrthogonalDecomposition().pseudoInverse() * cross * optimal_basis(energy, usable).columns;
    OrthonormalBasis out;
    out.columns = gram_schmidt(candidates, candidates.cols());
    for (Eigen::Index i = 0; i < out.columns.cols(); ++i) fix_sign(out.columns.col(i));
    out.origin = BasisOrigin::eigen_s;
    out.truncated = out.columns.cols() < p;
    return out;
}

Matrix projector_onto(const Matrix& b) {
    if (b.cols() == 0) return Matrix::Zero(b.rows(), b.rows());
    const Matrix gram = b.transpose() * b;
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram);
    if (eig.info() != Eigen::Success) throw NumericalError("projector eigendecomposition failed");
    const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
    Matrix pinv = Matrix::Zero(gram.rows(), gram.cols());
    for (Eigen::Index i = 0; i < gram.rows(); ++i) {
        const double l = eig.eigenvalues()[i];
        if (top > 0.0 && l > kPseudoInverseCutoff * top)
            pinv.noalias() += (1.0 / l) * eig.eigenvectors().col(i) * eig.eigenvectors().col(i).transpose();
    }
    Matrix p = b * pinv * b.transpose();
    return 0.5 * (p + p.transpose());
}

Matrix output_projector(const Matrix& downstream, const OrthonormalBasis& q) {
    if (downstream.cols() != q.dim())
        throw DimensionError("basis dimension " + std::to_string(q.dim()) + " does not match downstream input " +
                             std::to_string(downstream.cols()));
    return projector_onto(downstream * q.columns);
}

Matrix output_projector(const DownstreamMap& downstream, const OrthonormalBasis& q) {
    return output_projector(downstream.matrix, q);
}

SubspaceDiagnostics diagnostics(const ResidualEnergyMatrix& energy, const Matrix& p_model, const Matrix& p_opt) {
    const Eigen::Index c = energy.s.rows();
    if (p_model.rows() != c || p_model.cols() != c || p_opt.rows() != c || p_opt.cols() != c)
        throw DimensionError("projectors do not match the energy matrix dimension");
    SubspaceDiagnostics out;
    out.captured_energy = (energy.s * p_model).trace();
    out.fraction = energy.total_energy > 0.0 ? out.captured_energy / energy.total_energy : 1.0;
    out.relaxed_loss = energy.total_energy - out.captured_energy;
    out.gap_vs_optimal = (energy.s * (p_opt - p_model)).trace();
    return out;
}

SubspaceDiagnostics subspace_diagnostics(const LayerLinearization& lin, const OrthonormalBasis& q) {
    const auto energy = energy_matrix(lin.residuals);
    const Eigen::Index c = energy.s.rows();
    const int opt_dim = static_cast<int>(std::min<Eigen::Index>(q.size(), c));
    const Matrix p_opt = projector_onto(optimal_basis(energy, opt_dim).columns);
    if (lin.exact) return diagnostics(energy, output_projector(lin.downstream.front(), q), p_opt);

    SubspaceDiagnostics out;
    out.approximate = true;
    for (std::size_t j = 0; j < lin.size(); ++j) {
        const Matrix pj = output_projector(lin.downstream[j], q);
        out.captured_energy += (pj * lin.residuals[j]).squaredNorm();
    }
    out.fraction = energy.total_energy > 0.0 ? out.captured_energy / energy.total_energy : 1.0;
    out.relaxed_loss = energy.total_energy - out.captured_energy;
    out.gap_vs_optimal = (energy.s * p_opt).trace() - out.captured_energy;
    return out;
}

Vector svd_closed_form_weights(const Vector& sigmas, int target) {
    if (target < 0 || target >= sigmas.size())
        throw InvalidArgument("target task " + std::to_string(target) + " outside the task set");
    if ((sigmas.array() < 0.0).any() || !sigmas.allFinite()) throw InvalidArgument("singular values must be finite and >= 0");
    const double scale = sigmas.maxCoeff();
    if (!(scale > 0.0)) throw InvalidArgument("all singular values are zero");
    // normalising by the largest sigma keeps equal-sigma and singleton cases exact
    const Vector s = sigmas / scale;
    return (s[target] / s.squaredNorm()) * s;
}

}  // namespace qpmerge
