#pragma once

// Candidate merge bases and the output-space projection diagnostics.
//
// Residual-space bases (R^r, the rows of a residual update) parameterise merge
// directions; output-space bases (R^c) describe which output corrections are
// reachable. The captured energy tr(S P) of an output subspace bounds the loss
// any merge restricted to it can reach.

#include <vector>

#include "qpmerge/netcore.hpp"
#include "qpmerge/orthonormal_basis.hpp"
#include "qpmerge/qp.hpp"

namespace qpmerge {

/// S = sum_j b_j b_j^T.
struct ResidualEnergyMatrix {
    Matrix s;
    double total_energy = 0.0;
};

struct SubspaceDiagnostics {
    double captured_energy = 0.0;
    double fraction = 0.0;
    double relaxed_loss = 0.0;
    double gap_vs_optimal = 0.0;
    // Per-sample projectors were used because L_j varies with the sample.
    bool approximate = false;
};

ResidualEnergyMatrix energy_matrix(const std::vector<Vector>& residuals);

/// Eigenpairs of S sorted by descending eigenvalue with the library's
/// tie-break and sign conventions applied.
struct EigenSpectrum {
    Vector values;
    Matrix vectors;
};
EigenSpectrum sorted_spectrum(const Matrix& s);

/// Top-p eigenvectors of S, in output space.
OrthonormalBasis optimal_basis(const ResidualEnergyMatrix& energy, int p);

/// Singular-value-weighted left singular vectors of every update, orthonormalised
/// in descending singular value order and truncated to p columns.
OrthonormalBasis svd_basis(const std::vector<ResidualUpdate>& deltas, int p);

/// First p columns of the Q factor of a seeded dim x dim Gaussian matrix.
/// Prefixes are nested: random_basis(d, p, s) is a prefix of random_basis(d, p+1, s).
OrthonormalBasis random_basis(Eigen::Index dim, int p, std::uint64_t seed);

/// Standard coordinates ranked by the residual energy each single output
/// direction L_j e_i can absorb; with L = I this orders by the diagonal of S.
OrthonormalBasis ranked_standard_basis(const LayerLinearization& lin, int p);

/// Residual-space basis whose image under `downstream` spans the given
/// output-space basis (pseudoinverse pull-back, then Gram-Schmidt in order).
OrthonormalBasis pull_back_basis(const Matrix& downstream, const Matrix& output_basis, BasisOrigin origin);

/// Residual-space eigenbasis: least-squares preimages of the top-p eigenvectors of S
/// over all per-sample downstream maps, (sum L_j^T L_j)^+ sum L_j^T u, orthonormalised
/// in order. Equals L^+ u when the downstream map is fixed.
OrthonormalBasis eigen_residual_basis(const LayerLinearization& lin, int p);

/// Orthogonal projector onto the column span of B, B (B^T B)^+ B^T.
Matrix projector_onto(const Matrix& b);
Matrix output_projector(const DownstreamMap& downstream, const OrthonormalBasis& q);
Matrix output_projector(const Matrix& downstream, const OrthonormalBasis& q);

SubspaceDiagnostics diagnostics(const ResidualEnergyMatrix& energy, const Matrix& p_model, const Matrix& p_opt);

/// Diagnostics for the output subspace a residual-space basis induces at one merge
/// layer. Uses the trace formula when the downstream map is fixed and per-sample
/// projections otherwise.
SubspaceDiagnostics subspace_diagnostics(const LayerLinearization& lin, const OrthonormalBasis& q);

/// d_k = sigma_target sigma_k / sum_l sigma_l^2.
Vector svd_closed_form_weights(const Vector& sigmas, int target);

}  // namespace qpmerge
