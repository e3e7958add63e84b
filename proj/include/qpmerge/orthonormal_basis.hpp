#pragma once

#include <cstdint>
#include <string>

#include "qpmerge/common.hpp"

namespace qpmerge {

enum class BasisOrigin { standard, eigen_s, svd_residuals, random, custom };

const char* to_string(BasisOrigin origin);

/// Columns q_1..q_p with Q^T Q = I.
struct OrthonormalBasis {
    Matrix columns;
    BasisOrigin origin = BasisOrigin::custom;
    std::uint64_t seed = 0;
    // Set when fewer directions than requested could be produced.
    bool truncated = false;

    Eigen::Index dim() const { return columns.rows(); }
    Eigen::Index size() const { return columns.cols(); }
    std::string id() const;

    /// Max-entry deviation of Q^T Q from the identity.
    double orthonormality_error() const;
};

OrthonormalBasis standard_basis(Eigen::Index dim);

}  // namespace qpmerge
