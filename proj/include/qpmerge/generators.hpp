#pragma once

// Synthetic bundles. Every generator is a pure function of its spec (seed included).

#include <cstdint>
#include <vector>

#include "qpmerge/datastore.hpp"

namespace qpmerge {

/// Linear network d -> r -> ... -> r -> c with K Gaussian residuals at one layer.
struct LinearTaskSpec {
    int input_dim = 8;   // d
    int hidden_dim = 6;  // r: output width of every layer but the last
    int output_dim = 5;  // c
    int layers = 3;      // M
    int merge_layer = 2; // N
    int tasks = 3;
    int samples_per_task = 20;
    double delta_scale = 0.1;
    double noise = 0.0;
    std::uint64_t seed = 0;
};

ModelBundle gen_linear_tasks(const LinearTaskSpec& spec);

/// Two-layer linear instance x -> W_1 (merged, r x d) -> L (c x r, L^T L = I)
/// whose residuals share one singular pair (u, v):
/// delta_k = sigma_k u v^T + R_k with u^T R_k = 0 and R_k v = 0.
/// Calibration targets come from the fine-tune of `target_task`.
struct SharedDirectionSpec {
    std::vector<double> sigmas{1.0, 1.0};
    int input_dim = 5;
    int rows = 4;        // r
    int output_dim = 6;  // c, must be >= r
    int target_task = 0;
    int samples = 12;
    double remainder_scale = 0.3;
    std::uint64_t seed = 0;
};

ModelBundle gen_shared_direction_instance(const SharedDirectionSpec& spec);

/// Recomputes both assumptions from the bundle (u, v and sigmas are read from
/// meta) and throws NumericalError when either is violated.
void validate_shared_direction(const ModelBundle& bundle);

/// Residual-space basis {u} recorded by gen_shared_direction_instance.
Vector shared_direction(const ModelBundle& bundle);

/// Small ReLU classifier; each task fine-tunes only the merge layer on its own
/// subset of classes (class c belongs to task c mod K).
struct ReluTaskSpec {
    std::vector<int> dims{16, 12, 8, 4};
    int merge_layer = 2;
    int tasks = 2;
    int samples_per_task = 20;
    int train_per_class = 24;
    int pretrain_steps = 150;
    int finetune_steps = 40;
    double pretrain_lr = 0.05;
    double finetune_lr = 0.05;
    double class_separation = 2.0;
    std::uint64_t seed = 0;
};

ModelBundle gen_relu_tasks(const ReluTaskSpec& spec);

}  // namespace qpmerge
