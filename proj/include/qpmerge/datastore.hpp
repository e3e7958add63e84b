#pragma once

// Bundle files: a base network, per-task residual updates and per-task
// calibration data in one JSON document.
//
//   { "version": 1,
//     "base": { "layers": [ {"rows", "cols", "data": [row-major]} ], "activations": ["identity"|"relu"] },
//     "residuals": [ {"layer", "task", "data": [row-major]} ],
//     "calibration": [ {"task", "inputs": [[...]], "targets": [[...]]} ],
//     "meta": { ... } }
//
// Numbers are written as the shortest decimal that reads back to the same
// double, so load(save(b)) reproduces every bit.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "qpmerge/multilayer.hpp"
#include "qpmerge/netcore.hpp"
#include "qpmerge/qp.hpp"

namespace qpmerge {

inline constexpr int kBundleVersion = 1;

struct TaskCalibration {
    int task = 0;
    std::vector<Vector> inputs;
    std::vector<Vector> targets;
};

struct ModelBundle {
    LinearNetwork base;
    std::vector<ResidualUpdate> residuals;
    std::vector<TaskCalibration> calibration;
    nlohmann::json meta = nlohmann::json::object();

    void validate() const;

    /// All calibration samples in file order, labelled with their task.
    CalibrationSet pooled() const;
    DeltasByLayer by_layer() const;
    std::vector<ResidualUpdate> residuals_at(int layer) const;
    /// Layer indices that carry residuals, ascending.
    std::vector<int> layers() const;
    /// Base network with task `task`'s residuals applied at every layer.
    LinearNetwork finetuned(int task) const;
};

std::string serialize_bundle(const ModelBundle& bundle);
ModelBundle parse_bundle(const std::string& text);
ModelBundle bundle_from_json(const nlohmann::json& doc);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

/// Entry-by-entry bitwise comparison of two bundles (meta compared as JSON).
bool bundles_identical(const ModelBundle& a, const ModelBundle& b);

/// Shortest round-trip decimal for a finite double.
std::string format_double(double value);

}  // namespace qpmerge
