#include "qpmerge/datastore.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace qpmerge {
namespace {

using nlohmann::json;

const json& field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) throw ParseError(path + ": expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw ParseError(path + "." + key + ": missing field");
    return *it;
}

int read_int(const json& v, const std::string& path) {
    if (!v.is_number_integer()) throw ParseError(path + ": expected an integer");
    return v.get<int>();
}

double read_number(const json& v, const std::string& path) {
    if (!v.is_number()) throw ParseError(path + ": expected a number");
    return v.get<double>();
}

const json& read_array(const json& v, const std::string& path) {
    if (!v.is_array()) throw ParseError(path + ": expected an array");
    return v;
}

Vector read_vector(const json& v, const std::string& path) {
    read_array(v, path);
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = read_number(v[i], path + "[" + std::to_string(i) + "]");
    return out;
}

Matrix read_row_major(const json& data, Eigen::Index rows, Eigen::Index cols, const std::string& path) {
    read_array(data, path);
    if (static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw ParseError(path + ": expected " + std::to_string(rows * cols) + " entries, found " +
                         std::to_string(data.size()));
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) {
            const auto idx = static_cast<std::size_t>(i * cols + j);
            m(i, j) = read_number(data[idx], path + "[" + std::to_string(idx) + "]");
        }
    return m;
}

std::vector<Vector> read_rows(const json& v, const std::string& path) {
    read_array(v, path);
    std::vector<Vector> out;
    out.reserve(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(read_vector(v[i], path + "[" + std::to_string(i) + "]"));
    return out;
}

void write_numbers(std::ostream& os, const double* begin, std::size_t count) {
    os << '[';
    for (std::size_t i = 0; i < count; ++i) {
        if (i) os << ',';
        os << format_double(begin[i]);
    }
    os << ']';
}

void write_row_major(std::ostream& os, const Matrix& m) {
    const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm = m;
    write_numbers(os, rm.data(), static_cast<std::size_t>(rm.size()));
}

void write_vector(std::ostream& os, const Vector& v) { write_numbers(os, v.data(), static_cast<std::size_t>(v.size())); }

void write_rows(std::ostream& os, const std::vector<Vector>& rows) {
    os << '[';
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i) os << ',';
        write_vector(os, rows[i]);
    }
    os << ']';
}

bool same_bits(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

std::string format_double(double value) {
    if (!std::isfinite(value)) throw NumericalError("cannot serialise a non-finite number");
    if (value == 0.0) return std::signbit(value) ? "-0.0" : "0";
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

void ModelBundle::validate() const {
    base.validate();
    for (const auto& r : residuals) {
        check_layer_index(base, r.layer);
        const Matrix& w = base.weight(r.layer);
        if (r.delta.rows() != w.rows() || r.delta.cols() != w.cols())
            throw DimensionError("residual for task " + std::to_string(r.task) + " does not match layer " +
                                 std::to_string(r.layer));
        if (!r.delta.allFinite()) throw NumericalError("residual has non-finite entries");
    }
    for (const auto& c : calibration) {
        if (c.inputs.size() != c.targets.size())
            throw DimensionError("calibration for task " + std::to_string(c.task) + " has mismatched counts");
        for (std::size_t j = 0; j < c.inputs.size(); ++j) {
            if (c.inputs[j].size() != base.input_dim())
                throw DimensionError("calibration input dimension does not match the network");
            if (c.targets[j].size() != base.output_dim())
                throw DimensionError("calibration target dimension does not match the network");
            if (!c.inputs[j].allFinite() || !c.targets[j].allFinite())
                throw NumericalError("calibration data has non-finite entries");
        }
    }
}

CalibrationSet ModelBundle::pooled() const {
    CalibrationSet out;
    for (const auto& c : calibration) {
        for (std::size_t j = 0; j < c.inputs.size(); ++j) {
            out.inputs.push_back(c.inputs[j]);
            out.targets.push_back(c.targets[j]);
            out.tasks.push_back(c.task);
        }
    }
    return out;
}

DeltasByLayer ModelBundle::by_layer() const {
    DeltasByLayer out;
    for (const auto& r : residuals) out[r.layer].push_back(r);
    return out;
}

std::vector<ResidualUpdate> ModelBundle::residuals_at(int layer) const {
    std::vector<ResidualUpdate> out;
    for (const auto& r : residuals)
        if (r.layer == layer) out.push_back(r);
    return out;
}

std::vector<int> ModelBundle::layers() const {
    std::set<int> seen;
    for (const auto& r : residuals) seen.insert(r.layer);
    return {seen.begin(), seen.end()};
}

LinearNetwork ModelBundle::finetuned(int task) const {
    LinearNetwork net = base;
    bool found = false;
    for (const auto& r : residuals) {
        if (r.task != task) continue;
        net = apply_merged_residual(net, r.layer, r.delta);
        found = true;
    }
    if (!found) throw InvalidArgument("bundle has no residuals for task " + std::to_string(task));
    return net;
}

std::string serialize_bundle(const ModelBundle& bundle) {
    bundle.validate();
    std::ostringstream os;
    os << "{\"version\":" << kBundleVersion << ",\n\"base\":{\"layers\":[";
    for (std::size_t l = 0; l < bundle.base.layers.size(); ++l) {
        const Matrix& w = bundle.base.layers[l];
        os << (l ? ",\n" : "\n") << "{\"rows\":" << w.rows() << ",\"cols\":" << w.cols() << ",\"data\":";
        write_row_major(os, w);
        os << '}';
    }
    os << "],\n\"activations\":[";
    for (std::size_t i = 0; i < bundle.base.activations.size(); ++i)
        os << (i ? "," : "") << '"' << to_string(bundle.base.activations[i]) << '"';
    os << "]},\n\"residuals\":[";
    for (std::size_t i = 0; i < bundle.residuals.size(); ++i) {
        const auto& r = bundle.residuals[i];
        os << (i ? ",\n" : "\n") << "{\"layer\":" << r.layer << ",\"task\":" << r.task << ",\"data\":";
        write_row_major(os, r.delta);
        os << '}';
    }
    os << "],\n\"calibration\":[";
    for (std::size_t i = 0; i < bundle.calibration.size(); ++i) {
        const auto& c = bundle.calibration[i];
        os << (i ? ",\n" : "\n") << "{\"task\":" << c.task << ",\"inputs\":";
        write_rows(os, c.inputs);
        os << ",\"targets\":";
        write_rows(os, c.targets);
        os << '}';
    }
    os << "],\n\"meta\":" << (bundle.meta.is_null() ? json::object() : bundle.meta).dump() << "}\n";
    return os.str();
}

ModelBundle bundle_from_json(const json& doc) {
    if (!doc.is_object()) throw ParseError("$: expected an object");
    const int version = read_int(field(doc, "version", "$"), "$.version");
    if (version != kBundleVersion)
        throw ParseError("$.version: unsupported bundle version " + std::to_string(version) + " (expected " +
                         std::to_string(kBundleVersion) + ")");

    ModelBundle b;
    const json& base = field(doc, "base", "$");
    const json& layers = read_array(field(base, "layers", "$.base"), "$.base.layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string p = "$.base.layers[" + std::to_string(l) + "]";
        const int rows = read_int(field(layers[l], "rows", p), p + ".rows");
        const int cols = read_int(field(layers[l], "cols", p), p + ".cols");
        if (rows < 1 || cols < 1) throw ParseError(p + ": shape must be positive");
        b.base.layers.push_back(read_row_major(field(layers[l], "data", p), rows, cols, p + ".data"));
    }
    const json& acts = read_array(field(base, "activations", "$.base"), "$.base.activations");
    for (std::size_t i = 0; i < acts.size(); ++i) {
        const std::string p = "$.base.activations[" + std::to_string(i) + "]";
        if (!acts[i].is_string()) throw ParseError(p + ": expected a string");
        try {
            b.base.activations.push_back(activation_from_string(acts[i].get<std::string>()));
        } catch (const InvalidArgument& e) {
            throw ParseError(p + ": " + e.what());
        }
    }
    try {
        b.base.validate();
    } catch (const Error& e) {
        throw ParseError(std::string("$.base: ") + e.what());
    }

    const json& res = read_array(field(doc, "residuals", "$"), "$.residuals");
    for (std::size_t i = 0; i < res.size(); ++i) {
        const std::string p = "$.residuals[" + std::to_string(i) + "]";
        ResidualUpdate r;
        r.layer = read_int(field(res[i], "layer", p), p + ".layer");
        r.task = read_int(field(res[i], "task", p), p + ".task");
        if (r.layer < 1 || r.layer > b.base.depth()) throw ParseError(p + ".layer: layer index out of range");
        const Matrix& w = b.base.layers[static_cast<std::size_t>(r.layer - 1)];
        r.delta = read_row_major(field(res[i], "data", p), w.rows(), w.cols(), p + ".data");
        b.residuals.push_back(std::move(r));
    }

    const json& cal = read_array(field(doc, "calibration", "$"), "$.calibration");
    for (std::size_t i = 0; i < cal.size(); ++i) {
        const std::string p = "$.calibration[" + std::to_string(i) + "]";
        TaskCalibration c;
        c.task = read_int(field(cal[i], "task", p), p + ".task");
        c.inputs = read_rows(field(cal[i], "inputs", p), p + ".inputs");
        c.targets = read_rows(field(cal[i], "targets", p), p + ".targets");
        b.calibration.push_back(std::move(c));
    }
    if (auto it = doc.find("meta"); it != doc.end()) {
        if (!it->is_object()) throw ParseError("$.meta: expected an object");
        b.meta = *it;
    }
    try {
        b.validate();
    } catch (const ParseError&) {
        throw;
    } catch (const Error& e) {
        throw ParseError(std::string("$: ") + e.what());
    }
    return b;
}

ModelBundle parse_bundle(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("$: malformed JSON (") + e.what() + ")");
    }
    return bundle_from_json(doc);
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
    const std::string text = serialize_bundle(bundle);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidArgument("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw InvalidArgument("failed writing '" + path.string() + "'");
}

ModelBundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidArgument("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_bundle(ss.str());
}

bool bundles_identical(const ModelBundle& a, const ModelBundle& b) {
    if (a.base.layers.size() != b.base.layers.size() || a.base.activations != b.base.activations) return false;
    for (std::size_t l = 0; l < a.base.layers.size(); ++l)
        if (!same_bits(a.base.layers[l], b.base.layers[l])) return false;
    if (a.residuals.size() != b.residuals.size()) return false;
    for (std::size_t i = 0; i < a.residuals.size(); ++i) {
        const auto& x = a.residuals[i];
        const auto& y = b.residuals[i];
        if (x.layer != y.layer || x.task != y.task || !same_bits(x.delta, y.delta)) return false;
    }
    if (a.calibration.size() != b.calibration.size()) return false;
    for (std::size_t i = 0; i < a.calibration.size(); ++i) {
        const auto& x = a.calibration[i];
        const auto& y = b.calibration[i];
        if (x.task != y.task || x.inputs.size() != y.inputs.size() || x.targets.size() != y.targets.size()) return false;
        for (std::size_t j = 0; j < x.inputs.size(); ++j)
            if (!same_bits(x.inputs[j], y.inputs[j]) || !same_bits(x.targets[j], y.targets[j])) return false;
    }
    return a.meta == b.meta;
}

}  // namespace qpmerge
