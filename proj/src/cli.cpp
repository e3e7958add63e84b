#include "qpmerge/cli.hpp"

#include <fstream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "qpmerge/datastore.hpp"
#include "qpmerge/experiments.hpp"
#include "qpmerge/generators.hpp"

namespace qpmerge {
namespace {

using nlohmann::json;

struct GenConfig {
    std::string kind = "linear";
    std::string out;
    int tasks = 3;
    std::uint64_t seed = 0;
    // unset widths and counts fall back to the selected generator's own defaults
    std::optional<int> input_dim;
    std::optional<int> hidden_dim;
    std::optional<int> output_dim;
    int layers = 3;
    std::optional<int> merge_layer;
    std::optional<int> samples;
    double delta_scale = 0.1;
    double noise = 0.0;
    std::vector<double> sigmas{1.0, 1.0};
    int target_task = 0;
    double remainder_scale = 0.3;
    std::vector<int> dims{16, 12, 8, 4};
    int pretrain_steps = 150;
    int finetune_steps = 40;
    double lr = 0.05;
};

struct SolverFlags {
    std::string solver = "exact";
    double lo = 0.0;
    double hi = 1.0;
    int steps = 500;
    double step_size = 1e-2;

    QpSolverOptions options() const {
        QpSolverOptions o;
        if (solver == "exact") o.kind = SolverKind::exact;
        else if (solver == "box") o.kind = SolverKind::box;
        else throw InvalidArgument("unknown solver '" + solver + "' (expected exact or box)");
        if (!(lo <= hi)) throw InvalidArgument("--lo must not exceed --hi");
        if (steps < 0) throw InvalidArgument("--steps must be non-negative");
        if (!(step_size > 0.0)) throw InvalidArgument("--step-size must be positive");
        o.lo = lo;
        o.hi = hi;
        o.box.steps = steps;
        o.box.step_size = step_size;
        return o;
    }
};

struct MergeConfig {
    std::string bundle;
    std::string method = "qp-diag";
    std::vector<double> lambdas;
    double keep_prob = 0.5;
    double density = 0.5;
    std::uint64_t seed = 0;
    std::string basis = "eigen";
    int p = 0;
    SolverFlags solver;
    std::string layers = "all";
    std::string mode = "sequential";
    std::string init_method = "soup";
    std::string out;
    std::string report;
    std::string format = "csv";
};

struct DiagnoseConfig {
    std::string bundle;
    int layer = 0;
    int p_min = 1;
    int p_max = 0;
    int random_bases = 20;
    std::uint64_t seed = 0;
    std::string out;
    std::string format = "csv";
};

struct EvalConfig {
    std::string model;
    std::string calib;
    int task = -1;
    std::string out;
};

struct CompareConfig {
    std::string bundle;
    int layer = 0;
    std::vector<double> lambdas{0.25, 0.5, 0.75, 1.0};
    double keep_prob = 0.5;
    double density = 0.5;
    std::uint64_t seed = 0;
    int p = 0;
    SolverFlags solver;
    std::string out;
    std::string format = "csv";
};

void write_output(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty()) {
        out << text;
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw InvalidArgument("cannot open '" + path + "' for writing");
    f << text;
    if (!f) throw InvalidArgument("failed writing '" + path + "'");
}

void check_format(const std::string& format) {
    if (format != "csv" && format != "json") throw InvalidArgument("unknown format '" + format + "' (expected csv or json)");
}

std::vector<int> task_ids(const CalibrationSet& calib) {
    std::set<int> ids(calib.tasks.begin(), calib.tasks.end());
    return {ids.begin(), ids.end()};
}

std::string task_header(const std::vector<int>& tasks) {
    std::string h;
    for (int t : tasks) h += ",task_mse_" + std::to_string(t);
    return h;
}

std::string task_cells(const std::map<int, double>& values, const std::vector<int>& tasks) {
    std::string s;
    for (int t : tasks) {
        const auto it = values.find(t);
        s += "," + (it == values.end() ? std::string() : format_double(it->second));
    }
    return s;
}

json task_json(const std::map<int, double>& values) {
    json j = json::object();
    for (const auto& [t, v] : values) j[std::to_string(t)] = v;
    return j;
}

json matrix_json(const Matrix& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(row);
    }
    return rows;
}

std::vector<int> parse_layer_list(const std::string& text, const std::vector<int>& available) {
    if (text == "all") return available;
    std::vector<int> layers;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t pos = 0;
        int layer = 0;
        try {
            layer = std::stoi(item, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != item.size()) throw InvalidArgument("bad layer list '" + text + "'");
        if (std::find(available.begin(), available.end(), layer) == available.end())
            throw InvalidArgument("layer " + std::to_string(layer) + " carries no residuals");
        layers.push_back(layer);
    }
    if (layers.empty()) throw InvalidArgument("empty layer list");
    return layers;
}

int pick_layer(const ModelBundle& bundle, int requested) {
    const auto layers = bundle.layers();
    if (layers.empty()) throw InvalidArgument("bundle carries no residuals");
    if (requested > 0) {
        if (std::find(layers.begin(), layers.end(), requested) == layers.end())
            throw InvalidArgument("layer " + std::to_string(requested) + " carries no residuals");
        return requested;
    }
    if (layers.size() > 1) throw InvalidArgument("bundle has residuals at several layers; pass --layer");
    return layers.front();
}

void require_finite(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) throw NumericalError("non-finite values in " + what);
}

// ---- gen ----

int cmd_gen(const GenConfig& c, std::ostream& out, std::ostream& err) {
    ModelBundle bundle;
    if (c.kind == "linear") {
        LinearTaskSpec s;
        s.input_dim = c.input_dim.value_or(s.input_dim);
        s.hidden_dim = c.hidden_dim.value_or(s.hidden_dim);
        s.output_dim = c.output_dim.value_or(s.output_dim);
        s.layers = c.layers;
        s.merge_layer = c.merge_layer.value_or(s.merge_layer);
        s.tasks = c.tasks;
        s.samples_per_task = c.samples.value_or(s.samples_per_task);
        s.delta_scale = c.delta_scale;
        s.noise = c.noise;
        s.seed = c.seed;
        bundle = gen_linear_tasks(s);
    } else if (c.kind == "shared-direction") {
        SharedDirectionSpec s;
        s.sigmas = c.sigmas;
        s.input_dim = c.input_dim.value_or(s.input_dim);
        s.rows = c.hidden_dim.value_or(s.rows);
        s.output_dim = c.output_dim.value_or(s.output_dim);
        s.target_task = c.target_task;
        s.samples = c.samples.value_or(s.samples);
        s.remainder_scale = c.remainder_scale;
        s.seed = c.seed;
        bundle = gen_shared_direction_instance(s);
    } else if (c.kind == "relu") {
        ReluTaskSpec s;
        s.dims = c.dims;
        s.merge_layer = c.merge_layer.value_or(s.merge_layer);
        s.tasks = c.tasks;
        s.samples_per_task = c.samples.value_or(s.samples_per_task);
        s.pretrain_steps = c.pretrain_steps;
        s.finetune_steps = c.finetune_steps;
        s.pretrain_lr = c.lr;
        s.finetune_lr = c.lr;
        s.seed = c.seed;
        bundle = gen_relu_tasks(s);
    } else {
        throw InvalidArgument("unknown generator kind '" + c.kind + "'");
    }
    const std::string text = serialize_bundle(bundle);
    write_output(c.out, text, out);
    std::ostream& summary = c.out.empty() ? err : out;
    summary << "generated " << c.kind << " bundle: layers=" << bundle.base.depth() << " residuals=" << bundle.residuals.size()
            << " tasks=" << bundle.calibration.size() << " samples=" << bundle.pooled().size();
    if (!c.out.empty()) summary << " -> " << c.out;
    summary << "\n";
    return kExitOk;
}

// ---- merge ----

struct MergeRow {
    int layer = 0;
    double objective_before = 0.0;
    double objective = 0.0;
    EvalMetrics metrics;
    std::optional<Matrix> coefficients;
    std::optional<double> fraction;
};

int cmd_merge(const MergeConfig& c, std::ostream& out, std::ostream& err) {
    check_format(c.format);
    if (!is_known_method(c.method)) throw InvalidArgument("unknown merge method '" + c.method + "'");
    if (c.mode != "sequential" && c.mode != "hybrid") throw InvalidArgument("unknown mode '" + c.mode + "'");
    const ModelBundle bundle = load_bundle(c.bundle);
    const CalibrationSet calib = bundle.pooled();
    const std::vector<int> layers = parse_layer_list(c.layers, bundle.layers());
    if (layers.empty()) throw InvalidArgument("bundle carries no residuals");

    MethodConfig config;
    config.baseline.lambdas = c.lambdas;
    config.baseline.keep_prob = c.keep_prob;
    config.baseline.density = c.density;
    config.baseline.seed = derive_seed(c.seed, 11);
    config.basis = basis_kind_from_string(c.basis);
    config.basis_size = c.p;
    config.solver = c.solver.options();

    LinearNetwork net = bundle.base;
    std::vector<MergeRow> rows;
    if (c.mode == "hybrid") {
        if (!is_baseline(c.init_method)) throw InvalidArgument("--init-method must be a baseline");
        if (c.method != "qp-diag") throw InvalidArgument("hybrid mode refines with qp-diag");
        const MergeResult res =
            hybrid_refine(bundle.base, bundle.by_layer(), calib, c.init_method, config.baseline, layers, config.solver);
        net = res.network;
        for (const auto& rec : res.report.layers) {
            MergeRow row;
            row.layer = rec.layer;
            row.objective_before = rec.objective_before;
            row.objective = rec.objective_after;
            row.metrics.mse = rec.loss_after / static_cast<double>(calib.size());
            if (rec.coefficients.size() > 0) row.coefficients = rec.coefficients;
            rows.push_back(row);
        }
        if (!rows.empty()) rows.back().metrics = evaluate(net, calib);
    } else {
        for (int layer : layers) {
            const auto deltas = bundle.residuals_at(layer);
            const LayerLinearization lin = linearize_layer(net, layer, calib);
            const SingleLayerMerge m = merge_single_layer(c.method, net, deltas, calib, config);
            require_finite(m.merged_delta, "merged residual at layer " + std::to_string(layer));
            MergeRow row;
            row.layer = layer;
            row.objective_before = linearized_loss(lin, Matrix::Zero(m.merged_delta.rows(), m.merged_delta.cols()));
            row.objective = linearized_loss(lin, m.merged_delta);
            net = apply_merged_residual(net, layer, m.merged_delta);
            row.metrics = evaluate(net, calib);
            row.coefficients = m.coefficients;
            if (c.method == "qp-basis" && m.diagnostics) row.fraction = m.diagnostics->fraction;
            rows.push_back(row);
        }
    }
    for (const auto& row : rows)
        if (!std::isfinite(row.objective) || !std::isfinite(row.metrics.mse))
            throw NumericalError("non-finite objective at layer " + std::to_string(row.layer));

    const EvalMetrics final_metrics = evaluate(net, calib);
    const std::vector<int> tasks = task_ids(calib);
    const bool with_fraction = c.method == "qp-basis";
    std::string report;
    if (c.format == "csv") {
        report = "method,layer,objective,mse" + task_header(tasks) + (with_fraction ? ",fraction" : "") + "\n";
        for (const auto& row : rows) {
            report += c.method + "," + std::to_string(row.layer) + "," + format_double(row.objective) + "," +
                      format_double(row.metrics.mse) + task_cells(row.metrics.task_mse, tasks);
            if (with_fraction) report += "," + (row.fraction ? format_double(*row.fraction) : std::string());
            report += "\n";
        }
    } else {
        json doc;
        doc["method"] = c.method;
        doc["mode"] = c.mode;
        doc["layers"] = json::array();
        for (const auto& row : rows) {
            json r{{"layer", row.layer},
                   {"objective_before", row.objective_before},
                   {"objective", row.objective},
                   {"mse", row.metrics.mse},
                   {"task_mse", task_json(row.metrics.task_mse)}};
            if (row.coefficients) r["coefficients"] = matrix_json(*row.coefficients);
            if (row.fraction) r["fraction"] = *row.fraction;
            doc["layers"].push_back(r);
        }
        doc["final_mse"] = final_metrics.mse;
        doc["task_mse"] = task_json(final_metrics.task_mse);
        report = doc.dump(2) + "\n";
    }

    if (!c.out.empty()) {
        ModelBundle merged;
        merged.base = net;
        merged.calibration = bundle.calibration;
        merged.meta = {{"merged_from", bundle.meta}, {"method", c.method}, {"mode", c.mode}, {"seed", c.seed}};
        save_bundle(merged, c.out);
        err << "merged model -> " << c.out << "\n";
    }
    write_output(c.report, report, out);
    return kExitOk;
}

// ---- diagnose ----

int cmd_diagnose(const DiagnoseConfig& c, std::ostream& out, std::ostream& err) {
    check_format(c.format);
    if (c.random_bases < 0) throw InvalidArgument("--random-bases must be non-negative");
    const ModelBundle bundle = load_bundle(c.bundle);
    const int layer = pick_layer(bundle, c.layer);
    SweepOptions opts;
    opts.p_min = c.p_min;
    opts.p_max = c.p_max;
    opts.random_bases = c.random_bases;
    opts.seed = derive_seed(c.seed, 23);
    const SweepResult sweep = geometry_sweep(bundle.base, bundle.residuals_at(layer), bundle.pooled(), opts);
    for (const auto& w : sweep.warnings) err << "warning: " << w << "\n";

    std::string text;
    if (c.format == "csv") {
        text = "basis,p,fraction,relaxed_loss,qp_mse,gap,net_mse\n";
        for (const auto& r : sweep.rows)
            text += r.basis + "," + std::to_string(r.p) + "," + format_double(r.fraction) + "," +
                    format_double(r.relaxed_loss) + "," + format_double(r.qp_mse) + "," + format_double(r.gap) + "," +
                    format_double(r.net_mse) + "\n";
    } else {
        json rows = json::array();
        for (const auto& r : sweep.rows)
            rows.push_back({{"basis", r.basis},
                            {"p", r.p},
                            {"fraction", r.fraction},
                            {"relaxed_loss", r.relaxed_loss},
                            {"qp_mse", r.qp_mse},
                            {"gap", r.gap},
                            {"net_mse", r.net_mse},
                            {"approximate", r.approximate}});
        text = json{{"layer", layer}, {"rows", rows}, {"warnings", sweep.warnings}}.dump(2) + "\n";
    }
    write_output(c.out, text, out);
    return kExitOk;
}

// ---- eval ----

int cmd_eval(const EvalConfig& c, std::ostream& out, std::ostream&) {
    const ModelBundle model = load_bundle(c.model);
    const ModelBundle calib_bundle = c.calib.empty() ? model : load_bundle(c.calib);
    const CalibrationSet calib = calib_bundle.pooled();
    if (calib.size() == 0) throw InvalidArgument("no calibration samples to evaluate");
    const LinearNetwork net = c.task >= 0 ? model.finetuned(c.task) : model.base;
    if (net.input_dim() != calib.inputs.front().size() || net.output_dim() != calib.targets.front().size())
        throw DimensionError("model dimensions do not match the calibration data");
    const EvalMetrics m = evaluate(net, calib);
    json doc{{"samples", calib.size()}, {"mse", m.mse}, {"task_mse", task_json(m.task_mse)}};
    if (m.accuracy) {
        doc["accuracy"] = *m.accuracy;
        doc["task_accuracy"] = task_json(m.task_accuracy);
    }
    write_output(c.out, doc.dump(2) + "\n", out);
    return kExitOk;
}

// ---- compare ----

int cmd_compare(const CompareConfig& c, std::ostream& out, std::ostream& err) {
    check_format(c.format);
    const ModelBundle bundle = load_bundle(c.bundle);
    const int layer = pick_layer(bundle, c.layer);
    CompareOptions opts;
    opts.lambda_grid = c.lambdas;
    opts.keep_prob = c.keep_prob;
    opts.density = c.density;
    opts.seed = c.seed;
    opts.basis_size = c.p;
    opts.solver = c.solver.options();
    const CalibrationSet calib = bundle.pooled();
    const CompareResult res = compare_methods(bundle.base, bundle.residuals_at(layer), calib, opts);
    const std::vector<int> tasks = task_ids(calib);

    std::string text;
    if (c.format == "csv") {
        text = "method,layer,objective,mse" + task_header(tasks) + ",fraction,diagonal_feasible,status\n";
        for (const auto& r : res.rows) {
            text += r.method + "," + std::to_string(r.layer) + ",";
            if (r.failed) {
                text += "," + std::string(tasks.size(), ',') + ",";
            } else {
                text += format_double(r.objective) + "," + format_double(r.mse) + task_cells(r.task_mse, tasks) + ",";
            }
            text += (r.fraction && !r.failed ? format_double(*r.fraction) : std::string()) + "," +
                    (r.diagonal_feasible ? "1" : "0") + "," + (r.failed ? "failed" : "ok") + "\n";
        }
    } else {
        json rows = json::array();
        for (const auto& r : res.rows) {
            json j{{"method", r.method}, {"layer", r.layer}, {"diagonal_feasible", r.diagonal_feasible}, {"failed", r.failed}};
            if (r.failed) {
                j["error"] = r.error;
            } else {
                j["objective"] = r.objective;
                j["mse"] = r.mse;
                j["task_mse"] = task_json(r.task_mse);
                if (r.fraction) j["fraction"] = *r.fraction;
            }
            rows.push_back(j);
        }
        text = json{{"rows", rows}, {"dominance_ok", res.dominance_ok}}.dump(2) + "\n";
    }
    write_output(c.out, text, out);

    int code = kExitOk;
    for (const auto& r : res.rows) {
        if (r.failed) {
            err << "method " << r.method << " failed: " << r.error << "\n";
            code = kExitMethodFailure;
        }
    }
    if (!res.dominance_ok) {
        err << "dominance check failed: " << res.dominance_message << "\n";
        code = kExitMethodFailure;
    }
    return code;
}

void add_solver_flags(CLI::App* cmd, SolverFlags& s) {
    cmd->add_option("--solver", s.solver, "exact (closed form) or box (projected Adam)")->capture_default_str();
    cmd->add_option("--lo", s.lo, "box lower bound")->capture_default_str();
    cmd->add_option("--hi", s.hi, "box upper bound")->capture_default_str();
    cmd->add_option("--steps", s.steps, "box solver steps")->capture_default_str();
    cmd->add_option("--step-size", s.step_size, "box solver step size")->capture_default_str();
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Calibration-driven model merging toolkit"};
    app.require_subcommand(1);

    GenConfig gen;
    auto* g = app.add_subcommand("gen", "generate a synthetic bundle");
    g->add_option("--kind", gen.kind, "linear | shared-direction | relu")->capture_default_str();
    g->add_option("--out", gen.out, "output bundle path (stdout when omitted)");
    g->add_option("--tasks", gen.tasks, "number of tasks")->capture_default_str();
    g->add_option("--seed", gen.seed, "random seed")->capture_default_str();
    g->add_option("--input-dim", gen.input_dim, "input width d (default: the generator's own)");
    g->add_option("--hidden-dim", gen.hidden_dim, "hidden width r, rows of the merged layer (default: the generator's own)");
    g->add_option("--output-dim", gen.output_dim, "output width c (default: the generator's own)");
    g->add_option("--layers", gen.layers, "number of layers (linear)")->capture_default_str();
    g->add_option("--merge-layer", gen.merge_layer, "layer carrying the residuals (default: the generator's own)");
    g->add_option("--samples", gen.samples, "calibration samples per task (default: the generator's own)");
    g->add_option("--delta-scale", gen.delta_scale, "residual scale (linear)")->capture_default_str();
    g->add_option("--noise", gen.noise, "target noise std (linear)")->capture_default_str();
    g->add_option("--sigmas", gen.sigmas, "shared-direction strengths")->delimiter(',')->capture_default_str();
    g->add_option("--target-task", gen.target_task, "task whose outputs are the targets (shared-direction)")
        ->capture_default_str();
    g->add_option("--remainder-scale", gen.remainder_scale, "scale of the orthogonal remainder (shared-direction)")
        ->capture_default_str();
    g->add_option("--dims", gen.dims, "layer widths (relu)")->delimiter(',')->capture_default_str();
    g->add_option("--pretrain-steps", gen.pretrain_steps, "pretraining steps (relu)")->capture_default_str();
    g->add_option("--finetune-steps", gen.finetune_steps, "fine-tuning steps (relu)")->capture_default_str();
    g->add_option("--lr", gen.lr, "gradient step size (relu)")->capture_default_str();

    MergeConfig merge;
    auto* m = app.add_subcommand("merge", "merge residuals into the base network");
    m->add_option("--bundle", merge.bundle, "input bundle")->required();
    m->add_option("--method", merge.method, "base | soup | ta | dare | ties | fisher | qp-diag | qp-basis")
        ->capture_default_str();
    m->add_option("--lambda", merge.lambdas, "task-arithmetic scale(s); one value broadcasts")->delimiter(',');
    m->add_option("--keep-prob", merge.keep_prob, "DARE keep probability")->capture_default_str();
    m->add_option("--density", merge.density, "TIES density")->capture_default_str();
    m->add_option("--seed", merge.seed, "random seed")->capture_default_str();
    m->add_option("--basis", merge.basis, "eigen | standard | svd | random (qp-basis)")->capture_default_str();
    m->add_option("--p", merge.p, "basis size (0: min(r, c))")->capture_default_str();
    add_solver_flags(m, merge.solver);
    m->add_option("--layers", merge.layers, "all or a comma list of layers")->capture_default_str();
    m->add_option("--mode", merge.mode, "sequential | hybrid")->capture_default_str();
    m->add_option("--init-method", merge.init_method, "baseline applied first in hybrid mode")->capture_default_str();
    m->add_option("--out", merge.out, "merged model bundle path");
    m->add_option("--report", merge.report, "report path (stdout when omitted)");
    m->add_option("--format", merge.format, "csv | json")->capture_default_str();

    DiagnoseConfig diag;
    auto* d = app.add_subcommand("diagnose", "captured-energy sweep over basis families");
    d->add_option("--bundle", diag.bundle, "input bundle")->required();
    d->add_option("--layer", diag.layer, "merge layer (0: the only residual layer)")->capture_default_str();
    d->add_option("--p-min", diag.p_min, "smallest basis size")->capture_default_str();
    d->add_option("--p-max", diag.p_max, "largest basis size (0: min(r, c))")->capture_default_str();
    d->add_option("--random-bases", diag.random_bases, "number of random bases")->capture_default_str();
    d->add_option("--seed", diag.seed, "random seed")->capture_default_str();
    d->add_option("--out", diag.out, "output path (stdout when omitted)");
    d->add_option("--format", diag.format, "csv | json")->capture_default_str();

    EvalConfig ev;
    auto* e = app.add_subcommand("eval", "evaluate a model on calibration data");
    e->add_option("--model", ev.model, "model bundle (its base network is evaluated)")->required();
    e->add_option("--calib", ev.calib, "bundle providing calibration data (default: the model bundle)");
    e->add_option("--task", ev.task, "evaluate the fine-tune of this task instead of the base")->capture_default_str();
    e->add_option("--out", ev.out, "output path (stdout when omitted)");

    CompareConfig cmp;
    auto* c = app.add_subcommand("compare", "run every single-layer method and tabulate");
    c->add_option("--bundle", cmp.bundle, "input bundle")->required();
    c->add_option("--layer", cmp.layer, "merge layer (0: the only residual layer)")->capture_default_str();
    c->add_option("--lambdas", cmp.lambdas, "task-arithmetic grid")->delimiter(',')->capture_default_str();
    c->add_option("--keep-prob", cmp.keep_prob, "DARE keep probability")->capture_default_str();
    c->add_option("--density", cmp.density, "TIES density")->capture_default_str();
    c->add_option("--seed", cmp.seed, "random seed")->capture_default_str();
    c->add_option("--p", cmp.p, "qp-basis size (0: min(r, c))")->capture_default_str();
    add_solver_flags(c, cmp.solver);
    c->add_option("--out", cmp.out, "output path (stdout when omitted)");
    c->add_option("--format", cmp.format, "csv | json")->capture_default_str();

    std::vector<std::string> argv_store{"qpmerge"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& s : argv_store) argv.push_back(s.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::ParseError& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    }

    try {
        if (g->parsed()) return cmd_gen(gen, out, err);
        if (m->parsed()) return cmd_merge(merge, out, err);
        if (d->parsed()) return cmd_diagnose(diag, out, err);
        if (e->parsed()) return cmd_eval(ev, out, err);
        if (c->parsed()) return cmd_compare(cmp, out, err);
    } catch (const NumericalError& ex) {
        err << "numerical failure: " << ex.what() << "\n";
        return kExitNumerical;
    } catch (const Error& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& ex) {
        err << "error: " << ex.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}

}  // namespace qpmerge
