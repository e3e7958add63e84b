#include "qpmerge/generators.hpp"

#include <cmath>
#include <random>

#include "qpmerge/basis.hpp"

namespace qpmerge {
namespace {

using nlohmann::json;

class Gaussian {
public:
    explicit Gaussian(std::uint64_t seed) : rng_(seed) {}
    double operator()() { return normal_(rng_); }
    Matrix matrix(Eigen::Index rows, Eigen::Index cols, double scale) {
        Matrix m(rows, cols);
        // row-major fill order, independent of Eigen's storage order
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * normal_(rng_);
        return m;
    }
    Vector vector(Eigen::Index n, double scale) {
        Vector v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = scale * normal_(rng_);
        return v;
    }
    Vector unit(Eigen::Index n) {
        Vector v = vector(n, 1.0);
        return v / v.norm();
    }

private:
    std::mt19937_64 rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

enum Stream : std::uint64_t { kWeights = 1, kDeltas, kInputs, kNoise, kDirections, kRemainders, kClasses, kTrain };

json to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

// Full-batch gradient of mean ||h(x) - y||^2 with respect to one layer's weights.
Matrix layer_gradient(const LinearNetwork& net, int layer, const std::vector<Vector>& xs, const std::vector<Vector>& ys) {
    const Matrix& w = net.weight(layer);
    Matrix grad = Matrix::Zero(w.rows(), w.cols());
    for (std::size_t j = 0; j < xs.size(); ++j) {
        const Vector err = forward(net, xs[j]) - ys[j];
        const Matrix jac = linearize_downstream(net, layer, xs[j]).matrix;
        grad.noalias() += (jac.transpose() * err) * layer_input(net, layer, xs[j]).transpose();
    }
    return grad * (2.0 / static_cast<double>(xs.size()));
}

}  // namespace

ModelBundle gen_linear_tasks(const LinearTaskSpec& spec) {
    if (spec.input_dim < 1 || spec.hidden_dim < 1 || spec.output_dim < 1 || spec.layers < 1)
        throw InvalidArgument("linear task spec needs positive dimensions and at least one layer");
    if (spec.merge_layer < 1 || spec.merge_layer > spec.layers) throw InvalidArgument("merge layer outside [1, layers]");
    if (spec.tasks < 1 || spec.samples_per_task < 1) throw InvalidArgument("need at least one task and one sample");
    if (spec.delta_scale < 0.0 || spec.noise < 0.0) throw InvalidArgument("scales must be non-negative");

    Gaussian weights(derive_seed(spec.seed, kWeights));
    Gaussian deltas(derive_seed(spec.seed, kDeltas));
    Gaussian inputs(derive_seed(spec.seed, kInputs));
    Gaussian noise(derive_seed(spec.seed, kNoise));

    std::vector<Matrix> layers;
    Eigen::Index in = spec.input_dim;
    for (int l = 1; l <= spec.layers; ++l) {
        const Eigen::Index out = l == spec.layers ? spec.output_dim : spec.hidden_dim;
        layers.push_back(weights.matrix(out, in, 1.0 / std::sqrt(static_cast<double>(in))));
        in = out;
    }

    ModelBundle b;
    b.base = LinearNetwork::linear(std::move(layers));
    const Matrix& w = b.base.weight(spec.merge_layer);
    for (int k = 0; k < spec.tasks; ++k)
        b.residuals.push_back({spec.merge_layer, deltas.matrix(w.rows(), w.cols(), spec.delta_scale), k});

    for (int k = 0; k < spec.tasks; ++k) {
        const LinearNetwork tuned = b.finetuned(k);
        TaskCalibration c;
        c.task = k;
        for (int j = 0; j < spec.samples_per_task; ++j) {
            c.inputs.push_back(inputs.vector(spec.input_dim, 1.0));
            Vector y = forward(tuned, c.inputs.back());
            if (spec.noise > 0.0) y += noise.vector(y.size(), spec.noise);
            c.targets.push_back(std::move(y));
        }
        b.calibration.push_back(std::move(c));
    }
    b.meta = {{"generator", "linear"},
              {"input_dim", spec.input_dim},
              {"hidden_dim", spec.hidden_dim},
              {"output_dim", spec.output_dim},
              {"layers", spec.layers},
              {"merge_layer", spec.merge_layer},
              {"tasks", spec.tasks},
              {"samples_per_task", spec.samples_per_task},
              {"delta_scale", spec.delta_scale},
              {"noise", spec.noise},
              {"seed", spec.seed}};
    return b;
}

ModelBundle gen_shared_direction_instance(const SharedDirectionSpec& spec) {
    if (spec.sigmas.empty()) throw InvalidArgument("shared-direction instance needs at least one sigma");
    for (double s : spec.sigmas)
        if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidArgument("sigmas must be finite and >= 0");
    if (spec.input_dim < 2 || spec.rows < 2) throw InvalidArgument("shared-direction instance needs d >= 2 and r >= 2");
    if (spec.output_dim < spec.rows)
        throw InvalidArgument("downstream isometry needs output_dim >= rows (c >= r)");
    const int tasks = static_cast<int>(spec.sigmas.size());
    if (spec.target_task < 0 || spec.target_task >= tasks) throw InvalidArgument("target task outside the task set");
    if (spec.samples < 1) throw InvalidArgument("need at least one calibration sample");

    Gaussian weights(derive_seed(spec.seed, kWeights));
    Gaussian dirs(derive_seed(spec.seed, kDirections));
    Gaussian rem(derive_seed(spec.seed, kRemainders));
    Gaussian inputs(derive_seed(spec.seed, kInputs));

    const Vector u = dirs.unit(spec.rows);
    const Vector v = dirs.unit(spec.input_dim);
    const Matrix pu = Matrix::Identity(spec.rows, spec.rows) - u * u.transpose();
    const Matrix pv = Matrix::Identity(spec.input_dim, spec.input_dim) - v * v.transpose();
    const Matrix l = random_basis(spec.output_dim, spec.rows, derive_seed(spec.seed, kWeights + 100)).columns;

    ModelBundle b;
    b.base.layers = {weights.matrix(spec.rows, spec.input_dim, 1.0 / std::sqrt(static_cast<double>(spec.input_dim))), l};
    b.base.activations = {Activation::identity};
    b.base.validate();
    for (int k = 0; k < tasks; ++k) {
        const Matrix remainder = pu * rem.matrix(spec.rows, spec.input_dim, spec.remainder_scale) * pv;
        b.residuals.push_back({1, spec.sigmas[static_cast<std::size_t>(k)] * u * v.transpose() + remainder, k});
    }
    const LinearNetwork tuned = b.finetuned(spec.target_task);
    TaskCalibration c;
    c.task = spec.target_task;
    for (int j = 0; j < spec.samples; ++j) {
        c.inputs.push_back(inputs.vector(spec.input_dim, 1.0));
        c.targets.push_back(forward(tuned, c.inputs.back()));
    }
    b.calibration.push_back(std::move(c));

    json sig = json::array();
    for (double s : spec.sigmas) sig.push_back(s);
    b.meta = {{"generator", "shared-direction"}, {"sigmas", sig},          {"target_task", spec.target_task},
              {"u", to_json(u)},                 {"v", to_json(v)},        {"rows", spec.rows},
              {"output_dim", spec.output_dim},   {"input_dim", spec.input_dim}, {"samples", spec.samples},
              {"remainder_scale", spec.remainder_scale}, {"seed", spec.seed}};
    validate_shared_direction(b);
    return b;
}

Vector shared_direction(const ModelBundle& bundle) {
    if (!bundle.meta.contains("u")) throw InvalidArgument("bundle carries no shared direction");
    const auto& arr = bundle.meta.at("u");
    Vector u(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) u[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    return u;
}

void validate_shared_direction(const ModelBundle& bundle) {
    const Vector u = shared_direction(bundle);
    const auto& varr = bundle.meta.at("v");
    Vector v(static_cast<Eigen::Index>(varr.size()));
    for (std::size_t i = 0; i < varr.size(); ++i) v[static_cast<Eigen::Index>(i)] = varr[i].get<double>();
    const auto& sig = bundle.meta.at("sigmas");
    if (bundle.base.depth() != 2 || bundle.residuals.size() != sig.size())
        throw NumericalError("bundle does not have the shared-direction layout");

    const Matrix& l = bundle.base.layers[1];
    const double iso = (l.transpose() * l - Matrix::Identity(l.cols(), l.cols())).cwiseAbs().maxCoeff();
    if (iso > 1e-10) throw NumericalError("downstream isometry violated: |L^T L - I| = " + std::to_string(iso));
    for (std::size_t k = 0; k < bundle.residuals.size(); ++k) {
        const Matrix remainder = bundle.residuals[k].delta - sig[k].get<double>() * u * v.transpose();
        const double leak = (u.transpose() * remainder).cwiseAbs().maxCoeff();
        if (leak > 1e-12)
            throw NumericalError("shared direction violated for task " + std::to_string(k) + ": |u^T R| = " +
                                 std::to_string(leak));
    }
}

ModelBundle gen_relu_tasks(const ReluTaskSpec& spec) {
    if (spec.dims.size() < 2) throw InvalidArgument("ReLU spec needs at least input and output dims");
    for (int d : spec.dims)
        if (d < 1) throw InvalidArgument("ReLU spec dims must be positive");
    const int depth = static_cast<int>(spec.dims.size()) - 1;
    if (spec.merge_layer < 1 || spec.merge_layer > depth) throw InvalidArgument("merge layer outside [1, layers]");
    const int classes = spec.dims.back();
    if (spec.tasks < 1 || spec.tasks > classes) throw InvalidArgument("need 1 <= tasks <= number of classes");
    if (spec.samples_per_task < 1 || spec.train_per_class < 1) throw InvalidArgument("need positive sample counts");
    if (spec.pretrain_steps < 0 || spec.finetune_steps < 0) throw InvalidArgument("step counts must be >= 0");

    Gaussian weights(derive_seed(spec.seed, kWeights));
    Gaussian cls(derive_seed(spec.seed, kClasses));
    Gaussian train(derive_seed(spec.seed, kTrain));
    Gaussian calib(derive_seed(spec.seed, kInputs));

    const int in_dim = spec.dims.front();
    std::vector<Vector> means;
    for (int c = 0; c < classes; ++c) means.push_back(cls.vector(in_dim, spec.class_separation / std::sqrt(in_dim)));
    auto one_hot = [&](int c) {
        Vector y = Vector::Zero(classes);
        y[c] = 1.0;
        return y;
    };
    auto draw = [&](Gaussian& g, int c) { return Vector(means[static_cast<std::size_t>(c)] + g.vector(in_dim, 1.0)); };

    LinearNetwork net;
    for (int l = 0; l < depth; ++l)
        net.layers.push_back(weights.matrix(spec.dims[static_cast<std::size_t>(l) + 1], spec.dims[static_cast<std::size_t>(l)],
                                            std::sqrt(2.0 / spec.dims[static_cast<std::size_t>(l)])));
    net.activations.assign(static_cast<std::size_t>(depth - 1), Activation::relu);
    net.validate();

    // pretraining on every class, all layers
    std::vector<Vector> xs, ys;
    std::vector<int> labels;
    for (int c = 0; c < classes; ++c)
        for (int i = 0; i < spec.train_per_class; ++i) {
            xs.push_back(draw(train, c));
            ys.push_back(one_hot(c));
            labels.push_back(c);
        }
    for (int step = 0; step < spec.pretrain_steps; ++step) {
        std::vector<Matrix> grads;
        for (int l = 1; l <= depth; ++l) grads.push_back(layer_gradient(net, l, xs, ys));
        for (int l = 0; l < depth; ++l) net.layers[static_cast<std::size_t>(l)] -= spec.pretrain_lr * grads[static_cast<std::size_t>(l)];
    }

    ModelBundle b;
    b.base = net;
    for (int k = 0; k < spec.tasks; ++k) {
        std::vector<Vector> tx, ty;
        for (std::size_t i = 0; i < xs.size(); ++i)
            if (labels[i] % spec.tasks == k) {
                tx.push_back(xs[i]);
                ty.push_back(ys[i]);
            }
        LinearNetwork tuned = net;
        for (int step = 0; step < spec.finetune_steps; ++step)
            tuned.layers[static_cast<std::size_t>(spec.merge_layer - 1)] -=
                spec.finetune_lr * layer_gradient(tuned, spec.merge_layer, tx, ty);
        b.residuals.push_back({spec.merge_layer, tuned.weight(spec.merge_layer) - net.weight(spec.merge_layer), k});
    }

    for (int k = 0; k < spec.tasks; ++k) {
        std::vector<int> own;
        for (int c = 0; c < classes; ++c)
            if (c % spec.tasks == k) own.push_back(c);
        const LinearNetwork tuned = b.finetuned(k);
        TaskCalibration c;
        c.task = k;
        for (int j = 0; j < spec.samples_per_task; ++j) {
            c.inputs.push_back(draw(calib, own[static_cast<std::size_t>(j) % own.size()]));
            c.targets.push_back(forward(tuned, c.inputs.back()));
        }
        b.calibration.push_back(std::move(c));
    }

    json dims = json::array();
    for (int d : spec.dims) dims.push_back(d);
    b.meta = {{"generator", "relu"},
              {"dims", dims},
              {"merge_layer", spec.merge_layer},
              {"tasks", spec.tasks},
              {"samples_per_task", spec.samples_per_task},
              {"train_per_class", spec.train_per_class},
              {"pretrain_steps", spec.pretrain_steps},
              {"finetune_steps", spec.finetune_steps},
              {"pretrain_lr", spec.pretrain_lr},
              {"finetune_lr", spec.finetune_lr},
              {"class_separation", spec.class_separation},
              {"seed", spec.seed}};
    return b;
}

}  // namespace qpmerge
