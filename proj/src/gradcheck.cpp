#include "gradbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gradbench/autodiff.hpp"
#include "gradbench/errors.hpp"
#include "gradbench/network.hpp"
#include "gradbench/ops.hpp"
#include "gradbench/rng.hpp"

namespace gradbench {

Tensor finite_difference_grad(const ScalarFn& f, const Tensor& point, std::span<const std::size_t> indices,
                              double h) {
    if (!(h > 0.0)) throw ValueError("finite_difference_grad: step must be positive");
    Tensor grad = Tensor::like(point);
    Tensor probe = point;
    for (std::size_t i : indices) {
        const double x = point[i];
        probe[i] = x + h;
        const double up = f(probe);
        probe[i] = x - h;
        const double down = f(probe);
        probe[i] = x;
        grad[i] = (up - down) / (2.0 * h);
    }
    return grad;
}

Tensor finite_difference_grad(const ScalarFn& f, const Tensor& point, double h) {
    std::vector<std::size_t> all(point.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return finite_difference_grad(f, point, all, h);
}

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, std::span<const std::size_t> indices,
                          double floor) {
    if (analytic.shape() != numeric.shape()) {
        throw ShapeError("max_relative_error: " + shape_string(analytic.shape()) + " vs " +
                         shape_string(numeric.shape()));
    }
    double worst = 0.0;
    if (indices.empty()) {
        for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
    } else {
        for (std::size_t i : indices) worst = std::max(worst, relative_error(analytic[i], numeric[i], floor));
    }
    return worst;
}

bool GradCheckReport::passed() const {
    return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

namespace {

Tensor random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Uniform values in [-1, 1] with |x| >= margin, away from the relu kink.
Tensor kink_free_tensor(Rng& rng, Shape shape, double margin) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        const double mag = rng.uniform(margin, 1.0);
        v = rng.bernoulli(0.5) ? mag : -mag;
    }
    return t;
}

// A shuffled grid of values at least 0.01 apart, so no window max is tied
// or close enough to swap under a finite-difference step.
Tensor separated_tensor(Rng& rng, Shape shape) {
    Tensor t(std::move(shape));
    std::vector<double> values(t.size());
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = -1.0 + 0.01 * static_cast<double>(i);
    rng.shuffle(std::span<double>(values));
    std::copy(values.begin(), values.end(), t.data().begin());
    return t;
}

using OpForward = std::function<Variable(Graph&, const std::vector<Variable>&)>;

// Reduces an arbitrary output to a scalar with fixed random weights so that
// every output element receives a distinct upstream gradient.
Variable weighted_sum(Graph& g, const Variable& y, const Tensor& weights) {
    return sum(g, mul(g, y, Variable::constant(weights.reshaped(y.shape()))));
}

GradCheckEntry check_op(const std::string& name, const std::vector<Tensor>& inputs,
                        const std::vector<bool>& differentiable, const OpForward& forward,
                        const GradCheckOptions& opt, bool corrupt) {
    std::vector<Variable> vars;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        vars.push_back(differentiable[i] ? Variable::parameter(inputs[i], "in" + std::to_string(i))
                                         : Variable::constant(inputs[i]));
    }
    Graph g;
    Variable loss = forward(g, vars);
    g.backward(loss);

    GradCheckEntry entry{name, 0.0, 0, true};
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!differentiable[i]) continue;
        Tensor analytic = vars[i].grad();
        if (corrupt) {
            analytic[0] += 1e-2 * std::max(1.0, std::abs(analytic[0]));
            corrupt = false;
        }
        const ScalarFn f = [&](const Tensor& probe) {
            std::vector<Variable> consts;
            for (std::size_t j = 0; j < inputs.size(); ++j) consts.push_back(Variable::constant(j == i ? probe : inputs[j]));
            Graph inference(false);
            return forward(inference, consts).value().item();
        };
        const Tensor numeric = finite_difference_grad(f, inputs[i], opt.step);
        entry.max_rel_error = std::max(entry.max_rel_error, max_relative_error(analytic, numeric));
        entry.checked += analytic.size();
    }
    entry.passed = entry.max_rel_error <= opt.tolerance;
    return entry;
}

std::vector<GradCheckEntry> check_ops(const GradCheckOptions& opt) {
    Rng rng(derive_seed(opt.seed, {hash_name("gradcheck.ops")}));
    std::vector<GradCheckEntry> out;
    bool corrupt = opt.corrupt_gradient;
    auto run = [&](const std::string& name, const std::vector<Tensor>& inputs, const std::vector<bool>& diff,
                   const OpForward& fwd) {
        out.push_back(check_op(name, inputs, diff, fwd, opt, corrupt));
        corrupt = false;
    };

    {
        const Tensor w = random_tensor(rng, {3, 3});
        run("matmul", {random_tensor(rng, {3, 3}), random_tensor(rng, {3, 3})}, {true, true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, matmul(g, v[0], v[1]), w); });
    }
    {
        const Tensor w = random_tensor(rng, {4, 3});
        run("add_bias", {random_tensor(rng, {4, 3}), random_tensor(rng, {3})}, {true, true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, add_bias(g, v[0], v[1]), w); });
    }
    {
        const Tensor w = random_tensor(rng, {2, 5});
        run("add", {random_tensor(rng, {2, 5}), random_tensor(rng, {2, 5})}, {true, true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, add(g, v[0], v[1]), w); });
        run("mul", {random_tensor(rng, {2, 5}), random_tensor(rng, {2, 5})}, {true, true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, mul(g, v[0], v[1]), w); });
    }
    {
        const Tensor w = random_tensor(rng, {3, 4});
        run("relu", {kink_free_tensor(rng, {3, 4}, 1e-3)}, {true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, relu(g, v[0]), w); });
    }
    {
        const Tensor w1 = random_tensor(rng, {2 * 4 * 5 * 5});
        run("conv2d(stride1,pad1)",
            {random_tensor(rng, {2, 3, 5, 5}), random_tensor(rng, {4, 3, 3, 3}), random_tensor(rng, {4})},
            {true, true, true}, [w1](Graph& g, const std::vector<Variable>& v) {
                return weighted_sum(g, conv2d(g, v[0], v[1], v[2], 1, 1), w1);
            });
        const Tensor w2 = random_tensor(rng, {2 * 4 * 3 * 3});
        run("conv2d(stride2,pad1)",
            {random_tensor(rng, {2, 3, 5, 5}), random_tensor(rng, {4, 3, 3, 3}), random_tensor(rng, {4})},
            {true, true, true}, [w2](Graph& g, const std::vector<Variable>& v) {
                return weighted_sum(g, conv2d(g, v[0], v[1], v[2], 2, 1), w2);
            });
        const Tensor w3 = random_tensor(rng, {2 * 4 * 6 * 6});
        run("conv2d(1x1)", {random_tensor(rng, {2, 3, 6, 6}), random_tensor(rng, {4, 3, 1, 1})}, {true, true},
            [w3](Graph& g, const std::vector<Variable>& v) {
                return weighted_sum(g, conv2d(g, v[0], v[1], Variable{}, 1, 0), w3);
            });
    }
    {
        const Tensor w = random_tensor(rng, {2 * 2 * 2 * 2});
        run("maxpool2d", {separated_tensor(rng, {2, 2, 4, 4})}, {true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, maxpool2d(g, v[0], 2, 2), w); });
    }
    for (Mode mode : {Mode::train, Mode::eval}) {
        const Tensor w = random_tensor(rng, {16});
        BatchNormState stats{random_tensor(rng, {2}, -0.5, 0.5), random_tensor(rng, {2}, 0.5, 1.5)};
        run(mode == Mode::train ? "batchnorm2d(train)" : "batchnorm2d(eval)",
            {random_tensor(rng, {2, 2, 2, 2}), random_tensor(rng, {2}, 0.5, 1.5), random_tensor(rng, {2})},
            {true, true, true}, [w, stats, mode](Graph& g, const std::vector<Variable>& v) {
                BatchNormState local = stats;
                return weighted_sum(g, batchnorm2d(g, v[0], v[1], v[2], local, mode), w);
            });
    }
    {
        const Tensor w = random_tensor(rng, {2 * 3});
        run("global_avg_pool", {random_tensor(rng, {2, 3, 4, 4})}, {true},
            [w](Graph& g, const std::vector<Variable>& v) { return weighted_sum(g, global_avg_pool(g, v[0]), w); });
    }
    {
        const std::vector<int> labels = {0, 3, 4, 1};
        run("softmax_cross_entropy", {random_tensor(rng, {4, 5}, -2.0, 2.0)}, {true},
            [labels](Graph& g, const std::vector<Variable>& v) { return softmax_cross_entropy(g, v[0], labels); });
    }
    return out;
}

GradCheckEntry check_network(nn::Architecture arch, const GradCheckOptions& opt, bool corrupt) {
    const nn::InputSpec spec{3, 32, 32};
    const std::size_t classes = 5;
    nn::Network net = nn::Network::build(arch, spec, classes, 1, opt.seed);
    Rng rng(derive_seed(opt.seed, {hash_name("gradcheck.network"), static_cast<std::uint64_t>(arch)}));
    const Tensor batch = random_tensor(rng, {2, spec.channels, spec.height, spec.width}, 0.0, 1.0);
    const std::vector<int> labels = {static_cast<int>(rng.below(classes)), static_cast<int>(rng.below(classes))};

    auto loss_of = [&](Graph& g) { return softmax_cross_entropy(g, net.forward(g, batch, Mode::train), labels); };
    // Loss plus the hash of every relu/maxpool decision taken on the way.
    auto probe = [&]() {
        Graph g(false);
        g.enable_decision_trace();
        const double loss = loss_of(g).value().item();
        return std::pair{loss, g.decision_hash()};
    };
    {
        Graph g;
        Variable loss = loss_of(g);
        g.backward(loss);
    }
    const std::uint64_t base_decisions = probe().second;

    GradCheckEntry entry{std::string(nn::architecture_name(arch)), 0.0, 0, true};
    for (Variable& p : net.parameters()) {
        const Tensor original = p.value();
        const Tensor& analytic = p.grad();
        std::size_t accepted = 0;
        // Sampled entries whose +-h probes flip a relu mask or a pooling
        // argmax straddle a kink and are skipped; a bounded number of extra
        // draws replaces them.
        for (std::size_t attempt = 0; accepted < std::min(opt.samples_per_tensor, original.size()) &&
                                      attempt < 4 * opt.samples_per_tensor;
             ++attempt) {
            const std::size_t i = rng.below(original.size());
            p.value()[i] = original[i] + opt.step;
            const auto [up, up_decisions] = probe();
            p.value()[i] = original[i] - opt.step;
            const auto [down, down_decisions] = probe();
            p.value()[i] = original[i];
            if (up_decisions != base_decisions || down_decisions != base_decisions) continue;
            double a = analytic[i];
            if (corrupt) {
                a += 1e-2 * std::max(1.0, std::abs(a));
                corrupt = false;
            }
            const double numeric = (up - down) / (2.0 * opt.step);
            entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
            ++accepted;
        }
        entry.checked += accepted;
    }
    entry.passed = entry.max_rel_error <= opt.tolerance && entry.checked > 0;
    return entry;
}

}  // namespace

GradCheckReport run_gradcheck(const GradCheckOptions& options) {
    GradCheckReport report;
    if (options.scope == GradCheckScope::ops) {
        report.entries = check_ops(options);
    } else {
        bool corrupt = options.corrupt_gradient;
        for (nn::Architecture arch :
             {nn::Architecture::mini_vgg, nn::Architecture::mini_resnet18, nn::Architecture::mini_resnet34}) {
            report.entries.push_back(check_network(arch, options, corrupt));
            corrupt = false;
        }
    }
    return report;
}

}  // namespace gradbench
