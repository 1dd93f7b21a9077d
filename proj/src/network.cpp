#include "gradbench/network.hpp"

#include <cmath>

#include "gradbench/errors.hpp"
#include "gradbench/rng.hpp"

namespace gradbench::nn {

std::string_view architecture_name(Architecture arch) {
    switch (arch) {
        case Architecture::mini_vgg: return "mini_vgg";
        case Architecture::mini_resnet18: return "mini_resnet18";
        case Architecture::mini_resnet34: return "mini_resnet34";
        case Architecture::custom: return "custom";
    }
    return "custom";
}

Architecture parse_architecture(std::string_view name) {
    if (name == "mini_vgg") return Architecture::mini_vgg;
    if (name == "mini_resnet18") return Architecture::mini_resnet18;
    if (name == "mini_resnet34") return Architecture::mini_resnet34;
    throw ValueError("unknown architecture '" + std::string(name) +
                     "'; valid names: mini_vgg, mini_resnet18, mini_resnet34");
}

namespace {

// He-normal for weights (fan-in = all axes but the output one), zeros for
// biases and beta, ones for gamma.
Tensor initial_value(std::string_view name, const Shape& shape, std::uint64_t seed) {
    auto ends_with = [&](std::string_view suffix) {
        return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
    };
    if (ends_with(".gamma")) return Tensor(shape, 1.0);
    if (ends_with(".bias") || ends_with(".beta")) return Tensor(shape, 0.0);
    std::size_t fan_in = 0;
    if (shape.size() == 4) {
        fan_in = shape[1] * shape[2] * shape[3];  // [O x C x kh x kw]
    } else if (shape.size() == 2) {
        fan_in = shape[0];  // [in x out]
    } else {
        fan_in = shape_numel(shape);
    }
    Rng rng(derive_seed(seed, {hash_name(name)}));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (double& v : t.data()) v = stddev * rng.normal();
    return t;
}

struct Builder {
    Network& net;
    std::uint64_t seed;

    std::size_t param(const std::string& name, const Shape& shape) {
        return net.add_parameter(name, initial_value(name, shape, seed));
    }

    ConvLayer conv(const std::string& name, std::size_t in, std::size_t out, std::size_t k, std::size_t stride,
                   bool with_bias) {
        ConvLayer c;
        c.weight = param(name + ".weight", {out, in, k, k});
        if (with_bias) c.bias = param(name + ".bias", {out});
        c.stride = stride;
        c.padding = k / 2;
        return c;
    }

    BatchNormLayer bn(const std::string& name, std::size_t channels) {
        BatchNormLayer b;
        b.gamma = param(name + ".gamma", {channels});
        b.beta = param(name + ".beta", {channels});
        b.state = net.add_state(name, channels);
        return b;
    }

    DenseLayer dense(const std::string& name, std::size_t in, std::size_t out) {
        DenseLayer d;
        d.weight = param(name + ".weight", {in, out});
        d.bias = param(name + ".bias", {out});
        return d;
    }

    ResidualBlock block(const std::string& name, std::size_t in, std::size_t out, std::size_t stride) {
        ResidualBlock b;
        b.conv1 = conv(name + ".conv1", in, out, 3, stride, false);
        b.bn1 = bn(name + ".bn1", out);
        b.conv2 = conv(name + ".conv2", out, out, 3, 1, false);
        b.bn2 = bn(name + ".bn2", out);
        if (stride != 1 || in != out) {
            b.projection = conv(name + ".proj", in, out, 1, stride, false);
            b.projection_bn = bn(name + ".proj_bn", out);
        }
        return b;
    }
};

void validate_build(const InputSpec& input, std::size_t classes, std::size_t width) {
    if (input.channels == 0) throw ValueError("input must have at least one channel");
    if (input.height < 16 || input.width < 16 || input.height % 8 != 0 || input.width % 8 != 0) {
        throw ValueError("input height and width must be >= 16 and divisible by 8, got " +
                         std::to_string(input.height) + "x" + std::to_string(input.width));
    }
    if (classes < 2) throw ValueError("class count must be >= 2, got " + std::to_string(classes));
    if (width < 1) throw ValueError("width multiplier must be >= 1");
}

}  // namespace

Network::Network(InputSpec input, std::size_t classes, Architecture arch, std::size_t width)
    : arch_(arch), input_(input), classes_(classes), width_(width) {}

Network Network::build(Architecture arch, InputSpec input, std::size_t classes, std::size_t width,
                       std::uint64_t seed) {
    if (arch == Architecture::custom) throw ValueError("build() needs a named architecture");
    validate_build(input, classes, width);
    Network net(input, classes, arch, width);
    Builder b{net, seed};
    const std::size_t widths[3] = {16 * width, 32 * width, 64 * width};

    if (arch == Architecture::mini_vgg) {
        std::size_t in = input.channels;
        for (std::size_t s = 0; s < 3; ++s) {
            const std::string stage = "stage" + std::to_string(s + 1);
            net.add_layer(b.conv(stage + ".conv1", in, widths[s], 3, 1, true));
            net.add_layer(ReluLayer{});
            net.add_layer(b.conv(stage + ".conv2", widths[s], widths[s], 3, 1, true));
            net.add_layer(ReluLayer{});
            net.add_layer(MaxPoolLayer{2, 2});
            in = widths[s];
        }
        const std::size_t flat = widths[2] * (input.height / 8) * (input.width / 8);
        net.add_layer(FlattenLayer{});
        net.add_layer(b.dense("fc", flat, 128 * width));
        net.add_layer(ReluLayer{});
        net.add_layer(b.dense("head", 128 * width, classes));
        return net;
    }

    const std::size_t blocks = arch == Architecture::mini_resnet18 ? 2 : 3;
    net.add_layer(b.conv("stem.conv", input.channels, widths[0], 3, 1, false));
    net.add_layer(b.bn("stem.bn", widths[0]));
    net.add_layer(ReluLayer{});
    std::size_t in = widths[0];
    for (std::size_t s = 0; s < 3; ++s) {
        for (std::size_t k = 0; k < blocks; ++k) {
            const std::size_t stride = (s > 0 && k == 0) ? 2 : 1;
            const std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(k + 1);
            net.add_layer(b.block(name, in, widths[s], stride));
            in = widths[s];
        }
    }
    net.add_layer(GlobalAvgPoolLayer{});
    net.add_layer(b.dense("head", widths[2], classes));
    return net;
}

std::size_t Network::add_parameter(std::string name, Tensor init) {
    if (index_.count(name)) throw ValueError("duplicate parameter name '" + name + "'");
    const std::size_t idx = params_.size();
    index_.emplace(name, idx);
    params_.push_back(Variable::parameter(std::move(init), std::move(name)));
    return idx;
}

std::size_t Network::add_state(std::string name, std::size_t channels) {
    states_.push_back({std::move(name), BatchNormState::fresh(channels)});
    return states_.size() - 1;
}

bool Network::has_parameter(std::string_view name) const { return index_.count(std::string(name)) != 0; }

Variable& Network::parameter(std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValueError("no parameter named '" + std::string(name) + "'");
    return params_[it->second];
}

const Variable& Network::parameter(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ValueError("no parameter named '" + std::string(name) + "'");
    return params_[it->second];
}

std::vector<std::string> Network::head_parameter_names() const {
    // The head is the last dense layer.
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
        if (const auto* d = std::get_if<DenseLayer>(&*it)) {
            std::vector<std::string> names{params_[d->weight].name()};
            if (d->bias != kNoParam) names.push_back(params_[d->bias].name());
            return names;
        }
    }
    return {};
}

bool Network::is_head_parameter(std::string_view name) const {
    for (const std::string& h : head_parameter_names()) {
        if (h == name) return true;
    }
    return false;
}

void Network::reinitialize_parameter(std::string_view name, std::uint64_t seed) {
    Variable& p = parameter(name);
    p.value() = initial_value(name, p.shape(), seed);
}

void Network::zero_grad() {
    for (Variable& p : params_) p.zero_grad();
}

void Network::set_batchnorm_fixed(bool on) {
    for (NamedState& s : states_) s.fixed = on;
}

void Network::set_all_trainable(bool on) {
    for (Variable& p : params_) p.set_trainable(on);
}

Network Network::clone() const {
    Network copy(input_, classes_, arch_, width_);
    copy.layers_ = layers_;
    copy.index_ = index_;
    copy.states_ = states_;
    copy.params_.reserve(params_.size());
    for (const Variable& p : params_) {
        Variable fresh = Variable::parameter(p.value(), p.name());
        fresh.set_trainable(p.trainable());
        copy.params_.push_back(std::move(fresh));
    }
    return copy;
}

Variable Network::forward(Graph& g, const Tensor& batch, Mode mode) {
    const Shape& s = batch.shape();
    if (s.size() != 4 || s[1] != input_.channels || s[2] != input_.height || s[3] != input_.width) {
        throw ShapeError("network expects input [N x " + std::to_string(input_.channels) + " x " +
                         std::to_string(input_.height) + " x " + std::to_string(input_.width) + "], got " +
                         shape_string(s));
    }
    Variable x = Variable::constant(batch);
    for (const Layer& layer : layers_) x = run_layer(g, layer, x, mode);
    return x;
}

Variable Network::run_conv(Graph& g, const ConvLayer& c, const Variable& x) {
    const Variable bias = c.bias == kNoParam ? Variable{} : params_[c.bias];
    return conv2d(g, x, params_[c.weight], bias, c.stride, c.padding);
}

Variable Network::run_bn(Graph& g, const BatchNormLayer& b, const Variable& x, Mode mode) {
    NamedState& s = states_[b.state];
    return batchnorm2d(g, x, params_[b.gamma], params_[b.beta], s.state, s.fixed ? Mode::eval : mode);
}

Variable Network::run_layer(Graph& g, const Layer& layer, const Variable& x, Mode mode) {
    return std::visit(
        [&](const auto& l) -> Variable {
            using T = std::decay_t<decltype(l)>;
            if constexpr (std::is_same_v<T, ConvLayer>) {
                return run_conv(g, l, x);
            } else if constexpr (std::is_same_v<T, BatchNormLayer>) {
                return run_bn(g, l, x, mode);
            } else if constexpr (std::is_same_v<T, DenseLayer>) {
                const Variable bias = l.bias == kNoParam ? Variable{} : params_[l.bias];
                return linear(g, x, params_[l.weight], bias);
            } else if constexpr (std::is_same_v<T, ReluLayer>) {
                return relu(g, x);
            } else if constexpr (std::is_same_v<T, MaxPoolLayer>) {
                return maxpool2d(g, x, l.window, l.stride);
            } else if constexpr (std::is_same_v<T, FlattenLayer>) {
                return flatten(g, x);
            } else if constexpr (std::is_same_v<T, GlobalAvgPoolLayer>) {
                return global_avg_pool(g, x);
            } else {
                Variable h = relu(g, run_bn(g, l.bn1, run_conv(g, l.conv1, x), mode));
                h = run_bn(g, l.bn2, run_conv(g, l.conv2, h), mode);
                Variable skip = x;
                if (l.projection) skip = run_bn(g, *l.projection_bn, run_conv(g, *l.projection, x), mode);
                return relu(g, add(g, h, skip));
            }
        },
        layer);
}

std::size_t count_params(const Network& net) {
    std::size_t n = 0;
    for (const Variable& p : net.parameters()) n += p.value().size();
    return n;
}

double accuracy(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2) throw ShapeError("accuracy: logits must be [N x C], got " + shape_string(logits.shape()));
    const std::size_t n = logits.dim(0), classes = logits.dim(1);
    if (labels.size() != n) throw ShapeError("accuracy: label count does not match logits rows");
    std::size_t correct = 0;
    for (std::size_t r = 0; r < n; ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
            throw ValueError("accuracy: label " + std::to_string(labels[r]) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
        std::size_t best = 0;
        for (std::size_t k = 1; k < classes; ++k) {
            if (logits[r * classes + k] > logits[r * classes + best]) best = k;
        }
        if (static_cast<int>(best) == labels[r]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace gradbench::nn
