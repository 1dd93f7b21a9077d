#include "gradbench/optim.hpp"

#include <algorithm>
#include <cmath>

#include "gradbench/errors.hpp"

namespace gradbench::optim {

namespace {

struct KindInfo {
    Kind kind;
    std::string_view name;
    std::string_view display;
};

constexpr std::array<KindInfo, 7> kKindInfo = {{
    {Kind::rmsprop, "rmsprop", "RMSProp"},
    {Kind::adam, "adam", "Adam"},
    {Kind::sgd, "sgd", "SGD"},
    {Kind::adadelta, "adadelta", "Adadelta"},
    {Kind::adagrad, "adagrad", "Adagrad"},
    {Kind::adamax, "adamax", "Adamax"},
    {Kind::nadam, "nadam", "Nadam"},
}};

const KindInfo& info(Kind kind) { return kKindInfo[static_cast<std::size_t>(kind)]; }

void check_sizes(std::span<double> param, std::span<const double> grad, const char* rule) {
    if (param.size() != grad.size()) {
        throw ShapeError(std::string(rule) + ": parameter has " + std::to_string(param.size()) +
                         " elements, gradient has " + std::to_string(grad.size()));
    }
}

void check_buffer(const std::vector<double>& buf, std::size_t n, const char* rule, const char* which) {
    if (buf.size() != n) {
        throw ShapeError(std::string(rule) + ": state buffer " + which + " has " + std::to_string(buf.size()) +
                         " elements, parameter has " + std::to_string(n));
    }
}

double bias_correction(double beta, std::uint64_t t) { return 1.0 - std::pow(beta, static_cast<double>(t)); }

}  // namespace

std::string_view kind_name(Kind kind) { return info(kind).name; }

std::string_view display_name(Kind kind) { return info(kind).display; }

std::string valid_kind_names() {
    std::string out;
    for (const KindInfo& k : kKindInfo) {
        if (!out.empty()) out += ", ";
        out += k.name;
    }
    return out;
}

Kind parse_kind(std::string_view name) {
    for (const KindInfo& k : kKindInfo) {
        if (k.name == name) return k.kind;
    }
    throw ValueError("unknown optimizer '" + std::string(name) + "'; valid names: " + valid_kind_names());
}

HyperParams HyperParams::defaults(Kind kind) {
    HyperParams hp;
    if (kind == Kind::adadelta) {
        hp.lr = 1.0;
        hp.eps = 1e-6;
    }
    return hp;
}

void HyperParams::validate(Kind kind) const {
    const auto fail = [&](const std::string& what) {
        throw ValueError(std::string(kind_name(kind)) + ": " + what);
    };
    if (!(lr > 0.0) && !(kind == Kind::sgd && lr == 0.0)) fail("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must be in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must be in [0, 1)");
    if (!(rho >= 0.0 && rho < 1.0)) fail("rho must be in [0, 1)");
    if (!(eps > 0.0)) fail("eps must be > 0");
}

SlotState SlotState::for_kind(Kind kind, std::size_t size) {
    SlotState s;
    switch (kind) {
        case Kind::sgd:
            break;
        case Kind::rmsprop:
            s.sq_avg.assign(size, 0.0);
            break;
        case Kind::adam:
        case Kind::nadam:
            s.m.assign(size, 0.0);
            s.v.assign(size, 0.0);
            break;
        case Kind::adagrad:
            s.accum.assign(size, 0.0);
            break;
        case Kind::adadelta:
            s.sq_avg.assign(size, 0.0);
            s.delta_avg.assign(size, 0.0);
            break;
        case Kind::adamax:
            s.m.assign(size, 0.0);
            s.u.assign(size, 0.0);
            break;
    }
    return s;
}

std::size_t SlotState::allocated_buffers() const {
    std::size_t n = 0;
    for (const auto* b : {&m, &v, &sq_avg, &accum, &delta_avg, &u}) n += b->empty() ? 0 : 1;
    return n;
}

void sgd_step(std::span<double> param, std::span<const double> grad, const HyperParams& hp) {
    check_sizes(param, grad, "sgd");
    for (std::size_t i = 0; i < param.size(); ++i) param[i] -= hp.lr * grad[i];
}

void rmsprop_step(std::span<double> param, std::span<const double> grad, SlotState& state, const HyperParams& hp) {
    check_sizes(param, grad, "rmsprop");
    check_buffer(state.sq_avg, param.size(), "rmsprop", "sq_avg");
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        double& e = state.sq_avg[i];
        e = hp.rho * e + (1.0 - hp.rho) * g * g;
        param[i] -= hp.lr * g / std::sqrt(hp.eps + e);
    }
}

void adam_step(std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
               const HyperParams& hp) {
    check_sizes(param, grad, "adam");
    check_buffer(state.m, param.size(), "adam", "m");
    check_buffer(state.v, param.size(), "adam", "v");
    const double c1 = bias_correction(hp.beta1, t);
    const double c2 = bias_correction(hp.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        double& m = state.m[i];
        double& v = state.v[i];
        m = hp.beta1 * m + (1.0 - hp.beta1) * g;
        v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
        const double m_hat = m / c1;
        const double v_hat = v / c2;
        // eps sits inside the square root.
        param[i] -= hp.lr * m_hat / std::sqrt(v_hat + hp.eps);
    }
}

void adagrad_step(std::span<double> param, std::span<const double> grad, SlotState& state, const HyperParams& hp) {
    check_sizes(param, grad, "adagrad");
    check_buffer(state.accum, param.size(), "adagrad", "accum");
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        double& acc = state.accum[i];
        acc += g * g;
        param[i] -= hp.lr * g / std::sqrt(acc + hp.eps);
    }
}

void adadelta_step(std::span<double> param, std::span<const double> grad, SlotState& state, const HyperParams& hp) {
    check_sizes(param, grad, "adadelta");
    check_buffer(state.sq_avg, param.size(), "adadelta", "sq_avg");
    check_buffer(state.delta_avg, param.size(), "adadelta", "delta_avg");
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        double& eg = state.sq_avg[i];
        double& ed = state.delta_avg[i];
        eg = hp.rho * eg + (1.0 - hp.rho) * g * g;
        // The numerator uses the update accumulator from before this step.
        const double delta = -std::sqrt(ed + hp.eps) / std::sqrt(eg + hp.eps) * g;
        ed = hp.rho * ed + (1.0 - hp.rho) * delta * delta;
        param[i] += hp.lr * delta;
    }
}

void adamax_step(std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
                 const HyperParams& hp) {
    check_sizes(param, grad, "adamax");
    check_buffer(state.m, param.size(), "adamax", "m");
    check_buffer(state.u, param.size(), "adamax", "u");
    const double step = hp.skip_bias_correction ? hp.lr : hp.lr / bias_correction(hp.beta1, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        double& m = state.m[i];
        double& u = state.u[i];
        m = hp.beta1 * m + (1.0 - hp.beta1) * g;
        u = std::max(hp.beta2 * u, std::abs(g));
        param[i] -= step * m / (u + hp.eps);
    }
}

void nadam_step(std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
                const HyperParams& hp) {
    check_sizes(param, grad, "nadam");
    check_buffer(state.m, param.size(), "nadam", "m");
    check_buffer(state.v, param.size(), "nadam", "v");
    const double c1 = bias_correction(hp.beta1, t);
    const double c2 = bias_correction(hp.beta2, t);
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double g = grad[i];
        double& m = state.m[i];
        double& v = state.v[i];
        m = hp.beta1 * m + (1.0 - hp.beta1) * g;
        v = hp.beta2 * v + (1.0 - hp.beta2) * g * g;
        const double v_hat = v / c2;
        // Raw m in the momentum term; only the current gradient is bias corrected.
        const double direction = hp.beta1 * m + (1.0 - hp.beta1) * g / c1;
        param[i] -= hp.lr / (std::sqrt(v_hat) + hp.eps) * direction;
    }
}

void apply_step(Kind kind, std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
                const HyperParams& hp) {
    switch (kind) {
        case Kind::sgd: return sgd_step(param, grad, hp);
        case Kind::rmsprop: return rmsprop_step(param, grad, state, hp);
        case Kind::adam: return adam_step(param, grad, state, t, hp);
        case Kind::adagrad: return adagrad_step(param, grad, state, hp);
        case Kind::adadelta: return adadelta_step(param, grad, state, hp);
        case Kind::adamax: return adamax_step(param, grad, state, t, hp);
        case Kind::nadam: return nadam_step(param, grad, state, t, hp);
    }
}

Optimizer::Optimizer(Kind kind, HyperParams hp, std::vector<Variable> params)
    : kind_(kind), hp_(hp), params_(std::move(params)) {
    hp_.validate(kind_);
    states_.reserve(params_.size());
    for (const Variable& p : params_) states_.push_back(SlotState::for_kind(kind_, p.value().size()));
}

void Optimizer::step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Variable& p = params_[i];
        if (!p.trainable()) continue;
        apply_step(kind_, p.value().data(), p.grad().data(), states_[i], t_, hp_);
    }
}

void Optimizer::zero_grad() {
    for (Variable& p : params_) p.zero_grad();
}

Optimizer make_optimizer(std::string_view name, const HyperParams& hp, std::vector<Variable> params) {
    return Optimizer(parse_kind(name), hp, std::move(params));
}

}  // namespace gradbench::optim
