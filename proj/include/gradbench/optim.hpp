#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradbench/autodiff.hpp"

namespace gradbench::optim {

// Declaration order is the report column order.
enum class Kind { rmsprop, adam, sgd, adadelta, adagrad, adamax, nadam };

inline constexpr std::array<Kind, 7> kAllKinds = {Kind::rmsprop, Kind::adam,    Kind::sgd,  Kind::adadelta,
                                                 Kind::adagrad, Kind::adamax, Kind::nadam};

// Config identifier ("rmsprop", "adam", ...).
std::string_view kind_name(Kind kind);
// Column heading ("RMSProp", "Adam", ...).
std::string_view display_name(Kind kind);
// Throws ValueError listing the valid names.
Kind parse_kind(std::string_view name);
std::string valid_kind_names();

struct HyperParams {
    double lr = 1e-3;  // Adadelta: multiplier applied to the computed update
    double beta1 = 0.9;
    double beta2 = 0.999;
    double rho = 0.9;
    double eps = 1e-8;
    // Adamax only: omit the 1/(1 - beta1^t) correction.
    bool skip_bias_correction = false;

    // Defaults for `kind`; Adadelta uses lr = 1.0 and eps = 1e-6.
    static HyperParams defaults(Kind kind);

    // Throws ValueError when a field is out of range.
    void validate(Kind kind) const;
};

/// Per-parameter auxiliary buffers. Only the buffers used by an optimizer
/// are allocated; the rest stay empty.
struct SlotState {
    std::vector<double> m;          // first moment
    std::vector<double> v;          // second moment
    std::vector<double> sq_avg;     // decaying average of g^2 (RMSProp, Adadelta)
    std::vector<double> accum;      // running sum of g^2 (Adagrad)
    std::vector<double> delta_avg;  // decaying average of update^2 (Adadelta)
    std::vector<double> u;          // decayed infinity norm (Adamax)

    static SlotState for_kind(Kind kind, std::size_t size);
    std::size_t allocated_buffers() const;
};

// Pure update rules. `t` is the 1-based index of the current step.
void sgd_step(std::span<double> param, std::span<const double> grad, const HyperParams& hp);
void rmsprop_step(std::span<double> param, std::span<const double> grad, SlotState& state, const HyperParams& hp);
void adam_step(std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
               const HyperParams& hp);
void adagrad_step(std::span<double> param, std::span<const double> grad, SlotState& state, const HyperParams& hp);
void adadelta_step(std::span<double> param, std::span<const double> grad, SlotState& state, const HyperParams& hp);
void adamax_step(std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
                 const HyperParams& hp);
void nadam_step(std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
                const HyperParams& hp);

// Dispatches to the rule for `kind`.
void apply_step(Kind kind, std::span<double> param, std::span<const double> grad, SlotState& state, std::uint64_t t,
                const HyperParams& hp);

/// An update rule bound to a parameter set. The step counter is shared by
/// all parameters and advances once per step(). Parameters whose
/// `trainable` flag is off are skipped.
class Optimizer {
public:
    Optimizer(Kind kind, HyperParams hp, std::vector<Variable> params);

    void step();
    void zero_grad();

    Kind kind() const { return kind_; }
    const HyperParams& hyper_params() const { return hp_; }
    std::uint64_t step_count() const { return t_; }
    std::size_t parameter_count() const { return params_.size(); }
    const SlotState& state(std::size_t i) const { return states_.at(i); }

private:
    Kind kind_;
    HyperParams hp_;
    std::vector<Variable> params_;
    std::vector<SlotState> states_;
    std::uint64_t t_ = 0;
};

Optimizer make_optimizer(std::string_view name, const HyperParams& hp, std::vector<Variable> params);

}  // namespace gradbench::optim
