#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "gradbench/autodiff.hpp"
#include "gradbench/ops.hpp"
#include "gradbench/tensor.hpp"

namespace gradbench::nn {

enum class Architecture { mini_vgg, mini_resnet18, mini_resnet34, custom };

std::string_view architecture_name(Architecture arch);
// Accepts mini_vgg, mini_resnet18, mini_resnet34.
Architecture parse_architecture(std::string_view name);

struct InputSpec {
    std::size_t channels = 3;
    std::size_t height = 64;
    std::size_t width = 64;

    friend bool operator==(const InputSpec&, const InputSpec&) = default;
};

// Layer records refer to parameters and batch-norm states by index.
inline constexpr std::size_t kNoParam = static_cast<std::size_t>(-1);

struct ConvLayer {
    std::size_t weight;
    std::size_t bias = kNoParam;
    std::size_t stride = 1;
    std::size_t padding = 0;
};
struct BatchNormLayer {
    std::size_t gamma;
    std::size_t beta;
    std::size_t state;
};
struct DenseLayer {
    std::size_t weight;  // [in x out]
    std::size_t bias = kNoParam;
};
struct ReluLayer {};
struct MaxPoolLayer {
    std::size_t window = 2;
    std::size_t stride = 2;
};
struct FlattenLayer {};
struct GlobalAvgPoolLayer {};

// conv-bn-relu-conv-bn on the main path; identity or 1x1 conv + bn on the
// skip path; the sum passes through a final relu.
struct ResidualBlock {
    ConvLayer conv1;
    BatchNormLayer bn1;
    ConvLayer conv2;
    BatchNormLayer bn2;
    std::optional<ConvLayer> projection;
    std::optional<BatchNormLayer> projection_bn;
};

using Layer = std::variant<ConvLayer, BatchNormLayer, DenseLayer, ReluLayer, MaxPoolLayer, FlattenLayer,
                           GlobalAvgPoolLayer, ResidualBlock>;

struct NamedState {
    std::string name;
    BatchNormState state;
    // Normalize with the stored statistics in every mode and never update them.
    bool fixed = false;
};

/// Ordered layer list plus its named parameter table.
class Network {
public:
    // Empty network for hand-assembled layer lists.
    Network(InputSpec input, std::size_t classes, Architecture arch = Architecture::custom, std::size_t width = 1);

    // He-initialized mini architecture. Each parameter draws from its own
    // stream keyed by (seed, name).
    static Network build(Architecture arch, InputSpec input, std::size_t classes, std::size_t width,
                         std::uint64_t seed);

    std::size_t add_parameter(std::string name, Tensor init);
    std::size_t add_state(std::string name, std::size_t channels);
    void add_layer(Layer layer) { layers_.push_back(std::move(layer)); }

    // Logits [N x classes]. Train mode updates batch-norm running statistics
    // except in layers marked fixed.
    Variable forward(Graph& g, const Tensor& batch, Mode mode);

    std::vector<Variable>& parameters() { return params_; }
    const std::vector<Variable>& parameters() const { return params_; }
    bool has_parameter(std::string_view name) const;
    Variable& parameter(std::string_view name);
    const Variable& parameter(std::string_view name) const;

    std::vector<NamedState>& states() { return states_; }
    const std::vector<NamedState>& states() const { return states_; }

    // Names of the final classifier layer's parameters.
    std::vector<std::string> head_parameter_names() const;
    bool is_head_parameter(std::string_view name) const;

    // Re-draws a parameter exactly as build() would for `seed`.
    void reinitialize_parameter(std::string_view name, std::uint64_t seed);

    void zero_grad();
    void set_all_trainable(bool on);
    void set_batchnorm_fixed(bool on);

    // Independent copy: parameters and states are not shared with *this.
    Network clone() const;

    const std::vector<Layer>& layers() const { return layers_; }
    Architecture architecture() const { return arch_; }
    const InputSpec& input_spec() const { return input_; }
    std::size_t classes() const { return classes_; }
    std::size_t width() const { return width_; }

private:
    Variable run_layer(Graph& g, const Layer& layer, const Variable& x, Mode mode);
    Variable run_conv(Graph& g, const ConvLayer& c, const Variable& x);
    Variable run_bn(Graph& g, const BatchNormLayer& b, const Variable& x, Mode mode);

    Architecture arch_;
    InputSpec input_;
    std::size_t classes_;
    std::size_t width_;
    std::vector<Layer> layers_;
    std::vector<Variable> params_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<NamedState> states_;
};

// Total number of trainable scalars in the parameter table.
std::size_t count_params(const Network& net);

// Fraction of rows whose argmax equals the label; ties go to the lowest class.
double accuracy(const Tensor& logits, std::span<const int> labels);

}  // namespace gradbench::nn
