#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gradbench/dataset.hpp"
#include "gradbench/network.hpp"
#include "gradbench/optim.hpp"
#include "gradbench/trainer.hpp"

namespace gradbench::config {

/// Flat key=value file. '#' starts a comment line; whitespace around keys and
/// values is trimmed. Every entry remembers its line for error messages.
class ConfigFile {
public:
    struct Entry {
        std::string value;
        std::size_t line = 0;  // 0 for command-line overrides
    };

    static ConfigFile parse(std::string_view text, std::string source = "config");
    static ConfigFile read(const std::filesystem::path& path);

    // "key=value" from the command line; replaces any file entry.
    void set_override(std::string_view assignment);

    bool has(std::string_view key) const;
    std::optional<std::string> get(std::string_view key) const;
    // Typed accessors; conversion failures throw ValueError naming the key
    // and its line.
    std::string get_string(std::string_view key, std::string fallback) const;
    double get_double(std::string_view key, double fallback) const;
    std::size_t get_size(std::string_view key, std::size_t fallback) const;
    std::uint64_t get_u64(std::string_view key, std::uint64_t fallback) const;
    bool get_bool(std::string_view key, bool fallback) const;
    std::vector<std::string> get_list(std::string_view key) const;

    // Throws ValueError for the first key not in `known`.
    void check_known(const std::vector<std::string_view>& known) const;

    // "config.txt line 4, key 'epochs'" (or "override, key ..." for --set).
    std::string where(std::string_view key) const;

    const std::map<std::string, Entry, std::less<>>& entries() const { return entries_; }

private:
    std::string source_;
    std::map<std::string, Entry, std::less<>> entries_;
};

struct HyperOverrides {
    std::optional<double> lr, beta1, beta2, rho, eps;
    std::optional<bool> skip_bias_correction;

    // defaults(kind) with every set field replaced.
    optim::HyperParams for_kind(optim::Kind kind) const;
};

struct DataSettings {
    // "synthetic" or a manifest path.
    std::string source = "synthetic";
    data::SynthOptions synth;
    data::SplitRatios ratios;
};

struct Settings {
    train::ExperimentConfig experiment;
    HyperOverrides hyper;
    DataSettings data;
    std::filesystem::path out_dir = "runs";

    // Sweep grid.
    std::vector<nn::Architecture> architectures;
    std::vector<optim::Kind> optimizers;
    std::vector<bool> transfer_modes;
    // Synthetic source task used to pretrain transfer weights when no
    // checkpoint is given for an architecture.
    std::size_t source_pattern_offset = 5;
    std::size_t pretrain_epochs = 5;
    optim::Kind pretrain_optimizer = optim::Kind::adam;
    std::map<nn::Architecture, std::string> source_checkpoints;
};

// Keys accepted in config files.
const std::vector<std::string_view>& known_keys();

Settings settings_from(const ConfigFile& file);

}  // namespace gradbench::config
