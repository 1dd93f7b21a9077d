#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradbench/checkpoint.hpp"
#include "gradbench/dataset.hpp"
#include "gradbench/network.hpp"
#include "gradbench/optim.hpp"

namespace gradbench::train {

enum class FreezePolicy { freeze_features, freeze_none, freeze_all_but_head };

std::string_view freeze_policy_name(FreezePolicy policy);
FreezePolicy parse_freeze_policy(std::string_view name);

struct ExperimentConfig {
    nn::Architecture architecture = nn::Architecture::mini_vgg;
    optim::Kind optimizer = optim::Kind::adam;
    optim::HyperParams hyper = optim::HyperParams::defaults(optim::Kind::adam);
    bool transfer = false;
    std::string checkpoint_path;  // source weights when transfer is on
    FreezePolicy freeze = FreezePolicy::freeze_features;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    std::uint64_t seed = 1;
    nn::InputSpec input;
    std::size_t classes = 5;
    std::size_t width = 1;
    bool augment = true;

    // Throws ValueError on an inconsistent configuration. `need_checkpoint`
    // requires checkpoint_path when transfer is on.
    void validate(bool need_checkpoint = true) const;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double wall_time_s = 0.0;
};

enum class RunStatus { ok, diverged, error };
std::string_view run_status_name(RunStatus status);

struct RunResult {
    ExperimentConfig config;
    std::vector<EpochRecord> epochs;
    double test_accuracy = 0.0;
    double test_loss = 0.0;
    RunStatus status = RunStatus::ok;
    std::string message;
    // Position of the first non-finite value when status is diverged.
    std::size_t diverged_epoch = 0;
    std::size_t diverged_batch = 0;
    double wall_time_s = 0.0;
};

struct DataSplits {
    std::vector<data::Sample> train;
    std::vector<data::Sample> val;
    std::vector<data::Sample> test;
};

DataSplits make_splits(const data::Dataset& dataset, const data::SplitRatios& ratios, std::uint64_t seed);

struct Evaluation {
    double accuracy = 0.0;
    double loss = 0.0;  // mean per-sample cross-entropy
};

// Eval-mode pass in chunks of `chunk` samples; leaves the network untouched.
Evaluation evaluate(nn::Network& net, std::span<const data::Sample> samples, std::size_t chunk = 64);

// Loads matching weights and sets trainable flags according to `policy`. The
// head starts from zeros (uniform predictions) under the freezing policies,
// and under freeze_none only when the class count differs. The freezing
// policies also fix every batch-norm layer to its loaded statistics.
ApplyResult apply_transfer(nn::Network& net, const Checkpoint& source, FreezePolicy policy);

struct TrainOutcome {
    RunResult result;
    nn::Network network;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs the configured protocol. When transfer is on `source` supplies the
// weights (it is loaded from config.checkpoint_path when null).
TrainOutcome train(const ExperimentConfig& config, const DataSplits& splits, const Checkpoint* source = nullptr,
                   const EpochCallback& on_epoch = {});

struct SweepCell {
    nn::Architecture architecture;
    optim::Kind optimizer;
    bool transfer;
};

// Cells ordered by architecture, optimizer (report column order), then
// transfer off before on.
std::vector<SweepCell> sweep_cells(std::span<const nn::Architecture> architectures,
                                   std::span<const optim::Kind> optimizers, const std::vector<bool>& transfer_modes);

struct SweepOptions {
    ExperimentConfig base;
    std::vector<nn::Architecture> architectures;
    std::vector<optim::Kind> optimizers;
    std::vector<bool> transfer_modes;
    // Per-optimizer hyperparameters; falls back to HyperParams::defaults.
    std::map<optim::Kind, optim::HyperParams> hyper;
    std::size_t jobs = 1;
};

// Runs every cell on the same splits. Failures are recorded in the cell's
// status and do not stop the sweep. Results follow sweep_cells order
// regardless of `jobs`.
std::vector<RunResult> sweep(const SweepOptions& options, const DataSplits& splits,
                             const std::map<nn::Architecture, Checkpoint>& sources,
                             const std::function<void(const RunResult&)>& on_cell = {});

}  // namespace gradbench::train
