#include "gradbench/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "gradbench/errors.hpp"
#include "gradbench/ops.hpp"

namespace gradbench::train {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<data::Sample> pick(const data::Dataset& d, const std::vector<std::size_t>& idx) {
    std::vector<data::Sample> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(d.samples[i]);
    return out;
}

}  // namespace

std::string_view freeze_policy_name(FreezePolicy policy) {
    switch (policy) {
        case FreezePolicy::freeze_features: return "freeze_features";
        case FreezePolicy::freeze_none: return "freeze_none";
        case FreezePolicy::freeze_all_but_head: return "freeze_all_but_head";
    }
    return "freeze_features";
}

FreezePolicy parse_freeze_policy(std::string_view name) {
    if (name == "freeze_features") return FreezePolicy::freeze_features;
    if (name == "freeze_none") return FreezePolicy::freeze_none;
    if (name == "freeze_all_but_head") return FreezePolicy::freeze_all_but_head;
    throw ValueError("unknown freeze policy '" + std::string(name) +
                     "'; valid names: freeze_features, freeze_none, freeze_all_but_head");
}

std::string_view run_status_name(RunStatus status) {
    switch (status) {
        case RunStatus::ok: return "ok";
        case RunStatus::diverged: return "diverged";
        case RunStatus::error: return "error";
    }
    return "error";
}

void ExperimentConfig::validate(bool need_checkpoint) const {
    if (batch_size == 0) throw ValueError("batch_size must be at least 1");
    if (classes < 2) throw ValueError("classes must be at least 2");
    if (width == 0) throw ValueError("width must be at least 1");
    if (transfer && need_checkpoint && checkpoint_path.empty()) {
        throw ValueError("transfer requires a checkpoint path");
    }
    hyper.validate(optimizer);
}

DataSplits make_splits(const data::Dataset& dataset, const data::SplitRatios& ratios, std::uint64_t seed) {
    data::SplitAssignment a = data::split_dataset(dataset.size(), ratios, seed);
    return {pick(dataset, a.indices(data::SplitTag::train)), pick(dataset, a.indices(data::SplitTag::val)),
            pick(dataset, a.indices(data::SplitTag::test))};
}

Evaluation evaluate(nn::Network& net, std::span<const data::Sample> samples, std::size_t chunk) {
    if (samples.empty()) throw ValueError("evaluate: empty sample set");
    if (chunk == 0) chunk = 64;
    double loss_sum = 0.0, correct = 0.0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < samples.size(); start += chunk) {
        idx.clear();
        for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) idx.push_back(i);
        data::Batch b = data::make_batch(samples, idx);
        Graph g(false);
        Variable logits = net.forward(g, b.images, Mode::eval);
        Variable loss = softmax_cross_entropy(g, logits, b.labels);
        loss_sum += loss.value().item() * idx.size();
        correct += nn::accuracy(logits.value(), b.labels) * idx.size();
    }
    const double n = static_cast<double>(samples.size());
    return {correct / n, loss_sum / n};
}

ApplyResult apply_transfer(nn::Network& net, const Checkpoint& source, FreezePolicy policy) {
    ApplyResult r = apply_checkpoint(net, source);
    const bool freeze = policy != FreezePolicy::freeze_none;
    auto reset = [&net](const std::string& name) { net.parameter(name).value().fill(0.0); };
    if (freeze) {
        for (const std::string& name : net.head_parameter_names()) reset(name);
    } else {
        for (const std::string& name : r.skipped_head) reset(name);
    }
    for (Variable& p : net.parameters()) p.set_trainable(!freeze || net.is_head_parameter(p.name()));
    net.set_batchnorm_fixed(freeze);
    return r;
}

TrainOutcome train(const ExperimentConfig& config, const DataSplits& splits, const Checkpoint* source,
                   const EpochCallback& on_epoch) {
    const auto start = Clock::now();
    config.validate(source == nullptr);
    if (splits.train.empty()) throw ValueError("training split is empty");
    if (splits.test.empty()) throw ValueError("test split is empty");

    TrainOutcome out{RunResult{}, nn::Network::build(config.architecture, config.input, config.classes, config.width,
                                                     config.seed)};
    RunResult& res = out.result;
    res.config = config;
    nn::Network& net = out.network;

    if (config.transfer) {
        if (source) {
            apply_transfer(net, *source, config.freeze);
        } else {
            Checkpoint loaded = load_checkpoint(config.checkpoint_path);
            apply_transfer(net, loaded, config.freeze);
        }
    }

    optim::Optimizer opt(config.optimizer, config.hyper, net.parameters());
    const AugmentSpec aug{config.augment};
    std::size_t epoch = 0, batch_index = 0;
    try {
        for (epoch = 0; epoch < config.epochs; ++epoch) {
            const auto epoch_start = Clock::now();
            auto batches = data::make_batches(splits.train.size(), config.batch_size, config.seed, epoch);
            double loss_sum = 0.0, correct = 0.0;
            for (batch_index = 0; batch_index < batches.size(); ++batch_index) {
                const auto& idx = batches[batch_index];
                data::Batch b = data::make_augmented_batch(splits.train, idx, aug, config.seed, epoch);
                Graph g;
                Variable logits = net.forward(g, b.images, Mode::train);
                Variable loss = softmax_cross_entropy(g, logits, b.labels);
                g.backward(loss);
                opt.step();
                net.zero_grad();
                loss_sum += loss.value().item() * idx.size();
                correct += nn::accuracy(logits.value(), b.labels) * idx.size();
            }
            EpochRecord rec;
            rec.epoch = epoch;
            rec.train_loss = loss_sum / splits.train.size();
            rec.train_accuracy = correct / splits.train.size();
            batch_index = 0;
            if (!splits.val.empty()) {
                Evaluation v = evaluate(net, splits.val);
                rec.val_loss = v.loss;
                rec.val_accuracy = v.accuracy;
            } else {
                rec.val_loss = rec.val_accuracy = std::numeric_limits<double>::quiet_NaN();
            }
            rec.wall_time_s = seconds_since(epoch_start);
            res.epochs.push_back(rec);
            if (on_epoch) on_epoch(rec);
        }
        Evaluation t = evaluate(net, splits.test);
        res.test_accuracy = t.accuracy;
        res.test_loss = t.loss;
    } catch (const NumericError& e) {
        res.status = RunStatus::diverged;
        res.diverged_epoch = epoch;
        res.diverged_batch = batch_index;
        res.message = "non-finite value at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_index) +
                      ": " + e.what();
        res.test_accuracy = res.test_loss = std::numeric_limits<double>::quiet_NaN();
    }
    res.wall_time_s = seconds_since(start);
    return out;
}

std::vector<SweepCell> sweep_cells(std::span<const nn::Architecture> architectures,
                                   std::span<const optim::Kind> optimizers, const std::vector<bool>& transfer_modes) {
    std::vector<optim::Kind> kinds(optimizers.begin(), optimizers.end());
    std::sort(kinds.begin(), kinds.end());
    kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
    std::vector<bool> modes;
    for (bool m : {false, true})
        if (std::find(transfer_modes.begin(), transfer_modes.end(), m) != transfer_modes.end()) modes.push_back(m);

    std::vector<SweepCell> cells;
    for (nn::Architecture a : architectures)
        for (optim::Kind k : kinds)
            for (bool m : modes) cells.push_back({a, k, m});
    return cells;
}

std::vector<RunResult> sweep(const SweepOptions& options, const DataSplits& splits,
                             const std::map<nn::Architecture, Checkpoint>& sources,
                             const std::function<void(const RunResult&)>& on_cell) {
    const std::vector<SweepCell> cells = sweep_cells(options.architectures, options.optimizers, options.transfer_modes);
    std::vector<RunResult> results(cells.size());

    auto run_cell = [&](std::size_t i) {
        const SweepCell& cell = cells[i];
        ExperimentConfig cfg = options.base;
        cfg.architecture = cell.architecture;
        cfg.optimizer = cell.optimizer;
        auto h = options.hyper.find(cell.optimizer);
        cfg.hyper = h != options.hyper.end() ? h->second : optim::HyperParams::defaults(cell.optimizer);
        cfg.transfer = cell.transfer;
        RunResult r;
        try {
            const Checkpoint* src = nullptr;
            if (cell.transfer) {
                auto it = sources.find(cell.architecture);
                if (it == sources.end()) {
                    throw ValueError("no source checkpoint for " +
                                     std::string(nn::architecture_name(cell.architecture)));
                }
                src = &it->second;
            }
            r = train(cfg, splits, src).result;
        } catch (const std::exception& e) {
            r = RunResult{};
            r.config = cfg;
            r.status = RunStatus::error;
            r.message = e.what();
            r.test_accuracy = r.test_loss = std::numeric_limits<double>::quiet_NaN();
        }
        return r;
    };

    const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, cells.size()));
    if (jobs == 1) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            results[i] = run_cell(i);
            if (on_cell) on_cell(results[i]);
        }
        return results;
    }

    std::atomic<std::size_t> next{0};
    std::mutex report;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < cells.size(); i = next++) {
                results[i] = run_cell(i);
                if (on_cell) {
                    std::lock_guard<std::mutex> lock(report);
                    on_cell(results[i]);
                }
            }
        });
    }
    for (std::thread& t : workers) t.join();
    return results;
}

}  // namespace gradbench::train
