#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gradbench/checkpoint.hpp"
#include "gradbench/config.hpp"
#include "gradbench/dataset.hpp"
#include "gradbench/gradcheck.hpp"

namespace gradbench::cli {

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitRuntime = 2, kExitAllFailed = 3 };

// Keeps freed activation buffers in the heap instead of returning them to
// the kernel after every batch. No-op outside glibc.
void tune_allocator();

// Worker count: the flag when given, otherwise the hardware concurrency
// capped by GRADBENCH_THREADS.
std::size_t resolve_jobs(std::optional<std::size_t> flag);

// Target dataset described by the settings (synthetic or manifest).
data::Dataset load_data(const config::Settings& settings);

// Weights for transfer cells: the configured checkpoint for `arch` when
// present, otherwise a network pretrained on the synthetic source patterns.
// The result has been through the file encoding, so it is float-rounded.
Checkpoint source_checkpoint(const config::Settings& settings, nn::Architecture arch, std::ostream& log);

// Artifacts: metrics.csv, summary.txt, model.ckpt, train.log under out_dir.
int cmd_train(const std::filesystem::path& config_path, const std::vector<std::string>& overrides, std::ostream& out,
              std::ostream& err);

// Artifacts: table_<arch>.csv, table_<arch>.md, results.csv, sweep.log.
int cmd_sweep(const std::filesystem::path& config_path, std::optional<std::size_t> jobs,
              const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err);

int cmd_gradcheck(GradCheckScope scope, std::uint64_t seed, bool corrupt, std::ostream& out, std::ostream& err);

struct SynthArgs {
    std::filesystem::path out;
    std::size_t classes = 5;
    std::size_t per_class = 100;
    std::size_t size = 64;
    double noise = 0.05;
    std::uint64_t seed = 1;
    std::size_t pattern_offset = 0;
};
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);

}  // namespace gradbench::cli
