#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradbench/network.hpp"
#include "gradbench/optim.hpp"
#include "gradbench/trainer.hpp"

namespace gradbench::report {

inline constexpr std::array<std::string_view, 4> kRowNames = {"accuracy", "loss", "accuracy_tl", "loss_tl"};
inline constexpr std::string_view kLongCsvHeader =
    "architecture,optimizer,transfer,test_accuracy,test_loss,epochs,wall_time_s,status";
inline constexpr std::string_view kReferenceLabel = "reference (not reproduced at desk scale)";

struct Cell {
    enum class State { value, diverged, error, missing };
    State state = State::missing;
    double value = 0.0;
};

/// Metric rows x optimizer columns (report column order) for one architecture.
struct ReportTable {
    nn::Architecture architecture;
    std::array<std::array<Cell, optim::kAllKinds.size()>, kRowNames.size()> cells{};
};

std::vector<ReportTable> build_tables(std::span<const train::RunResult> results);

// 3-decimal value, or "diverged" / "error" / "n/a".
std::string format_cell(const Cell& cell);

std::string render_csv(const ReportTable& table);
// Includes the full-scale reference footer for architectures that have one.
std::string render_markdown(const ReportTable& table);
std::string render_long_csv(std::span<const train::RunResult> results);

// Full-scale reference values (rows as kRowNames, columns in report order).
struct Reference {
    std::string_view network;
    std::array<std::array<std::string_view, 7>, 4> rows;
};
std::optional<Reference> reference_for(nn::Architecture arch);

// Per-epoch CSV without timing columns, so reruns compare byte-for-byte.
std::string render_metrics_csv(const train::RunResult& result);
std::string render_summary(const train::RunResult& result);

}  // namespace gradbench::report
