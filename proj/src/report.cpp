#include "gradbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace gradbench::report {

namespace {

std::string fixed3(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

std::string fixed6(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::size_t column_of(optim::Kind kind) { return static_cast<std::size_t>(kind); }

}  // namespace

std::vector<ReportTable> build_tables(std::span<const train::RunResult> results) {
    std::vector<ReportTable> tables;
    for (const train::RunResult& r : results) {
        auto it = std::find_if(tables.begin(), tables.end(),
                               [&](const ReportTable& t) { return t.architecture == r.config.architecture; });
        if (it == tables.end()) {
            tables.push_back(ReportTable{r.config.architecture, {}});
            it = tables.end() - 1;
        }
        const std::size_t col = column_of(r.config.optimizer);
        const std::size_t row = r.config.transfer ? 2 : 0;
        Cell acc, loss;
        switch (r.status) {
            case train::RunStatus::ok:
                acc = {Cell::State::value, r.test_accuracy};
                loss = {Cell::State::value, r.test_loss};
                break;
            case train::RunStatus::diverged: acc = loss = {Cell::State::diverged, 0.0}; break;
            case train::RunStatus::error: acc = loss = {Cell::State::error, 0.0}; break;
        }
        it->cells[row][col] = acc;
        it->cells[row + 1][col] = loss;
    }
    return tables;
}

std::string format_cell(const Cell& cell) {
    switch (cell.state) {
        case Cell::State::value: return fixed3(cell.value);
        case Cell::State::diverged: return "diverged";
        case Cell::State::error: return "error";
        case Cell::State::missing: return "n/a";
    }
    return "n/a";
}

std::string render_csv(const ReportTable& t) {
    std::ostringstream s;
    s << "metric";
    for (optim::Kind k : optim::kAllKinds) s << ',' << optim::display_name(k);
    s << '\n';
    for (std::size_t r = 0; r < kRowNames.size(); ++r) {
        s << kRowNames[r];
        for (const Cell& c : t.cells[r]) s << ',' << format_cell(c);
        s << '\n';
    }
    return s.str();
}

std::string render_markdown(const ReportTable& t) {
    std::ostringstream s;
    s << "## " << nn::architecture_name(t.architecture) << "\n\n";
    s << "| metric |";
    for (optim::Kind k : optim::kAllKinds) s << ' ' << optim::display_name(k) << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < optim::kAllKinds.size(); ++i) s << "---:|";
    s << '\n';
    for (std::size_t r = 0; r < kRowNames.size(); ++r) {
        s << "| " << kRowNames[r] << " |";
        for (const Cell& c : t.cells[r]) s << ' ' << format_cell(c) << " |";
        s << '\n';
    }
    if (auto ref = reference_for(t.architecture)) {
        s << "\nFull-scale " << ref->network << ", " << kReferenceLabel << ":\n\n";
        s << "| metric |";
        for (optim::Kind k : optim::kAllKinds) s << ' ' << optim::display_name(k) << " |";
        s << "\n|---|";
        for (std::size_t i = 0; i < optim::kAllKinds.size(); ++i) s << "---:|";
        s << '\n';
        for (std::size_t r = 0; r < kRowNames.size(); ++r) {
            s << "| " << kRowNames[r] << " |";
            for (std::string_view v : ref->rows[r]) s << ' ' << v << " |";
            s << '\n';
        }
        s << "\nReference loss values use an unstated normalization and are not comparable to the "
             "cross-entropy losses above.\n";
    }
    return s.str();
}

std::string render_long_csv(std::span<const train::RunResult> results) {
    std::ostringstream s;
    s << kLongCsvHeader << '\n';
    for (const train::RunResult& r : results) {
        const bool ok = r.status == train::RunStatus::ok;
        s << nn::architecture_name(r.config.architecture) << ',' << optim::kind_name(r.config.optimizer) << ','
          << (r.config.transfer ? "on" : "off") << ',' << (ok ? fixed6(r.test_accuracy) : "") << ','
          << (ok ? fixed6(r.test_loss) : "") << ',' << r.epochs.size() << ',' << fixed3(r.wall_time_s) << ','
          << train::run_status_name(r.status) << '\n';
    }
    return s.str();
}

std::optional<Reference> reference_for(nn::Architecture arch) {
    switch (arch) {
        case nn::Architecture::mini_vgg:
            return Reference{"VGG-16",
                             {{{"0.594", "0.656", "0.552", "0.205", "0.653", "0.668", "0.661"},
                               {"0.034", "0.036", "0.040", "0.050", "0.040", "0.034", "0.032"},
                               {"0.730", "0.854", "0.809", "0.772", "0.849", "0.856", "0.886"},
                               {"0.086", "0.027", "0.018", "0.028", "0.012", "0.014", "0.016"}}}};
        case nn::Architecture::mini_resnet18:
            return Reference{"ResNet-18",
                             {{{"0.205", "0.619", "0.641", "0.644", "0.683", "0.728", "0.426"},
                               {"0.051", "0.034", "0.027", "0.045", "0.027", "0.026", "0.043"},
                               {"0.676", "0.879", "0.871", "0.708", "0.879", "0.884", "0.748"},
                               {"0.024", "0.014", "0.136", "0.037", "0.017", "0.014", "0.022"}}}};
        case nn::Architecture::mini_resnet34:
            return Reference{"ResNet-34",
                             {{{"0.311", "0.205", "0.234", "0.453", "0.507", "0.540", "0.574"},
                               {"0.048", "0.051", "0.050", "0.044", "0.040", "0.039", "0.034"},
                               {"0.757", "0.850", "0.860", "0.710", "0.824", "0.820", "0.821"},
                               {"0.025", "0.014", "0.014", "0.037", "0.015", "0.015", "0.160"}}}};
        case nn::Architecture::custom: return std::nullopt;
    }
    return std::nullopt;
}

std::string render_metrics_csv(const train::RunResult& result) {
    std::ostringstream s;
    s << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    for (const train::EpochRecord& e : result.epochs) {
        s << e.epoch << ',' << fixed6(e.train_loss) << ',' << fixed6(e.train_accuracy) << ',' << fixed6(e.val_loss)
          << ',' << fixed6(e.val_accuracy) << '\n';
    }
    return s.str();
}

std::string render_summary(const train::RunResult& r) {
    std::ostringstream s;
    s << "architecture=" << nn::architecture_name(r.config.architecture) << '\n'
      << "optimizer=" << optim::kind_name(r.config.optimizer) << '\n'
      << "transfer=" << (r.config.transfer ? "on" : "off") << '\n'
      << "epochs=" << r.epochs.size() << '\n'
      << "status=" << train::run_status_name(r.status) << '\n'
      << "test_accuracy=" << fixed6(r.test_accuracy) << '\n'
      << "test_loss=" << fixed6(r.test_loss) << '\n';
    if (!r.message.empty()) s << "message=" << r.message << '\n';
    return s.str();
}

}  // namespace gradbench::report
