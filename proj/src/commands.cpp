#include "gradbench/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <thread>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "gradbench/errors.hpp"
#include "gradbench/report.hpp"
#include "gradbench/rng.hpp"
#include "gradbench/trainer.hpp"

namespace gradbench::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

config::Settings read_settings(const fs::path& path, const std::vector<std::string>& overrides) {
    config::ConfigFile f = config::ConfigFile::read(path);
    for (const std::string& o : overrides) f.set_override(o);
    return config::settings_from(f);
}

std::string epoch_line(const train::EpochRecord& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf,
                  "epoch %zu train_loss %.4f train_acc %.4f val_loss %.4f val_acc %.4f time %.2fs", e.epoch,
                  e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.wall_time_s);
    return buf;
}

}  // namespace

void tune_allocator() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

std::size_t resolve_jobs(std::optional<std::size_t> flag) {
    if (flag) return std::max<std::size_t>(1, *flag);
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("GRADBENCH_THREADS")) {
        char* end = nullptr;
        unsigned long long cap = std::strtoull(env, &end, 10);
        if (end != env && *end == '\0' && cap > 0) n = std::min<std::size_t>(n, cap);
    }
    return n;
}

data::Dataset load_data(const config::Settings& s) {
    const train::ExperimentConfig& e = s.experiment;
    data::Dataset d;
    if (s.data.source == "synthetic") {
        d = data::synth_dataset(s.data.synth);
    } else {
        d = data::load_dataset(s.data.source, std::pair{e.input.height, e.input.width});
    }
    if (d.classes() != e.classes) {
        throw ValueError("dataset has " + std::to_string(d.classes()) + " classes but the config sets classes=" +
                         std::to_string(e.classes));
    }
    return d;
}

Checkpoint source_checkpoint(const config::Settings& s, nn::Architecture arch, std::ostream& log) {
    if (auto it = s.source_checkpoints.find(arch); it != s.source_checkpoints.end()) {
        log << "loading source weights for " << nn::architecture_name(arch) << " from " << it->second << '\n';
        return load_checkpoint(it->second);
    }
    data::SynthOptions src = s.data.synth;
    src.pattern_offset = s.source_pattern_offset;
    src.seed = derive_seed(s.data.synth.seed, {hash_name("source")});
    train::ExperimentConfig cfg = s.experiment;
    cfg.architecture = arch;
    cfg.optimizer = s.pretrain_optimizer;
    cfg.hyper = optim::HyperParams::defaults(s.pretrain_optimizer);
    cfg.transfer = false;
    cfg.epochs = s.pretrain_epochs;
    cfg.seed = derive_seed(s.experiment.seed, {hash_name("pretrain")});
    train::DataSplits splits = train::make_splits(data::synth_dataset(src), s.data.ratios, cfg.seed);
    log << "pretraining " << nn::architecture_name(arch) << " on source patterns " << src.pattern_offset << ".."
        << src.pattern_offset + src.classes - 1 << " for " << cfg.epochs << " epochs\n";
    train::TrainOutcome o = train::train(cfg, splits);
    if (o.result.status != train::RunStatus::ok) throw NumericError("source pretraining diverged: " + o.result.message);
    log << "source test accuracy " << o.result.test_accuracy << '\n';
    return decode_checkpoint(encode_checkpoint(capture_checkpoint(o.network)));
}

int cmd_train(const fs::path& config_path, const std::vector<std::string>& overrides, std::ostream& out,
              std::ostream& err) {
    config::Settings s;
    try {
        s = read_settings(config_path, overrides);
        s.experiment.validate();
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        data::Dataset d = load_data(s);
        train::DataSplits splits = train::make_splits(d, s.data.ratios, s.experiment.seed);
        make_dir(s.out_dir);
        std::ofstream log(s.out_dir / "train.log");
        auto on_epoch = [&](const train::EpochRecord& e) {
            log << epoch_line(e) << std::endl;
            out << epoch_line(e) << '\n';
        };
        train::TrainOutcome o = train::train(s.experiment, splits, nullptr, on_epoch);
        const train::RunResult& r = o.result;
        log << "status " << train::run_status_name(r.status) << " total " << r.wall_time_s << "s\n";
        write_text(s.out_dir / "metrics.csv", report::render_metrics_csv(r));
        write_text(s.out_dir / "summary.txt", report::render_summary(r));
        save_checkpoint(o.network, s.out_dir / "model.ckpt");
        out << report::render_summary(r);
        if (r.status != train::RunStatus::ok) {
            err << "error: training diverged: " << r.message << '\n';
            return kExitRuntime;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cmd_sweep(const fs::path& config_path, std::optional<std::size_t> jobs, const std::vector<std::string>& overrides,
              std::ostream& out, std::ostream& err) {
    config::Settings s;
    try {
        s = read_settings(config_path, overrides);
        s.experiment.validate(false);
        for (optim::Kind k : s.optimizers) s.hyper.for_kind(k).validate(k);
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::invalid_argument& e) {
        err << "config error: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        make_dir(s.out_dir);
        std::ofstream log(s.out_dir / "sweep.log");
        data::Dataset d = load_data(s);
        train::DataSplits splits = train::make_splits(d, s.data.ratios, s.experiment.seed);

        std::map<nn::Architecture, Checkpoint> sources;
        if (std::find(s.transfer_modes.begin(), s.transfer_modes.end(), true) != s.transfer_modes.end()) {
            for (nn::Architecture a : s.architectures) {
                if (sources.count(a)) continue;
                Checkpoint c = source_checkpoint(s, a, log);
                if (!s.source_checkpoints.count(a)) {
                    std::vector<std::uint8_t> bytes = encode_checkpoint(c);
                    write_text(s.out_dir / ("source_" + std::string(nn::architecture_name(a)) + ".ckpt"),
                               std::string(bytes.begin(), bytes.end()));
                }
                sources.emplace(a, std::move(c));
            }
        }

        train::SweepOptions opts;
        opts.base = s.experiment;
        opts.architectures = s.architectures;
        opts.optimizers = s.optimizers;
        opts.transfer_modes = s.transfer_modes;
        for (optim::Kind k : optim::kAllKinds) opts.hyper[k] = s.hyper.for_kind(k);
        opts.jobs = resolve_jobs(jobs);
        log << "jobs " << opts.jobs << std::endl;

        auto on_cell = [&](const train::RunResult& r) {
            std::ostringstream line;
            line << nn::architecture_name(r.config.architecture) << ' ' << optim::kind_name(r.config.optimizer)
                 << " transfer=" << (r.config.transfer ? "on" : "off") << ' ' << train::run_status_name(r.status)
                 << " test_acc " << r.test_accuracy << " test_loss " << r.test_loss << " time " << r.wall_time_s
                 << "s";
            if (!r.message.empty()) line << " (" << r.message << ")";
            log << line.str() << std::endl;
            out << line.str() << '\n';
        };
        std::vector<train::RunResult> results = train::sweep(opts, splits, sources, on_cell);

        for (const report::ReportTable& t : report::build_tables(results)) {
            std::string name(nn::architecture_name(t.architecture));
            write_text(s.out_dir / ("table_" + name + ".csv"), report::render_csv(t));
            write_text(s.out_dir / ("table_" + name + ".md"), report::render_markdown(t));
        }
        write_text(s.out_dir / "results.csv", report::render_long_csv(results));

        const bool any_ok = std::any_of(results.begin(), results.end(),
                                        [](const train::RunResult& r) { return r.status == train::RunStatus::ok; });
        if (!any_ok) {
            err << "error: every sweep cell failed\n";
            return kExitAllFailed;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cmd_gradcheck(GradCheckScope scope, std::uint64_t seed, bool corrupt, std::ostream& out, std::ostream& err) {
    try {
        GradCheckOptions o;
        o.scope = scope;
        o.seed = seed;
        o.corrupt_gradient = corrupt;
        GradCheckReport r = run_gradcheck(o);
        for (const GradCheckEntry& e : r.entries) {
            char buf[256];
            std::snprintf(buf, sizeof buf, "%-32s max_rel_error %.3e checked %zu %s", e.name.c_str(),
                          e.max_rel_error, e.checked, e.passed ? "PASS" : "FAIL");
            out << buf << '\n';
        }
        if (!r.passed()) {
            err << "gradient check failed (tolerance " << o.tolerance << ")\n";
            return kExitRuntime;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

int cmd_synth(const SynthArgs& a, std::ostream& out, std::ostream& err) {
    data::Dataset d;
    try {
        data::SynthOptions o;
        o.classes = a.classes;
        o.per_class = a.per_class;
        o.size = a.size;
        o.noise = a.noise;
        o.seed = a.seed;
        o.pattern_offset = a.pattern_offset;
        d = data::synth_dataset(o);
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    }
    try {
        data::write_dataset(d, a.out);
        out << "wrote " << d.size() << " images to " << a.out.string() << '\n';
        return kExitOk;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace gradbench::cli
