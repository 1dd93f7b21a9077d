#include "gradbench/config.hpp"

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "gradbench/errors.hpp"

namespace gradbench::config {

namespace {

std::string_view trim(std::string_view s) {
    const char* ws = " \t\r";
    std::size_t b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    std::size_t e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

}  // namespace

ConfigFile ConfigFile::parse(std::string_view text, std::string source) {
    ConfigFile f;
    f.source_ = std::move(source);
    std::size_t line_no = 0, pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty() || line.front() == '#') continue;
        std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ValueError(f.source_ + " line " + std::to_string(line_no) + ": expected key=value, got '" +
                             std::string(line) + "'");
        }
        std::string key(trim(line.substr(0, eq)));
        std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) throw ValueError(f.source_ + " line " + std::to_string(line_no) + ": empty key");
        auto [it, fresh] = f.entries_.try_emplace(key, Entry{value, line_no});
        if (!fresh) {
            throw ValueError(f.source_ + " line " + std::to_string(line_no) + ", key '" + key +
                             "': duplicate of line " + std::to_string(it->second.line));
        }
    }
    return f;
}

ConfigFile ConfigFile::read(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
}

void ConfigFile::set_override(std::string_view assignment) {
    std::size_t eq = assignment.find('=');
    std::string key(trim(assignment.substr(0, eq)));
    if (eq == std::string_view::npos || key.empty()) {
        throw ValueError("override '" + std::string(assignment) + "': expected key=value");
    }
    entries_[key] = Entry{std::string(trim(assignment.substr(eq + 1))), 0};
}

bool ConfigFile::has(std::string_view key) const { return entries_.find(key) != entries_.end(); }

std::optional<std::string> ConfigFile::get(std::string_view key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second.value;
}

std::string ConfigFile::where(std::string_view key) const {
    auto it = entries_.find(key);
    if (it == entries_.end() || it->second.line == 0) return "override, key '" + std::string(key) + "'";
    return source_ + " line " + std::to_string(it->second.line) + ", key '" + std::string(key) + "'";
}

std::string ConfigFile::get_string(std::string_view key, std::string fallback) const {
    auto v = get(key);
    return v ? *v : std::move(fallback);
}

double ConfigFile::get_double(std::string_view key, double fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    char* end = nullptr;
    errno = 0;
    double d = std::strtod(v->c_str(), &end);
    if (v->empty() || *end != '\0' || errno == ERANGE) {
        throw ValueError(where(key) + ": expected a number, got '" + *v + "'");
    }
    return d;
}

std::uint64_t ConfigFile::get_u64(std::string_view key, std::uint64_t fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (v->empty() || ec != std::errc() || p != v->data() + v->size()) {
        throw ValueError(where(key) + ": expected a non-negative integer, got '" + *v + "'");
    }
    return out;
}

std::size_t ConfigFile::get_size(std::string_view key, std::size_t fallback) const {
    return static_cast<std::size_t>(get_u64(key, fallback));
}

bool ConfigFile::get_bool(std::string_view key, bool fallback) const {
    auto v = get(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "on" || *v == "yes" || *v == "1") return true;
    if (*v == "false" || *v == "off" || *v == "no" || *v == "0") return false;
    throw ValueError(where(key) + ": expected true/false, got '" + *v + "'");
}

std::vector<std::string> ConfigFile::get_list(std::string_view key) const {
    std::vector<std::string> out;
    auto v = get(key);
    if (!v) return out;
    std::string_view s = *v;
    while (true) {
        std::size_t c = s.find(',');
        std::string_view item = trim(s.substr(0, c));
        if (item.empty()) throw ValueError(where(key) + ": empty item in list '" + *v + "'");
        out.emplace_back(item);
        if (c == std::string_view::npos) break;
        s.remove_prefix(c + 1);
    }
    return out;
}

void ConfigFile::check_known(const std::vector<std::string_view>& known) const {
    for (const auto& [key, entry] : entries_) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw ValueError(where(key) + ": unknown key");
        }
    }
}

optim::HyperParams HyperOverrides::for_kind(optim::Kind kind) const {
    optim::HyperParams hp = optim::HyperParams::defaults(kind);
    if (lr) hp.lr = *lr;
    if (beta1) hp.beta1 = *beta1;
    if (beta2) hp.beta2 = *beta2;
    if (rho) hp.rho = *rho;
    if (eps) hp.eps = *eps;
    if (skip_bias_correction) hp.skip_bias_correction = *skip_bias_correction;
    return hp;
}

const std::vector<std::string_view>& known_keys() {
    static const std::vector<std::string_view> keys = {
        "architecture",     "optimizer",         "lr",
        "beta1",            "beta2",             "rho",
        "eps",              "skip_bias_correction",     "transfer",
        "checkpoint",       "freeze",            "epochs",
        "batch_size",       "seed",              "input_size",
        "classes",          "width",             "augment",
        "dataset",          "synth_per_class",   "synth_noise",
        "synth_seed",       "synth_pattern_offset", "split_train",
        "split_val",        "split_test",        "out_dir",
        "architectures",    "optimizers",        "transfer_modes",
        "source_pattern_offset", "pretrain_epochs", "pretrain_optimizer",
        "checkpoint_mini_vgg", "checkpoint_mini_resnet18", "checkpoint_mini_resnet34"};
    return keys;
}

Settings settings_from(const ConfigFile& f) {
    f.check_known(known_keys());
    Settings s;
    train::ExperimentConfig& e = s.experiment;

    // Wraps identifier parsing so the message carries the line and key.
    auto named = [&f](std::string_view key, auto parse) {
        try {
            return parse(*f.get(key));
        } catch (const ValueError& err) {
            throw ValueError(f.where(key) + ": " + err.what());
        }
    };

    if (f.has("architecture")) e.architecture = named("architecture", [](const std::string& v) { return nn::parse_architecture(v); });
    if (f.has("optimizer")) e.optimizer = named("optimizer", [](const std::string& v) { return optim::parse_kind(v); });
    if (f.has("freeze")) e.freeze = named("freeze", [](const std::string& v) { return train::parse_freeze_policy(v); });

    if (f.has("lr")) s.hyper.lr = f.get_double("lr", 0);
    if (f.has("beta1")) s.hyper.beta1 = f.get_double("beta1", 0);
    if (f.has("beta2")) s.hyper.beta2 = f.get_double("beta2", 0);
    if (f.has("rho")) s.hyper.rho = f.get_double("rho", 0);
    if (f.has("eps")) s.hyper.eps = f.get_double("eps", 0);
    if (f.has("skip_bias_correction")) s.hyper.skip_bias_correction = f.get_bool("skip_bias_correction", false);
    e.hyper = s.hyper.for_kind(e.optimizer);
    try {
        e.hyper.validate(e.optimizer);
    } catch (const ValueError& err) {
        throw ValueError((f.has("lr") ? f.where("lr") : std::string("hyperparameters")) + ": " + err.what());
    }

    e.transfer = f.get_bool("transfer", false);
    e.checkpoint_path = f.get_string("checkpoint", "");
    e.epochs = f.get_size("epochs", 30);
    e.batch_size = f.get_size("batch_size", 16);
    if (e.batch_size == 0) throw ValueError(f.where("batch_size") + ": must be at least 1");
    e.seed = f.get_u64("seed", 1);
    const std::size_t size = f.get_size("input_size", 64);
    e.input = {3, size, size};
    e.classes = f.get_size("classes", 5);
    if (e.classes < 2) throw ValueError(f.where("classes") + ": must be at least 2");
    e.width = f.get_size("width", 1);
    if (e.width == 0) throw ValueError(f.where("width") + ": must be at least 1");
    e.augment = f.get_bool("augment", true);

    s.data.source = f.get_string("dataset", "synthetic");
    s.data.synth.classes = e.classes;
    s.data.synth.per_class = f.get_size("synth_per_class", 100);
    s.data.synth.size = size;
    s.data.synth.noise = f.get_double("synth_noise", 0.05);
    s.data.synth.seed = f.get_u64("synth_seed", e.seed);
    s.data.synth.pattern_offset = f.get_size("synth_pattern_offset", 0);
    s.data.ratios = {f.get_double("split_train", 0.8), f.get_double("split_val", 0.1), f.get_double("split_test", 0.1)};
    s.out_dir = f.get_string("out_dir", "runs");

    if (f.has("architectures")) {
        for (const std::string& a : f.get_list("architectures"))
            s.architectures.push_back(named("architectures", [&a](const std::string&) { return nn::parse_architecture(a); }));
    } else {
        s.architectures = {e.architecture};
    }
    if (f.has("optimizers")) {
        for (const std::string& k : f.get_list("optimizers"))
            s.optimizers.push_back(named("optimizers", [&k](const std::string&) { return optim::parse_kind(k); }));
    } else {
        s.optimizers.assign(optim::kAllKinds.begin(), optim::kAllKinds.end());
    }
    if (f.has("transfer_modes")) {
        for (const std::string& m : f.get_list("transfer_modes")) {
            if (m == "off" || m == "false") {
                s.transfer_modes.push_back(false);
            } else if (m == "on" || m == "true") {
                s.transfer_modes.push_back(true);
            } else {
                throw ValueError(f.where("transfer_modes") + ": expected off/on, got '" + m + "'");
            }
        }
    } else {
        s.transfer_modes = {false, true};
    }
    s.source_pattern_offset = f.get_size("source_pattern_offset", 5);
    s.pretrain_epochs = f.get_size("pretrain_epochs", 5);
    if (f.has("pretrain_optimizer"))
        s.pretrain_optimizer = named("pretrain_optimizer", [](const std::string& v) { return optim::parse_kind(v); });
    for (nn::Architecture a : {nn::Architecture::mini_vgg, nn::Architecture::mini_resnet18, nn::Architecture::mini_resnet34}) {
        std::string key = "checkpoint_" + std::string(nn::architecture_name(a));
        if (f.has(key)) s.source_checkpoints[a] = *f.get(key);
    }
    if (e.transfer && e.checkpoint_path.empty()) throw ValueError(f.where("transfer") + ": transfer requires 'checkpoint'");
    return s;
}

}  // namespace gradbench::config
