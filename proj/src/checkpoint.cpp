#include "gradbench/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "gradbench/errors.hpp"

namespace gradbench {

namespace {

constexpr std::uint8_t kDtypeF32 = 0;
constexpr std::uint8_t kDtypeMeta = 255;
constexpr std::string_view kMetaName = "__meta__";

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        auto b = static_cast<const std::uint8_t*>(p);
        out.insert(out.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out.push_back(v); }
    void u16(std::uint16_t v) {
        for (int i = 0; i < 2; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    std::vector<std::uint8_t> out;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        if (b_.size() - pos_ < n) {
            throw FormatError(std::string("checkpoint truncated while reading ") + what + " at byte " +
                              std::to_string(pos_));
        }
        auto s = b_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(const char* what) { return take(1, what)[0]; }
    std::uint16_t u16(const char* what) {
        auto s = take(2, what);
        return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
    }
    std::uint32_t u32(const char* what) {
        auto s = take(4, what);
        return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
               (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
    }
    bool done() const { return pos_ == b_.size(); }

private:
    std::span<const std::uint8_t> b_;
    std::size_t pos_ = 0;
};

void write_name(Writer& w, std::string_view name) {
    if (name.size() > 0xffff) throw ValueError("checkpoint tensor name too long: " + std::string(name.substr(0, 40)));
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
}

std::string meta_text(const Checkpoint& c) {
    std::ostringstream s;
    s << "architecture=" << nn::architecture_name(c.architecture) << "\n"
      << "channels=" << c.input.channels << "\n"
      << "height=" << c.input.height << "\n"
      << "width=" << c.input.width << "\n"
      << "classes=" << c.classes << "\n"
      << "network_width=" << c.width << "\n";
    return s.str();
}

std::size_t meta_number(const std::map<std::string, std::string>& kv, const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("checkpoint metadata is missing '" + key + "'");
    try {
        std::size_t used = 0;
        unsigned long long v = std::stoull(it->second, &used);
        if (used != it->second.size()) throw std::invalid_argument(key);
        return static_cast<std::size_t>(v);
    } catch (const std::logic_error&) {
        throw FormatError("checkpoint metadata '" + key + "' is not a number: " + it->second);
    }
}

void parse_meta(Checkpoint& c, std::string_view text) {
    std::map<std::string, std::string> kv;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("checkpoint metadata line without '=': " + line);
        kv[line.substr(0, eq)] = line.substr(eq + 1);
    }
    auto arch = kv.find("architecture");
    if (arch == kv.end()) throw FormatError("checkpoint metadata is missing 'architecture'");
    try {
        c.architecture = arch->second == "custom" ? nn::Architecture::custom : nn::parse_architecture(arch->second);
    } catch (const ValueError& e) {
        throw FormatError(std::string("checkpoint metadata: ") + e.what());
    }
    c.input.channels = meta_number(kv, "channels");
    c.input.height = meta_number(kv, "height");
    c.input.width = meta_number(kv, "width");
    c.classes = meta_number(kv, "classes");
    c.width = meta_number(kv, "network_width");
}

}  // namespace

const Tensor* Checkpoint::find(std::string_view name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

Checkpoint capture_checkpoint(const nn::Network& net) {
    Checkpoint c;
    c.architecture = net.architecture();
    c.input = net.input_spec();
    c.classes = net.classes();
    c.width = net.width();
    for (const Variable& p : net.parameters()) c.tensors.emplace_back(p.name(), p.value());
    for (const nn::NamedState& s : net.states()) {
        c.tensors.emplace_back(s.name + ".running_mean", s.state.running_mean);
        c.tensors.emplace_back(s.name + ".running_var", s.state.running_var);
    }
    return c;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
    Writer w;
    w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
    w.u32(c.version);
    w.u32(static_cast<std::uint32_t>(c.tensors.size() + 1));
    for (const auto& [name, t] : c.tensors) {
        if (name == kMetaName) throw ValueError("tensor name __meta__ is reserved");
        write_name(w, name);
        w.u8(kDtypeF32);
        if (t.rank() > 255) throw ValueError("tensor rank too large for checkpoint: " + name);
        w.u8(static_cast<std::uint8_t>(t.rank()));
        for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
        for (double v : t.data()) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    }
    std::string meta = meta_text(c);
    write_name(w, kMetaName);
    w.u8(kDtypeMeta);
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta.data(), meta.size());
    return w.out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(kCheckpointMagic.size(), "magic");
    if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
        throw FormatError("not a checkpoint: bad magic bytes");
    }
    Checkpoint c;
    c.version = r.u32("version");
    if (c.version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(c.version));
    }
    const std::uint32_t count = r.u32("tensor count");
    bool have_meta = false;
    for (std::uint32_t k = 0; k < count; ++k) {
        auto nb = r.take(r.u16("name length"), "name");
        std::string name(nb.begin(), nb.end());
        const std::uint8_t dtype = r.u8("dtype");
        const std::uint8_t rank = r.u8("rank");
        Shape shape;
        std::size_t numel = 1;
        for (std::uint8_t i = 0; i < rank; ++i) {
            shape.push_back(r.u32("dims"));
            numel *= shape.back();
            if (numel > (std::size_t{1} << 34)) throw FormatError("checkpoint tensor " + name + " is implausibly large");
        }
        if (dtype == kDtypeMeta) {
            if (name != kMetaName || rank != 1) throw FormatError("malformed checkpoint metadata entry");
            auto text = r.take(numel, "metadata");
            parse_meta(c, std::string_view(reinterpret_cast<const char*>(text.data()), text.size()));
            have_meta = true;
            continue;
        }
        if (dtype != kDtypeF32) throw FormatError("checkpoint tensor " + name + " has unknown dtype " + std::to_string(dtype));
        if (rank == 0 || numel == 0) throw FormatError("checkpoint tensor " + name + " has an empty shape");
        auto raw = r.take(numel * 4, "tensor data");
        std::vector<double> values(numel);
        for (std::size_t i = 0; i < numel; ++i) {
            std::uint32_t u = static_cast<std::uint32_t>(raw[4 * i]) | (static_cast<std::uint32_t>(raw[4 * i + 1]) << 8) |
                              (static_cast<std::uint32_t>(raw[4 * i + 2]) << 16) |
                              (static_cast<std::uint32_t>(raw[4 * i + 3]) << 24);
            values[i] = std::bit_cast<float>(u);
        }
        c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    if (!have_meta) throw FormatError("checkpoint has no __meta__ entry");
    if (!r.done()) throw FormatError("checkpoint has trailing bytes after the last tensor");
    return c;
}

void save_checkpoint(const nn::Network& net, const std::filesystem::path& path) {
    std::vector<std::uint8_t> bytes = encode_checkpoint(capture_checkpoint(net));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

ApplyResult apply_checkpoint(nn::Network& net, const Checkpoint& c) {
    if (c.architecture != net.architecture()) {
        throw ValueError("architecture mismatch: checkpoint is " + std::string(nn::architecture_name(c.architecture)) +
                         ", network is " + std::string(nn::architecture_name(net.architecture())));
    }
    const nn::InputSpec& in = net.input_spec();
    if (!(c.input == in)) {
        throw ValueError("input mismatch: checkpoint expects " + std::to_string(c.input.channels) + "x" +
                         std::to_string(c.input.height) + "x" + std::to_string(c.input.width) + ", network expects " +
                         std::to_string(in.channels) + "x" + std::to_string(in.height) + "x" + std::to_string(in.width));
    }
    if (c.width != net.width()) {
        throw ValueError("width mismatch: checkpoint " + std::to_string(c.width) + ", network " +
                         std::to_string(net.width()));
    }
    const bool same_classes = c.classes == net.classes();
    ApplyResult result;
    // Validate everything before mutating so a failed apply leaves net intact.
    std::vector<std::pair<Variable*, const Tensor*>> copies;
    for (Variable& p : net.parameters()) {
        if (!same_classes && net.is_head_parameter(p.name())) {
            result.skipped_head.push_back(p.name());
            continue;
        }
        const Tensor* t = c.find(p.name());
        if (!t) throw ValueError("checkpoint has no tensor named " + p.name());
        if (t->shape() != p.shape()) {
            throw ValueError("shape mismatch for " + p.name() + ": checkpoint " + shape_string(t->shape()) +
                             ", network " + shape_string(p.shape()));
        }
        copies.emplace_back(&p, t);
    }
    std::vector<std::pair<Tensor*, const Tensor*>> stats;
    for (nn::NamedState& s : net.states()) {
        for (auto [suffix, dst] : {std::pair{".running_mean", &s.state.running_mean},
                                   std::pair{".running_var", &s.state.running_var}}) {
            std::string name = s.name + suffix;
            const Tensor* t = c.find(name);
            if (!t) throw ValueError("checkpoint has no tensor named " + name);
            if (t->shape() != dst->shape()) {
                throw ValueError("shape mismatch for " + name + ": checkpoint " + shape_string(t->shape()) +
                                 ", network " + shape_string(dst->shape()));
            }
            stats.emplace_back(dst, t);
        }
    }
    for (auto [p, t] : copies) {
        p->value() = *t;
        result.loaded.push_back(p->name());
    }
    for (auto [dst, t] : stats) *dst = *t;
    return result;
}

}  // namespace gradbench
