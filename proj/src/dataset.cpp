#include "gradbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_set>

#include "gradbench/errors.hpp"
#include "gradbench/rng.hpp"

namespace gradbench::data {

namespace fs = std::filesystem;

int DatasetManifest::class_index(std::string_view name) const {
    auto it = std::lower_bound(class_names.begin(), class_names.end(), name);
    if (it == class_names.end() || *it != name) return -1;
    return static_cast<int>(it - class_names.begin());
}

DatasetManifest parse_manifest(std::string_view text, const fs::path& root, const std::vector<std::string>* classes) {
    DatasetManifest m;
    m.root = root;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty() || line.front() == '#') continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string_view::npos || tab == 0 || tab + 1 == line.size()) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": expected 'path<TAB>class'");
        }
        std::string path(line.substr(0, tab));
        std::string cls(line.substr(tab + 1));
        if (!seen.insert(path).second) {
            throw FormatError("manifest line " + std::to_string(line_no) + ": duplicate path " + path);
        }
        m.records.push_back({std::move(path), std::move(cls)});
    }
    if (classes) {
        m.class_names = *classes;
        std::sort(m.class_names.begin(), m.class_names.end());
        for (const ManifestRecord& r : m.records) {
            if (m.class_index(r.class_name) < 0) throw ValueError("manifest: unknown class label '" + r.class_name + "' for " + r.path);
        }
    } else {
        std::set<std::string> names;
        for (const ManifestRecord& r : m.records) names.insert(r.class_name);
        m.class_names.assign(names.begin(), names.end());
    }
    return m;
}

DatasetManifest read_manifest(const fs::path& path, const std::vector<std::string>* classes) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str(), path.parent_path(), classes);
}

Dataset load_dataset(const fs::path& manifest_path, std::optional<std::pair<std::size_t, std::size_t>> size,
                     const std::vector<std::string>* classes) {
    DatasetManifest m = read_manifest(manifest_path, classes);
    if (m.records.empty()) throw ValueError("manifest " + manifest_path.string() + " has no records");
    Dataset d;
    d.class_names = m.class_names;
    d.samples.reserve(m.records.size());
    for (const ManifestRecord& r : m.records) {
        fs::path p = m.root / r.path;
        if (!fs::exists(p)) throw IoError("manifest references missing file " + p.string());
        Tensor img = read_image(p);
        if (size) img = resize_bilinear(img, size->first, size->second);
        d.samples.push_back({std::move(img), m.class_index(r.class_name)});
    }
    return d;
}

std::vector<std::size_t> SplitAssignment::indices(SplitTag tag) const {
    std::vector<std::size_t> out;
    for (std::size_t i : order)
        if (tags[i] == tag) out.push_back(i);
    return out;
}

std::size_t SplitAssignment::count(SplitTag tag) const {
    return static_cast<std::size_t>(std::count(tags.begin(), tags.end(), tag));
}

SplitCounts split_counts(std::size_t n, const SplitRatios& r) {
    if (!(r.train > 0 && r.val > 0 && r.test > 0)) throw ValueError("split ratios must all be positive");
    if (std::abs(r.train + r.val + r.test - 1.0) > 1e-9) throw ValueError("split ratios must sum to 1");
    // The small slack keeps products such as 0.1 * 30 from flooring below the
    // integer they represent.
    auto part = [n](double ratio) { return static_cast<std::size_t>(std::floor(ratio * n + 1e-9)); };
    SplitCounts c{0, part(r.val), part(r.test)};
    c.train = n - c.val - c.test;
    return c;
}

SplitAssignment split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
    if (n < 3) throw ValueError("split_dataset needs at least 3 samples, got " + std::to_string(n));
    SplitCounts c = split_counts(n, ratios);
    SplitAssignment a;
    a.ratios = ratios;
    a.seed = seed;
    a.order.resize(n);
    std::iota(a.order.begin(), a.order.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {hash_name("split")}));
    rng.shuffle(std::span<std::size_t>(a.order));
    a.tags.assign(n, SplitTag::train);
    for (std::size_t k = 0; k < n; ++k) {
        SplitTag t = k < c.train ? SplitTag::train : (k < c.train + c.val ? SplitTag::val : SplitTag::test);
        a.tags[a.order[k]] = t;
    }
    return a;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch) {
    if (batch_size == 0) throw ValueError("batch size must be at least 1");
    if (count == 0) throw ValueError("cannot batch an empty split");
    std::vector<std::size_t> perm(count);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {hash_name("batch"), epoch}));
    rng.shuffle(std::span<std::size_t>(perm));
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b < count; b += batch_size) {
        out.emplace_back(perm.begin() + b, perm.begin() + std::min(count, b + batch_size));
    }
    return out;
}

namespace {

Batch stack(std::span<const Sample> samples, std::span<const std::size_t> indices,
            const std::function<Tensor(std::size_t)>& image_of) {
    if (indices.empty()) throw ValueError("empty batch");
    const Shape& s = samples[indices[0]].image.shape();
    Shape shape{indices.size()};
    shape.insert(shape.end(), s.begin(), s.end());
    Batch b{Tensor(shape), {}};
    const std::size_t per = shape_numel(s);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const Sample& smp = samples[indices[k]];
        if (smp.image.shape() != s) {
            throw ShapeError("batch mixes image shapes " + shape_string(s) + " and " + shape_string(smp.image.shape()));
        }
        Tensor img = image_of(indices[k]);
        std::copy_n(img.raw(), per, b.images.raw() + k * per);
        b.labels.push_back(smp.label);
    }
    return b;
}

}  // namespace

Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices) {
    return stack(samples, indices, [&](std::size_t i) { return samples[i].image; });
}

std::uint64_t augment_seed(std::uint64_t seed, std::uint64_t epoch, std::size_t index) {
    return derive_seed(seed, {hash_name("augment"), epoch, index});
}

Batch make_augmented_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                           const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch) {
    return stack(samples, indices, [&](std::size_t i) {
        Rng rng(augment_seed(seed, epoch, i));
        return augment(samples[i].image, spec, rng);
    });
}

namespace {

constexpr std::array<std::string_view, kPatternCount> kPatternNames = {
    "disk", "ring", "cross", "stripes", "checkerboard", "square", "triangle", "bars", "saltire", "dots"};

double fract(double x) { return x - std::floor(x); }

// Pattern membership at normalized coordinates (u, v) in roughly [-1, 1].
bool inside(std::size_t pattern, double u, double v) {
    const double r = std::hypot(u, v);
    const double box = std::max(std::abs(u), std::abs(v));
    switch (pattern) {
        case 0: return r < 0.6;
        case 1: return r > 0.4 && r < 0.7;
        case 2: return box < 0.8 && (std::abs(u) < 0.2 || std::abs(v) < 0.2);
        case 3: return box < 0.85 && fract((u + 1.0) * 2.0) < 0.5;
        case 4: return box < 0.85 && (fract((u + 1.0) * 1.5) < 0.5) != (fract((v + 1.0) * 1.5) < 0.5);
        case 5: return box > 0.45 && box < 0.7;
        case 6: return v > -0.55 && v < 0.65 && std::abs(u) < (0.65 - v) * 0.6;
        case 7: return box < 0.85 && fract((v + 1.0) * 2.0) < 0.5;
        case 8: return box < 0.8 && std::abs(std::abs(u) - std::abs(v)) < 0.16;
        case 9: {
            if (box > 0.85) return false;
            double du = fract((u + 1.0) * 1.5) - 0.5;
            double dv = fract((v + 1.0) * 1.5) - 0.5;
            return du * du + dv * dv < 0.06;
        }
        default: throw ValueError("unknown pattern " + std::to_string(pattern));
    }
}

}  // namespace

std::string_view pattern_name(std::size_t pattern) {
    if (pattern >= kPatternCount) throw ValueError("pattern index " + std::to_string(pattern) + " out of range");
    return kPatternNames[pattern];
}

Tensor synth_image(std::size_t pattern, std::size_t index, std::size_t size, double noise, std::uint64_t seed) {
    if (pattern >= kPatternCount) throw ValueError("pattern index " + std::to_string(pattern) + " out of range");
    if (size == 0) throw ValueError("synthetic image size must be positive");
    if (noise < 0) throw ValueError("noise level must be non-negative");
    Rng rng(derive_seed(seed, {hash_name("synth"), pattern, index}));
    const double dx = rng.uniform(-0.12, 0.12);
    const double dy = rng.uniform(-0.12, 0.12);
    const double scale = rng.uniform(0.88, 1.12);
    double fg[3], bg[3];
    for (int c = 0; c < 3; ++c) fg[c] = rng.uniform(0.65, 0.95);
    for (int c = 0; c < 3; ++c) bg[c] = rng.uniform(0.05, 0.25);

    Tensor img({3, size, size});
    const std::size_t plane = size * size;
    for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
            double u = ((x + 0.5) / size * 2.0 - 1.0 - dx) / scale;
            double v = ((y + 0.5) / size * 2.0 - 1.0 - dy) / scale;
            bool on = inside(pattern, u, v);
            for (int c = 0; c < 3; ++c) img[c * plane + y * size + x] = on ? fg[c] : bg[c];
        }
    }
    // Quantized to bytes so that a written and re-read image is identical.
    for (double& p : img.data()) {
        double q = noise > 0 ? std::clamp(p + noise * rng.normal(), 0.0, 1.0) : p;
        p = std::round(q * 255.0) / 255.0;
    }
    return img;
}

Dataset synth_dataset(const SynthOptions& o) {
    if (o.classes < 2) throw ValueError("synthetic data needs at least 2 classes");
    if (o.pattern_offset + o.classes > kPatternCount) {
        throw ValueError("requested patterns " + std::to_string(o.pattern_offset) + ".." +
                         std::to_string(o.pattern_offset + o.classes - 1) + " but only " +
                         std::to_string(kPatternCount) + " are available");
    }
    if (o.per_class == 0) throw ValueError("per-class count must be positive");
    Dataset d;
    for (std::size_t k = 0; k < o.classes; ++k) {
        std::size_t p = o.pattern_offset + k;
        d.class_names.push_back(std::to_string(p) + "_" + std::string(kPatternNames[p]));
    }
    d.samples.reserve(o.classes * o.per_class);
    for (std::size_t k = 0; k < o.classes; ++k)
        for (std::size_t i = 0; i < o.per_class; ++i)
            d.samples.push_back({synth_image(o.pattern_offset + k, i, o.size, o.noise, o.seed), static_cast<int>(k)});
    return d;
}

void write_dataset(const Dataset& dataset, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
    std::string manifest;
    std::vector<std::size_t> counter(dataset.classes(), 0);
    for (const std::string& name : dataset.class_names) {
        fs::create_directories(dir / name, ec);
        if (ec) throw IoError("cannot create directory " + (dir / name).string() + ": " + ec.message());
    }
    for (const Sample& s : dataset.samples) {
        const std::string& cls = dataset.class_names.at(static_cast<std::size_t>(s.label));
        char file[32];
        std::snprintf(file, sizeof file, "%05zu.ppm", counter[s.label]++);
        std::string rel = cls + "/" + file;
        write_p6(dir / rel, s.image);
        manifest += rel + "\t" + cls + "\n";
    }
    std::ofstream out(dir / "manifest.tsv", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "manifest.tsv").string());
    out << manifest;
    if (!out) throw IoError("write failed for " + (dir / "manifest.tsv").string());
}

}  // namespace gradbench::data
