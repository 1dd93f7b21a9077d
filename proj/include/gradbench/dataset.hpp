#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "gradbench/image.hpp"
#include "gradbench/tensor.hpp"

namespace gradbench::data {

struct Sample {
    Tensor image;  // [C x H x W], values in [0, 1]
    int label = 0;
};

struct ManifestRecord {
    std::string path;  // relative to the manifest's directory
    std::string class_name;
};

struct DatasetManifest {
    std::filesystem::path root;
    std::vector<ManifestRecord> records;
    std::vector<std::string> class_names;  // sorted; position is the label

    int class_index(std::string_view name) const;
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;

    std::size_t size() const { return samples.size(); }
    std::size_t classes() const { return class_names.size(); }
};

// `path<TAB>class` per line; lines starting with '#' and blank lines are
// skipped. When `classes` is given the labels use that ordering and any other
// class name is rejected; otherwise the sorted set of names is used.
DatasetManifest parse_manifest(std::string_view text, const std::filesystem::path& root,
                               const std::vector<std::string>* classes = nullptr);
DatasetManifest read_manifest(const std::filesystem::path& path, const std::vector<std::string>* classes = nullptr);

// Decodes every record; images are resized when `size` is set.
Dataset load_dataset(const std::filesystem::path& manifest_path,
                     std::optional<std::pair<std::size_t, std::size_t>> size = std::nullopt,
                     const std::vector<std::string>* classes = nullptr);

enum class SplitTag : std::uint8_t { train, val, test };

struct SplitRatios {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct SplitAssignment {
    std::vector<SplitTag> tags;  // per record
    // Record indices in permuted order, grouped train, val, test.
    std::vector<std::size_t> order;
    SplitRatios ratios;
    std::uint64_t seed = 0;

    std::vector<std::size_t> indices(SplitTag tag) const;
    std::size_t count(SplitTag tag) const;
};

struct SplitCounts {
    std::size_t train, val, test;
};
// val = floor(ratio * n), test = floor(ratio * n), train takes the rest.
SplitCounts split_counts(std::size_t n, const SplitRatios& ratios);

SplitAssignment split_dataset(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

// Index batches for one epoch, shuffled by (seed, epoch). The last batch may
// be short.
std::vector<std::vector<std::size_t>> make_batches(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                   std::uint64_t epoch);

// Stacks samples[indices] into [N x C x H x W] with matching labels.
struct Batch {
    Tensor images;
    std::vector<int> labels;
};
Batch make_batch(std::span<const Sample> samples, std::span<const std::size_t> indices);
// Each image is augmented from the stream keyed by (seed, epoch, index).
Batch make_augmented_batch(std::span<const Sample> samples, std::span<const std::size_t> indices,
                           const AugmentSpec& spec, std::uint64_t seed, std::uint64_t epoch);

// Stream for augmenting sample `index` in `epoch`.
std::uint64_t augment_seed(std::uint64_t seed, std::uint64_t epoch, std::size_t index);

// Synthetic class-conditional images.
inline constexpr std::size_t kPatternCount = 10;
std::string_view pattern_name(std::size_t pattern);

struct SynthOptions {
    std::size_t classes = 5;
    std::size_t per_class = 100;
    std::size_t size = 64;
    double noise = 0.05;
    std::uint64_t seed = 1;
    // Class k draws pattern (pattern_offset + k); disjoint offsets give
    // disjoint pattern sets.
    std::size_t pattern_offset = 0;
};

// Samples are ordered class-major. Class names are "<pattern index>_<name>"
// so that lexicographic order matches label order.
Dataset synth_dataset(const SynthOptions& options);
// Single image for (pattern, sample index); pure in its arguments.
Tensor synth_image(std::size_t pattern, std::size_t index, std::size_t size, double noise, std::uint64_t seed);

// Writes <dir>/<class>/<nnnnn>.ppm and <dir>/manifest.tsv.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);

}  // namespace gradbench::data
