#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gradbench/network.hpp"
#include "gradbench/tensor.hpp"

namespace gradbench {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::string_view kCheckpointMagic{"NNCKPT1\n", 8};

/// Named tensors plus the metadata needed to rebuild a compatible network.
/// Values are stored as 32-bit floats; decoding widens them back to double.
struct Checkpoint {
    std::vector<std::pair<std::string, Tensor>> tensors;
    nn::Architecture architecture = nn::Architecture::custom;
    nn::InputSpec input;
    std::size_t classes = 0;
    std::size_t width = 1;
    std::uint32_t version = kCheckpointVersion;

    const Tensor* find(std::string_view name) const;
};

// Parameters under their own names; batch-norm statistics as
// "<layer>.running_mean" and "<layer>.running_var".
Checkpoint capture_checkpoint(const nn::Network& net);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
// Throws FormatError on a bad magic, unknown version, truncation or
// inconsistent sizes.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const nn::Network& net, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct ApplyResult {
    std::vector<std::string> loaded;
    // Head parameters left untouched because the class counts differ.
    std::vector<std::string> skipped_head;
};

// Copies every parameter and running statistic by name. Architecture, input
// and width must match; head parameters are skipped when the class counts
// differ. Any other missing tensor or shape mismatch throws ValueError.
ApplyResult apply_checkpoint(nn::Network& net, const Checkpoint& ckpt);

}  // namespace gradbench
