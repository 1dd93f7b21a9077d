#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "gradbench/rng.hpp"
#include "gradbench/tensor.hpp"

namespace testing {

inline gradbench::Tensor random_tensor(gradbench::Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    gradbench::Rng rng(seed);
    gradbench::Tensor t(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Uniform values with |x| >= gap, for ops with a kink at zero.
inline gradbench::Tensor away_from_zero(gradbench::Shape shape, std::uint64_t seed, double gap = 1e-3) {
    gradbench::Tensor t = random_tensor(std::move(shape), seed);
    for (double& v : t.data()) {
        if (std::abs(v) < gap) v = v < 0 ? -gap - 0.1 : gap + 0.1;
    }
    return t;
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = std::filesystem::temp_directory_path() /
                ("gradbench_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace testing
