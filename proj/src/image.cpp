#include "gradbench/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "gradbench/errors.hpp"

namespace gradbench {

namespace {

class HeaderReader {
public:
    explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            std::uint8_t c = bytes_[pos_];
            if (c == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else if (std::isspace(c)) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::size_t number(const char* what) {
        skip_space_and_comments();
        std::size_t start = pos_;
        std::size_t value = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            value = value * 10 + (bytes_[pos_] - '0');
            if (value > (1u << 24)) throw FormatError(std::string("pnm: ") + what + " is too large");
            ++pos_;
        }
        if (pos_ == start) throw FormatError(std::string("pnm: missing ") + what);
        return value;
    }

    // Exactly one whitespace byte separates the header from the raster.
    void end_of_header() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
            throw FormatError("pnm: expected whitespace after maxval");
        }
        ++pos_;
    }

    std::size_t pos() const { return pos_; }
    void advance(std::size_t n) { pos_ += n; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

std::size_t channel_count(const Tensor& image, const char* op) {
    if (image.rank() != 3) throw ShapeError(std::string(op) + ": expected [C x H x W], got " + shape_string(image.shape()));
    return image.dim(0);
}

std::uint8_t to_byte(double v) {
    double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '6' && bytes[1] != '5')) {
        throw FormatError("pnm: unsupported magic (expected P6 or P5)");
    }
    const bool gray = bytes[1] == '5';
    HeaderReader r(bytes);
    r.advance(2);
    std::size_t w = r.number("width");
    std::size_t h = r.number("height");
    std::size_t maxval = r.number("maxval");
    if (w == 0 || h == 0) throw FormatError("pnm: zero image dimension");
    if (maxval != 255) throw FormatError("pnm: only 8-bit images (maxval 255) are supported, got " + std::to_string(maxval));
    r.end_of_header();

    const std::size_t src_channels = gray ? 1 : 3;
    const std::size_t need = w * h * src_channels;
    if (bytes.size() - r.pos() < need) {
        throw FormatError("pnm: truncated raster, expected " + std::to_string(need) + " bytes, found " +
                          std::to_string(bytes.size() - r.pos()));
    }
    const std::uint8_t* px = bytes.data() + r.pos();
    Tensor out({3, h, w});
    double* dst = out.raw();
    const std::size_t plane = h * w;
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            std::uint8_t b = gray ? px[i] : px[i * 3 + c];
            dst[c * plane + i] = b / 255.0;
        }
    }
    return out;
}

Tensor read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_pnm(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

std::vector<std::uint8_t> encode_p6(const Tensor& image) {
    std::size_t channels = channel_count(image, "encode_p6");
    if (channels != 1 && channels != 3) throw ShapeError("encode_p6: expected 1 or 3 channels, got " + std::to_string(channels));
    const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
    std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    std::vector<std::uint8_t> out(header.begin(), header.end());
    out.reserve(out.size() + plane * 3);
    const double* src = image.raw();
    for (std::size_t i = 0; i < plane; ++i) {
        for (std::size_t c = 0; c < 3; ++c) {
            std::size_t sc = channels == 1 ? 0 : c;
            out.push_back(to_byte(src[sc * plane + i]));
        }
    }
    return out;
}

void write_p6(const std::filesystem::path& path, const Tensor& image) {
    std::vector<std::uint8_t> bytes = encode_p6(image);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write image " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + path.string());
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
    const std::size_t channels = channel_count(image, "resize_bilinear");
    if (height == 0 || width == 0) throw ValueError("resize_bilinear: target size must be positive");
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h == height && w == width) return image;

    const double sy = static_cast<double>(h) / height;
    const double sx = static_cast<double>(w) / width;
    struct Tap {
        std::size_t i0, i1;
        double t;
    };
    auto taps = [](std::size_t n_out, std::size_t n_in, double scale) {
        std::vector<Tap> out(n_out);
        for (std::size_t d = 0; d < n_out; ++d) {
            double s = (d + 0.5) * scale - 0.5;
            s = std::clamp(s, 0.0, static_cast<double>(n_in - 1));
            std::size_t i0 = static_cast<std::size_t>(std::floor(s));
            std::size_t i1 = std::min(i0 + 1, n_in - 1);
            out[d] = {i0, i1, s - i0};
        }
        return out;
    };
    const std::vector<Tap> ty = taps(height, h, sy);
    const std::vector<Tap> tx = taps(width, w, sx);

    Tensor out({channels, height, width});
    const double* src = image.raw();
    double* dst = out.raw();
    for (std::size_t c = 0; c < channels; ++c) {
        const double* p = src + c * h * w;
        for (std::size_t y = 0; y < height; ++y) {
            const Tap& a = ty[y];
            for (std::size_t x = 0; x < width; ++x) {
                const Tap& b = tx[x];
                double top = p[a.i0 * w + b.i0] * (1 - b.t) + p[a.i0 * w + b.i1] * b.t;
                double bot = p[a.i1 * w + b.i0] * (1 - b.t) + p[a.i1 * w + b.i1] * b.t;
                *dst++ = top * (1 - a.t) + bot * a.t;
            }
        }
    }
    return out;
}

Tensor flip_horizontal(const Tensor& image) {
    const std::size_t channels = channel_count(image, "flip_horizontal");
    const std::size_t h = image.dim(1), w = image.dim(2);
    Tensor out = Tensor::like(image);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) out[(c * h + y) * w + x] = image[(c * h + y) * w + (w - 1 - x)];
    return out;
}

Tensor flip_vertical(const Tensor& image) {
    const std::size_t channels = channel_count(image, "flip_vertical");
    const std::size_t h = image.dim(1), w = image.dim(2);
    Tensor out = Tensor::like(image);
    for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t y = 0; y < h; ++y)
            std::copy_n(image.raw() + (c * h + (h - 1 - y)) * w, w, out.raw() + (c * h + y) * w);
    return out;
}

Tensor augment(const Tensor& image, const AugmentSpec& spec, Rng& rng) {
    if (!spec.enabled) return image;
    const bool h = rng.bernoulli(spec.hflip_probability);
    const bool v = rng.bernoulli(spec.vflip_probability);
    Tensor out = h ? flip_horizontal(image) : image;
    return v ? flip_vertical(out) : out;
}

}  // namespace gradbench
