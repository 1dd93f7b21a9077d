#include "gradbench/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gradbench/errors.hpp"

namespace gradbench {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void ensure_finite(const Tensor& t, const char* op) {
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in output");
}

void require_rank(const Variable& v, std::size_t rank, const char* op, const char* what) {
    if (v.value().rank() != rank) {
        throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_string(v.shape()));
    }
}

void require_same_shape(const Variable& a, const Variable& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
    }
}

// Geometry of a 2-D sliding window over an N x C x H x W tensor.
struct Window {
    std::size_t n, c, h, w;
    std::size_t kh, kw, stride, pad;
    std::size_t oh, ow;
};

std::size_t output_extent(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* op) {
    if (stride == 0) throw ValueError(std::string(op) + ": stride must be positive");
    const std::size_t padded = in + 2 * pad;
    if (padded < k) {
        throw ShapeError(std::string(op) + ": window " + std::to_string(k) + " larger than padded extent " +
                         std::to_string(padded));
    }
    // Floor: a trailing partial window is dropped, as stride-2 downsampling
    // of even extents requires.
    return (padded - k) / stride + 1;
}

// Unfolds one image (C x H x W) into a (C*kh*kw) x (oh*ow) matrix.
// Output columns [lo, hi) whose input column ox * stride + k - pad lies inside the image.
std::pair<std::size_t, std::size_t> valid_columns(const Window& win, std::size_t k) {
    std::size_t lo = 0;
    while (lo < win.ow && lo * win.stride + k < win.pad) ++lo;
    std::size_t hi = lo;
    while (hi < win.ow && hi * win.stride + k - win.pad < win.w) ++hi;
    return {lo, hi};
}

// Per-thread reusable buffers; contents are unspecified on return.
std::vector<double>& scratch(std::size_t slot, std::size_t size) {
    thread_local std::vector<double> buffers[2];
    std::vector<double>& b = buffers[slot];
    if (b.size() < size) b.resize(size);
    return b;
}

void im2col(const double* image, const Window& win, double* col) {
    const std::size_t spatial = win.oh * win.ow;
    for (std::size_t c = 0; c < win.c; ++c) {
        const double* plane = image + c * win.h * win.w;
        for (std::size_t ki = 0; ki < win.kh; ++ki) {
            for (std::size_t kj = 0; kj < win.kw; ++kj) {
                double* row = col + ((c * win.kh + ki) * win.kw + kj) * spatial;
                const auto [lo, hi] = valid_columns(win, kj);
                for (std::size_t oy = 0; oy < win.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * win.stride + ki) -
                                              static_cast<std::ptrdiff_t>(win.pad);
                    double* out = row + oy * win.ow;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(win.h)) {
                        std::fill(out, out + win.ow, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::size_t>(iy) * win.w;
                    std::fill(out, out + lo, 0.0);
                    if (win.stride == 1) {
                        std::copy(src + (lo + kj - win.pad), src + (hi + kj - win.pad), out + lo);
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox) out[ox] = src[ox * win.stride + kj - win.pad];
                    }
                    std::fill(out + hi, out + win.ow, 0.0);
                }
            }
        }
    }
}

// Adjoint of im2col: scatters a column matrix back onto an image, accumulating.
void col2im(const double* col, const Window& win, double* image) {
    const std::size_t spatial = win.oh * win.ow;
    for (std::size_t c = 0; c < win.c; ++c) {
        double* plane = image + c * win.h * win.w;
        for (std::size_t ki = 0; ki < win.kh; ++ki) {
            for (std::size_t kj = 0; kj < win.kw; ++kj) {
                const double* row = col + ((c * win.kh + ki) * win.kw + kj) * spatial;
                const auto [lo, hi] = valid_columns(win, kj);
                for (std::size_t oy = 0; oy < win.oh; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * win.stride + ki) -
                                              static_cast<std::ptrdiff_t>(win.pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(win.h)) continue;
                    double* dst = plane + static_cast<std::size_t>(iy) * win.w;
                    const double* src = row + oy * win.ow;
                    for (std::size_t ox = lo; ox < hi; ++ox) dst[ox * win.stride + kj - win.pad] += src[ox];
                }
            }
        }
    }
}

}  // namespace

Variable matmul(Graph& g, const Variable& a, const Variable& b) {
    require_rank(a, 2, "matmul", "lhs");
    require_rank(b, 2, "matmul", "rhs");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
    }
    Tensor out({m, n});
    MatMap(out.raw(), m, n).noalias() = ConstMatMap(a.value().raw(), m, k) * ConstMatMap(b.value().raw(), k, n);
    ensure_finite(out, "matmul");
    return g.record(std::move(out), {a, b}, [a, b, m, k, n](const Tensor& dout) mutable {
        ConstMatMap dy(dout.raw(), m, n);
        if (a.requires_grad()) {
            MatMap(a.grad().raw(), m, k).noalias() += dy * ConstMatMap(b.value().raw(), k, n).transpose();
        }
        if (b.requires_grad()) {
            MatMap(b.grad().raw(), k, n).noalias() += ConstMatMap(a.value().raw(), m, k).transpose() * dy;
        }
    });
}

Variable add_bias(Graph& g, const Variable& x, const Variable& bias) {
    require_rank(x, 2, "add_bias", "input");
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (bias.value().size() != cols) {
        throw ShapeError("add_bias: bias " + shape_string(bias.shape()) + " does not match input " +
                         shape_string(x.shape()));
    }
    Tensor out = x.value();
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias.value()[c];
    }
    ensure_finite(out, "add_bias");
    return g.record(std::move(out), {x, bias}, [x, bias, rows, cols](const Tensor& dout) mutable {
        if (x.requires_grad()) x.accumulate_grad(dout);
        if (bias.requires_grad()) {
            Tensor& db = bias.grad();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t c = 0; c < cols; ++c) db[c] += dout[r * cols + c];
            }
        }
    });
}

Variable linear(Graph& g, const Variable& x, const Variable& weight, const Variable& bias) {
    Variable y = matmul(g, x, weight);
    return bias.defined() ? add_bias(g, y, bias) : y;
}

Variable add(Graph& g, const Variable& a, const Variable& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    ensure_finite(out, "add");
    return g.record(std::move(out), {a, b}, [a, b](const Tensor& dout) mutable {
        if (a.requires_grad()) a.accumulate_grad(dout);
        if (b.requires_grad()) b.accumulate_grad(dout);
    });
}

Variable mul(Graph& g, const Variable& a, const Variable& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    ensure_finite(out, "mul");
    return g.record(std::move(out), {a, b}, [a, b](const Tensor& dout) mutable {
        // Read both values before accumulating: a and b may be the same Variable.
        const Tensor av = a.value();
        const Tensor bv = b.value();
        if (a.requires_grad()) {
            Tensor& ga = a.grad();
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += dout[i] * bv[i];
        }
        if (b.requires_grad()) {
            Tensor& gb = b.grad();
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += dout[i] * av[i];
        }
    });
}

Variable sum(Graph& g, const Variable& a) {
    double total = 0.0;
    for (double v : a.value().data()) total += v;
    Tensor out = Tensor::scalar(total);
    ensure_finite(out, "sum");
    return g.record(std::move(out), {a}, [a](const Tensor& dout) mutable {
        Tensor& ga = a.grad();
        const double d = dout[0];
        for (double& v : ga.data()) v += d;
    });
}

Variable relu(Graph& g, const Variable& x) {
    Tensor out = x.value();
    for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
    ensure_finite(out, "relu");
    if (g.tracing_decisions()) {
        std::uint64_t word = 0;
        std::size_t bits = 0;
        for (double v : x.value().data()) {
            word = (word << 1) | (v > 0.0 ? 1u : 0u);
            if (++bits == 64) {
                g.mix_decision(word);
                word = 0;
                bits = 0;
            }
        }
        g.mix_decision(word);
    }
    return g.record(std::move(out), {x}, [x](const Tensor& dout) mutable {
        Tensor& gx = x.grad();
        const Tensor& xv = x.value();
        for (std::size_t i = 0; i < gx.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += dout[i];
        }
    });
}

Variable conv2d(Graph& g, const Variable& input, const Variable& kernel, const Variable& bias, std::size_t stride,
                std::size_t padding) {
    require_rank(input, 4, "conv2d", "input");
    require_rank(kernel, 4, "conv2d", "kernel");
    const Shape& is = input.shape();
    const Shape& ks = kernel.shape();
    if (ks[1] != is[1]) {
        throw ShapeError("conv2d: kernel " + shape_string(ks) + " expects " + std::to_string(ks[1]) +
                         " input channels, input " + shape_string(is) + " has " + std::to_string(is[1]));
    }
    const std::size_t out_ch = ks[0];
    if (bias.defined() && bias.value().size() != out_ch) {
        throw ShapeError("conv2d: bias " + shape_string(bias.shape()) + " does not match " + std::to_string(out_ch) +
                         " output channels");
    }
    Window win{is[0], is[1], is[2], is[3], ks[2], ks[3], stride, padding, 0, 0};
    win.oh = output_extent(win.h, win.kh, stride, padding, "conv2d");
    win.ow = output_extent(win.w, win.kw, stride, padding, "conv2d");

    const std::size_t patch = win.c * win.kh * win.kw;
    const std::size_t spatial = win.oh * win.ow;
    const std::size_t in_image = win.c * win.h * win.w;
    const bool direct = win.kh == 1 && win.kw == 1 && stride == 1 && padding == 0;

    Tensor out({win.n, out_ch, win.oh, win.ow});
    std::vector<double>& col = scratch(0, direct ? 0 : patch * spatial);
    ConstMatMap weights(kernel.value().raw(), out_ch, patch);
    for (std::size_t b = 0; b < win.n; ++b) {
        const double* image = input.value().raw() + b * in_image;
        if (!direct) im2col(image, win, col.data());
        const double* cols = direct ? image : col.data();
        MatMap dst(out.raw() + b * out_ch * spatial, out_ch, spatial);
        dst.noalias() = weights * ConstMatMap(cols, patch, spatial);
        if (bias.defined()) {
            for (std::size_t o = 0; o < out_ch; ++o) dst.row(o).array() += bias.value()[o];
        }
    }
    ensure_finite(out, "conv2d");

    return g.record(std::move(out), {input, kernel, bias}, [input, kernel, bias, win, direct](const Tensor& dout) mutable {
        const std::size_t out_ch = kernel.shape()[0];
        const std::size_t patch = win.c * win.kh * win.kw;
        const std::size_t spatial = win.oh * win.ow;
        const std::size_t in_image = win.c * win.h * win.w;
        std::vector<double>& col = scratch(0, direct ? 0 : patch * spatial);
        std::vector<double>& dcol = scratch(1, direct ? 0 : patch * spatial);
        ConstMatMap weights(kernel.value().raw(), out_ch, patch);
        for (std::size_t b = 0; b < win.n; ++b) {
            ConstMatMap dy(dout.raw() + b * out_ch * spatial, out_ch, spatial);
            if (kernel.requires_grad()) {
                const double* image = input.value().raw() + b * in_image;
                if (!direct) im2col(image, win, col.data());
                const double* cols = direct ? image : col.data();
                MatMap(kernel.grad().raw(), out_ch, patch).noalias() += dy * ConstMatMap(cols, patch, spatial).transpose();
            }
            if (bias.defined() && bias.requires_grad()) {
                Tensor& db = bias.grad();
                for (std::size_t o = 0; o < out_ch; ++o) db[o] += dy.row(o).sum();
            }
            if (input.requires_grad()) {
                double* dimage = input.grad().raw() + b * in_image;
                if (direct) {
                    MatMap(dimage, patch, spatial).noalias() += weights.transpose() * dy;
                } else {
                    MatMap(dcol.data(), patch, spatial).noalias() = weights.transpose() * dy;
                    col2im(dcol.data(), win, dimage);
                }
            }
        }
    });
}

Variable maxpool2d(Graph& g, const Variable& input, std::size_t window, std::size_t stride) {
    require_rank(input, 4, "maxpool2d", "input");
    const Shape& is = input.shape();
    if (window == 0) throw ValueError("maxpool2d: window must be positive");
    if (is[2] < window || is[3] < window) {
        throw ShapeError("maxpool2d: window " + std::to_string(window) + " larger than spatial dims of " +
                         shape_string(is));
    }
    if (stride == 0) throw ValueError("maxpool2d: stride must be positive");
    const std::size_t n = is[0], c = is[1], h = is[2], w = is[3];
    const std::size_t oh = (h - window) / stride + 1;
    const std::size_t ow = (w - window) / stride + 1;
    Tensor out({n, c, oh, ow});
    std::vector<std::size_t> argmax(out.size());
    const double* src = input.value().raw();
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
        const std::size_t base = plane * h * w;
        for (std::size_t oy = 0; oy < oh; ++oy) {
            for (std::size_t ox = 0; ox < ow; ++ox, ++o) {
                std::size_t best = base + oy * stride * w + ox * stride;
                double best_v = src[best];
                for (std::size_t i = 0; i < window; ++i) {
                    for (std::size_t j = 0; j < window; ++j) {
                        const std::size_t idx = base + (oy * stride + i) * w + ox * stride + j;
                        // Strict comparison keeps the first (lowest index) maximum.
                        if (src[idx] > best_v) {
                            best_v = src[idx];
                            best = idx;
                        }
                    }
                }
                out[o] = best_v;
                argmax[o] = best;
            }
        }
    }
    ensure_finite(out, "maxpool2d");
    if (g.tracing_decisions()) {
        for (std::size_t idx : argmax) g.mix_decision(idx);
    }
    return g.record(std::move(out), {input}, [input, argmax = std::move(argmax)](const Tensor& dout) mutable {
        Tensor& gx = input.grad();
        for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += dout[i];
    });
}

Variable batchnorm2d(Graph& g, const Variable& input, const Variable& gamma, const Variable& beta,
                     BatchNormState& state, Mode mode) {
    require_rank(input, 4, "batchnorm2d", "input");
    const Shape& is = input.shape();
    const std::size_t n = is[0], c = is[1], hw = is[2] * is[3];
    const std::size_t count = n * hw;
    if (gamma.value().size() != c || beta.value().size() != c || state.running_mean.size() != c ||
        state.running_var.size() != c) {
        throw ShapeError("batchnorm2d: parameters do not match " + std::to_string(c) + " channels of input " +
                         shape_string(is));
    }
    if (mode == Mode::train && count < 2) {
        throw ShapeError("batchnorm2d: train mode needs at least 2 values per channel, input " + shape_string(is));
    }

    Tensor out = Tensor::like(input.value());
    Tensor xhat = Tensor::like(input.value());
    std::vector<double> inv_std(c);
    const double* x = input.value().raw();
    for (std::size_t ch = 0; ch < c; ++ch) {
        double mean = 0.0;
        double var = 0.0;
        if (mode == Mode::train) {
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) mean += p[i];
            }
            mean /= static_cast<double>(count);
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = x + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) var += (p[i] - mean) * (p[i] - mean);
            }
            var /= static_cast<double>(count);
            // Running variance tracks the unbiased estimate.
            const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
            state.running_mean[ch] = (1.0 - kBatchNormMomentum) * state.running_mean[ch] + kBatchNormMomentum * mean;
            state.running_var[ch] = (1.0 - kBatchNormMomentum) * state.running_var[ch] + kBatchNormMomentum * unbiased;
        } else {
            mean = state.running_mean[ch];
            var = state.running_var[ch];
        }
        inv_std[ch] = 1.0 / std::sqrt(var + kBatchNormEps);
        const double gm = gamma.value()[ch], bt = beta.value()[ch];
        for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double xh = (x[off + i] - mean) * inv_std[ch];
                xhat[off + i] = xh;
                out[off + i] = gm * xh + bt;
            }
        }
    }
    ensure_finite(out, "batchnorm2d");

    return g.record(std::move(out), {input, gamma, beta},
                    [input, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), mode, n, c,
                     hw](const Tensor& dout) mutable {
                        const double m = static_cast<double>(n * hw);
                        for (std::size_t ch = 0; ch < c; ++ch) {
                            double sum_dy = 0.0, sum_dy_xhat = 0.0;
                            for (std::size_t b = 0; b < n; ++b) {
                                const std::size_t off = (b * c + ch) * hw;
                                for (std::size_t i = 0; i < hw; ++i) {
                                    sum_dy += dout[off + i];
                                    sum_dy_xhat += dout[off + i] * xhat[off + i];
                                }
                            }
                            if (gamma.requires_grad()) gamma.grad()[ch] += sum_dy_xhat;
                            if (beta.requires_grad()) beta.grad()[ch] += sum_dy;
                            if (!input.requires_grad()) continue;
                            const double gm = gamma.value()[ch];
                            double* dx = input.grad().raw();
                            for (std::size_t b = 0; b < n; ++b) {
                                const std::size_t off = (b * c + ch) * hw;
                                for (std::size_t i = 0; i < hw; ++i) {
                                    if (mode == Mode::train) {
                                        // dxhat = dy * gamma; batch statistics depend on x.
                                        dx[off + i] += gm * inv_std[ch] / m *
                                                       (m * dout[off + i] - sum_dy - xhat[off + i] * sum_dy_xhat);
                                    } else {
                                        dx[off + i] += gm * inv_std[ch] * dout[off + i];
                                    }
                                }
                            }
                        }
                    });
}

Variable global_avg_pool(Graph& g, const Variable& input) {
    require_rank(input, 4, "global_avg_pool", "input");
    const Shape& is = input.shape();
    const std::size_t n = is[0], c = is[1], hw = is[2] * is[3];
    Tensor out({n, c});
    const double* x = input.value().raw();
    for (std::size_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += x[p * hw + i];
        out[p] = s / static_cast<double>(hw);
    }
    ensure_finite(out, "global_avg_pool");
    return g.record(std::move(out), {input}, [input, n, c, hw](const Tensor& dout) mutable {
        double* dx = input.grad().raw();
        for (std::size_t p = 0; p < n * c; ++p) {
            const double d = dout[p] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) dx[p * hw + i] += d;
        }
    });
}

Variable flatten(Graph& g, const Variable& input) {
    const Shape& is = input.shape();
    const std::size_t n = is[0];
    Tensor out = input.value().reshaped({n, input.value().size() / n});
    return g.record(std::move(out), {input}, [input](const Tensor& dout) mutable {
        double* dx = input.grad().raw();
        for (std::size_t i = 0; i < dout.size(); ++i) dx[i] += dout[i];
    });
}

Variable softmax_cross_entropy(Graph& g, const Variable& logits, std::span<const int> labels) {
    require_rank(logits, 2, "softmax_cross_entropy", "logits");
    const std::size_t n = logits.shape()[0], classes = logits.shape()[1];
    if (labels.size() != n) {
        throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_string(logits.shape()));
    }
    std::vector<int> targets(labels.begin(), labels.end());
    Tensor probs = Tensor::like(logits.value());
    double total = 0.0;
    const double* z = logits.value().raw();
    for (std::size_t r = 0; r < n; ++r) {
        const int label = targets[r];
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw ValueError("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                             std::to_string(classes) + ")");
        }
        const double* row = z + r * classes;
        const double mx = *std::max_element(row, row + classes);
        double denom = 0.0;
        for (std::size_t k = 0; k < classes; ++k) denom += std::exp(row[k] - mx);
        const double log_denom = std::log(denom);
        for (std::size_t k = 0; k < classes; ++k) probs[r * classes + k] = std::exp(row[k] - mx - log_denom);
        total += log_denom - (row[label] - mx);
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(n));
    ensure_finite(out, "softmax_cross_entropy");
    return g.record(std::move(out), {logits},
                    [logits, probs = std::move(probs), targets = std::move(targets), n, classes](const Tensor& dout) mutable {
                        Tensor& gz = logits.grad();
                        const double scale = dout[0] / static_cast<double>(n);
                        for (std::size_t r = 0; r < n; ++r) {
                            for (std::size_t k = 0; k < classes; ++k) {
                                double d = probs[r * classes + k];
                                if (static_cast<int>(k) == targets[r]) d -= 1.0;
                                gz[r * classes + k] += scale * d;
                            }
                        }
                    });
}

}  // namespace gradbench
