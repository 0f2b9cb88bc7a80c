#include "twuq/nn/kernels.hpp"

#include <algorithm>
#include <vector>

namespace twuq::nn::kernels {

namespace {

constexpr std::size_t kRowBlock = 4;
constexpr std::size_t kColBlock = 64;
constexpr std::size_t kLanes = 16;

template <class T>
void gemm_nn_tile(std::size_t rows, std::size_t cols, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    T acc[kRowBlock][kColBlock] = {};
    if (rows == kRowBlock && cols == kColBlock) {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * n;
            const T a0 = a[kk], a1 = a[k + kk], a2 = a[2 * k + kk], a3 = a[3 * k + kk];
#pragma omp simd
            for (std::size_t j = 0; j < kColBlock; ++j) {
                const T bv = brow[j];
                acc[0][j] += a0 * bv;
                acc[1][j] += a1 * bv;
                acc[2][j] += a2 * bv;
                acc[3][j] += a3 * bv;
            }
        }
    } else {
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T* brow = b + kk * n;
            for (std::size_t r = 0; r < rows; ++r) {
                const T av = a[r * k + kk];
#pragma omp simd
                for (std::size_t j = 0; j < cols; ++j) acc[r][j] += av * brow[j];
            }
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        T* crow = c + r * n;
        for (std::size_t j = 0; j < cols; ++j) crow[j] += acc[r][j];
    }
}

template <class T>
void gemm_nt_tile(std::size_t rows, std::size_t cols, std::size_t k, const T* a, const T* b, T* c,
                  std::size_t ldc) {
    // Lane-split partial sums, reduced in a fixed order at the end.
    T acc[kRowBlock][kRowBlock][kLanes] = {};
    const std::size_t full = k - k % kLanes;
    if (rows == kRowBlock && cols == kRowBlock) {
        for (std::size_t kk = 0; kk < full; kk += kLanes) {
            for (std::size_t r = 0; r < kRowBlock; ++r) {
                const T* arow = a + r * k + kk;
                for (std::size_t q = 0; q < kRowBlock; ++q) {
                    const T* brow = b + q * k + kk;
#pragma omp simd
                    for (std::size_t t = 0; t < kLanes; ++t) acc[r][q][t] += arow[t] * brow[t];
                }
            }
        }
    } else {
        for (std::size_t kk = 0; kk < full; kk += kLanes) {
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t q = 0; q < cols; ++q) {
#pragma omp simd
                    for (std::size_t t = 0; t < kLanes; ++t) acc[r][q][t] += a[r * k + kk + t] * b[q * k + kk + t];
                }
            }
        }
    }
    for (std::size_t kk = full; kk < k; ++kk) {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t q = 0; q < cols; ++q) acc[r][q][kk - full] += a[r * k + kk] * b[q * k + kk];
        }
    }
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t q = 0; q < cols; ++q) {
            T s = 0;
            for (std::size_t t = 0; t < kLanes; ++t) s += acc[r][q][t];
            c[r * ldc + q] += s;
        }
    }
}

}  // namespace

template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    const auto row_blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
    const auto col_blocks = static_cast<std::ptrdiff_t>((n + kColBlock - 1) / kColBlock);
    // Column strip outermost so one k x 64 slice of B stays cached across all row blocks.
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t cb = 0; cb < col_blocks; ++cb) {
        for (std::ptrdiff_t rb = 0; rb < row_blocks; ++rb) {
            const std::size_t i0 = static_cast<std::size_t>(rb) * kRowBlock;
            const std::size_t j0 = static_cast<std::size_t>(cb) * kColBlock;
            gemm_nn_tile(std::min(kRowBlock, m - i0), std::min(kColBlock, n - j0), n, k, a + i0 * k, b + j0,
                         c + i0 * n + j0);
        }
    }
}

template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
    const auto row_blocks = static_cast<std::ptrdiff_t>((m + kRowBlock - 1) / kRowBlock);
    const auto col_blocks = static_cast<std::ptrdiff_t>((n + kRowBlock - 1) / kRowBlock);
#pragma omp parallel for collapse(2) schedule(static)
    for (std::ptrdiff_t rb = 0; rb < row_blocks; ++rb) {
        for (std::ptrdiff_t cb = 0; cb < col_blocks; ++cb) {
            const std::size_t i0 = static_cast<std::size_t>(rb) * kRowBlock;
            const std::size_t j0 = static_cast<std::size_t>(cb) * kRowBlock;
            gemm_nt_tile(std::min(kRowBlock, m - i0), std::min(kRowBlock, n - j0), k, a + i0 * k, b + j0 * k,
                         c + i0 * n + j0, n);
        }
    }
}

template <class T>
void im2col(const ConvShape& s, std::span<const T> x, std::span<T> col) {
    const std::size_t k = s.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto h = static_cast<std::ptrdiff_t>(s.height);
    const auto w = static_cast<std::ptrdiff_t>(s.width);
    const auto rows = static_cast<std::ptrdiff_t>(s.patch());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t row = 0; row < rows; ++row) {
        const std::size_t ci = static_cast<std::size_t>(row) / (k * k);
        const auto ky = static_cast<std::ptrdiff_t>((static_cast<std::size_t>(row) / k) % k) - pad;
        const auto kx = static_cast<std::ptrdiff_t>(static_cast<std::size_t>(row) % k) - pad;
        T* dst = col.data() + static_cast<std::size_t>(row) * s.cols();
        for (std::size_t n = 0; n < s.batch; ++n) {
            const T* src = x.data() + (ci * s.batch + n) * s.plane();
            for (std::ptrdiff_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = y + ky;
                T* out = dst + n * s.plane() + static_cast<std::size_t>(y * w);
                if (sy < 0 || sy >= h) {
                    std::fill(out, out + w, T(0));
                    continue;
                }
                const std::ptrdiff_t lo = std::max<std::ptrdiff_t>(0, -kx);
                const std::ptrdiff_t hi = std::min<std::ptrdiff_t>(w, w - kx);
                std::fill(out, out + lo, T(0));
                std::copy(src + sy * w + lo + kx, src + sy * w + hi + kx, out + lo);
                std::fill(out + hi, out + w, T(0));
            }
        }
    }
}

template <class T>
void col2im(const ConvShape& s, std::span<const T> dcol, std::span<T> dx) {
    const std::size_t k = s.kernel;
    const auto pad = static_cast<std::ptrdiff_t>(k / 2);
    const auto h = static_cast<std::ptrdiff_t>(s.height);
    const auto w = static_cast<std::ptrdiff_t>(s.width);
    const auto channels = static_cast<std::ptrdiff_t>(s.in_ch);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t ci = 0; ci < channels; ++ci) {
        T* plane0 = dx.data() + static_cast<std::size_t>(ci) * s.cols();
        std::fill(plane0, plane0 + s.cols(), T(0));
        for (std::size_t tap = 0; tap < k * k; ++tap) {
            const auto ky = static_cast<std::ptrdiff_t>(tap / k) - pad;
            const auto kx = static_cast<std::ptrdiff_t>(tap % k) - pad;
            const T* src = dcol.data() + (static_cast<std::size_t>(ci) * k * k + tap) * s.cols();
            for (std::size_t n = 0; n < s.batch; ++n) {
                T* dst = plane0 + n * s.plane();
                const T* in = src + n * s.plane();
                for (std::ptrdiff_t y = 0; y < h; ++y) {
                    const std::ptrdiff_t sy = y + ky;
                    if (sy < 0 || sy >= h) continue;
                    for (std::ptrdiff_t xx = 0; xx < w; ++xx) {
                        const std::ptrdiff_t sx = xx + kx;
                        if (sx >= 0 && sx < w) dst[sy * w + sx] += in[y * w + xx];
                    }
                }
            }
        }
    }
}

template <class T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y, std::span<T> col) {
    im2col<T>(s, x, col);
    const std::size_t q = s.cols();
    for (std::size_t co = 0; co < s.out_ch; ++co) std::fill(y.begin() + co * q, y.begin() + (co + 1) * q, b[co]);
    gemm_nn<T>(s.out_ch, q, s.patch(), w.data(), col.data(), y.data());
}

template <class T>
void conv2d_backward(const ConvShape& s, std::span<const T> col, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db, std::span<T> scratch) {
    const std::size_t q = s.cols();
    const std::size_t patch = s.patch();
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        T acc = 0;
        for (std::size_t i = 0; i < q; ++i) acc += dy[co * q + i];
        db[co] += acc;
    }
    gemm_nt<T>(s.out_ch, patch, q, dy.data(), col.data(), dw.data());
    if (dx.empty()) return;
    std::vector<T> wt(patch * s.out_ch);
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        for (std::size_t p = 0; p < patch; ++p) wt[p * s.out_ch + co] = w[co * patch + p];
    }
    std::fill(scratch.begin(), scratch.begin() + patch * q, T(0));
    gemm_nn<T>(patch, q, s.out_ch, wt.data(), dy.data(), scratch.data());
    col2im<T>(s, scratch.first(patch * q), dx);
}

template <class T>
void upconv2x2_forward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                       std::span<T> y) {
    const std::size_t q = s.batch * s.height * s.width;
    const std::size_t ow = 2 * s.width;
    std::vector<T> tap_w(s.out_ch * s.in_ch);
    std::vector<T> z(s.out_ch * q);
    for (std::size_t tap = 0; tap < 4; ++tap) {
        const std::size_t a = tap / 2, bb = tap % 2;
        for (std::size_t co = 0; co < s.out_ch; ++co) {
            for (std::size_t ci = 0; ci < s.in_ch; ++ci) tap_w[co * s.in_ch + ci] = w[(ci * s.out_ch + co) * 4 + tap];
        }
        for (std::size_t co = 0; co < s.out_ch; ++co) std::fill(z.begin() + co * q, z.begin() + (co + 1) * q, b[co]);
        gemm_nn<T>(s.out_ch, q, s.in_ch, tap_w.data(), x.data(), z.data());
        for (std::size_t co = 0; co < s.out_ch; ++co) {
            for (std::size_t n = 0; n < s.batch; ++n) {
                for (std::size_t i = 0; i < s.height; ++i) {
                    for (std::size_t j = 0; j < s.width; ++j) {
                        y[((co * s.batch + n) * 2 * s.height + 2 * i + a) * ow + 2 * j + bb] =
                            z[co * q + (n * s.height + i) * s.width + j];
                    }
                }
            }
        }
    }
}

template <class T>
void upconv2x2_backward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                        std::span<T> dx, std::span<T> dw, std::span<T> db) {
    const std::size_t q = s.batch * s.height * s.width;
    const std::size_t ow = 2 * s.width;
    const std::size_t out_q = 4 * q;
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        T acc = 0;
        for (std::size_t i = 0; i < out_q; ++i) acc += dy[co * out_q + i];
        db[co] += acc;
    }
    std::fill(dx.begin(), dx.end(), T(0));
    std::vector<T> g(s.out_ch * q);
    std::vector<T> gw(s.in_ch * s.out_ch);
    std::vector<T> tap_w(s.in_ch * s.out_ch);
    for (std::size_t tap = 0; tap < 4; ++tap) {
        const std::size_t a = tap / 2, bb = tap % 2;
        for (std::size_t co = 0; co < s.out_ch; ++co) {
            for (std::size_t n = 0; n < s.batch; ++n) {
                for (std::size_t i = 0; i < s.height; ++i) {
                    for (std::size_t j = 0; j < s.width; ++j) {
                        g[co * q + (n * s.height + i) * s.width + j] =
                            dy[((co * s.batch + n) * 2 * s.height + 2 * i + a) * ow + 2 * j + bb];
                    }
                }
            }
        }
        std::fill(gw.begin(), gw.end(), T(0));
        gemm_nt<T>(s.in_ch, s.out_ch, q, x.data(), g.data(), gw.data());
        for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
            for (std::size_t co = 0; co < s.out_ch; ++co) {
                dw[(ci * s.out_ch + co) * 4 + tap] += gw[ci * s.out_ch + co];
                tap_w[ci * s.out_ch + co] = w[(ci * s.out_ch + co) * 4 + tap];
            }
        }
        gemm_nn<T>(s.in_ch, q, s.out_ch, tap_w.data(), g.data(), dx.data());
    }
}

namespace reference {

template <class T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y) {
    const auto k = static_cast<std::ptrdiff_t>(s.kernel);
    const auto pad = k / 2;
    const auto h = static_cast<std::ptrdiff_t>(s.height);
    const auto wd = static_cast<std::ptrdiff_t>(s.width);
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::ptrdiff_t i = 0; i < h; ++i) {
                for (std::ptrdiff_t j = 0; j < wd; ++j) {
                    T acc = b[co];
                    for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
                            for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t si = i + ky - pad, sj = j + kx - pad;
                                if (si < 0 || sj < 0 || si >= h || sj >= wd) continue;
                                acc += w[((co * s.in_ch + ci) * s.kernel + ky) * s.kernel + kx] *
                                       x[(ci * s.batch + n) * s.plane() + si * wd + sj];
                            }
                        }
                    }
                    y[(co * s.batch + n) * s.plane() + i * wd + j] = acc;
                }
            }
        }
    }
}

template <class T>
void conv2d_backward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db) {
    const auto k = static_cast<std::ptrdiff_t>(s.kernel);
    const auto pad = k / 2;
    const auto h = static_cast<std::ptrdiff_t>(s.height);
    const auto wd = static_cast<std::ptrdiff_t>(s.width);
    if (!dx.empty()) std::fill(dx.begin(), dx.end(), T(0));
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::ptrdiff_t i = 0; i < h; ++i) {
                for (std::ptrdiff_t j = 0; j < wd; ++j) {
                    const T g = dy[(co * s.batch + n) * s.plane() + i * wd + j];
                    db[co] += g;
                    for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                        for (std::ptrdiff_t ky = 0; ky < k; ++ky) {
                            for (std::ptrdiff_t kx = 0; kx < k; ++kx) {
                                const std::ptrdiff_t si = i + ky - pad, sj = j + kx - pad;
                                if (si < 0 || sj < 0 || si >= h || sj >= wd) continue;
                                const std::size_t wi = ((co * s.in_ch + ci) * s.kernel + ky) * s.kernel + kx;
                                const std::size_t xi = (ci * s.batch + n) * s.plane() + si * wd + sj;
                                dw[wi] += g * x[xi];
                                if (!dx.empty()) dx[xi] += g * w[wi];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <class T>
void upconv2x2_forward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                       std::span<T> y) {
    const std::size_t oh = 2 * s.height, ow = 2 * s.width;
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::size_t oi = 0; oi < oh; ++oi) {
                for (std::size_t oj = 0; oj < ow; ++oj) {
                    T acc = b[co];
                    for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                        acc += x[((ci * s.batch + n) * s.height + oi / 2) * s.width + oj / 2] *
                               w[(ci * s.out_ch + co) * 4 + (oi % 2) * 2 + oj % 2];
                    }
                    y[((co * s.batch + n) * oh + oi) * ow + oj] = acc;
                }
            }
        }
    }
}

template <class T>
void upconv2x2_backward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                        std::span<T> dx, std::span<T> dw, std::span<T> db) {
    const std::size_t oh = 2 * s.height, ow = 2 * s.width;
    std::fill(dx.begin(), dx.end(), T(0));
    for (std::size_t co = 0; co < s.out_ch; ++co) {
        for (std::size_t n = 0; n < s.batch; ++n) {
            for (std::size_t oi = 0; oi < oh; ++oi) {
                for (std::size_t oj = 0; oj < ow; ++oj) {
                    const T g = dy[((co * s.batch + n) * oh + oi) * ow + oj];
                    db[co] += g;
                    for (std::size_t ci = 0; ci < s.in_ch; ++ci) {
                        const std::size_t xi = ((ci * s.batch + n) * s.height + oi / 2) * s.width + oj / 2;
                        const std::size_t wi = (ci * s.out_ch + co) * 4 + (oi % 2) * 2 + oj % 2;
                        dw[wi] += g * x[xi];
                        dx[xi] += g * w[wi];
                    }
                }
            }
        }
    }
}

}  // namespace reference

#define TWUQ_INSTANTIATE_KERNELS(T)                                                                               \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);                     \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, const T*, T*);                     \
    template void im2col<T>(const ConvShape&, std::span<const T>, std::span<T>);                                 \
    template void col2im<T>(const ConvShape&, std::span<const T>, std::span<T>);                                 \
    template void conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>, std::span<const T>, \
                                    std::span<T>, std::span<T>);                                                 \
    template void conv2d_backward<T>(const ConvShape&, std::span<const T>, std::span<const T>,                   \
                                     std::span<const T>, std::span<T>, std::span<T>, std::span<T>, std::span<T>); \
    template void upconv2x2_forward<T>(const UpShape&, std::span<const T>, std::span<const T>,                   \
                                       std::span<const T>, std::span<T>);                                        \
    template void upconv2x2_backward<T>(const UpShape&, std::span<const T>, std::span<const T>,                  \
                                        std::span<const T>, std::span<T>, std::span<T>, std::span<T>);           \
    template void reference::conv2d_forward<T>(const ConvShape&, std::span<const T>, std::span<const T>,         \
                                               std::span<const T>, std::span<T>);                                \
    template void reference::conv2d_backward<T>(const ConvShape&, std::span<const T>, std::span<const T>,        \
                                                std::span<const T>, std::span<T>, std::span<T>, std::span<T>);   \
    template void reference::upconv2x2_forward<T>(const UpShape&, std::span<const T>, std::span<const T>,        \
                                                  std::span<const T>, std::span<T>);                             \
    template void reference::upconv2x2_backward<T>(const UpShape&, std::span<const T>, std::span<const T>,       \
                                                   std::span<const T>, std::span<T>, std::span<T>, std::span<T>);

TWUQ_INSTANTIATE_KERNELS(float)
TWUQ_INSTANTIATE_KERNELS(double)

}  // namespace twuq::nn::kernels
