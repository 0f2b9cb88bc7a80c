#pragma once

#include <cstddef>
#include <span>

// Compute kernels behind the layers. The un-namespaced versions are the
// production kernels: im2col + register-blocked GEMM, OpenMP-parallel over
// independent output rows, with a fixed per-element accumulation order so
// results do not depend on the thread count. kernels::reference holds
// direct-loop versions kept as the test oracle and benchmark baseline.
//
// All activations are C x N x H x W.
namespace twuq::nn::kernels {

// Stride-1, zero-padded ("same") convolution with an odd square kernel.
struct ConvShape {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t batch = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t kernel = 3;

    std::size_t plane() const noexcept { return height * width; }
    std::size_t cols() const noexcept { return batch * height * width; }
    std::size_t patch() const noexcept { return in_ch * kernel * kernel; }  // GEMM inner dimension
};

// 2x2 kernel, stride 2; output is (2H) x (2W).
struct UpShape {
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t batch = 0;
    std::size_t height = 0;  // input size
    std::size_t width = 0;
};

// C[M x N] += A[M x K] * B[K x N]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

// C[M x N] += A[M x K] * B[N x K]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c);

template <class T>
void im2col(const ConvShape& s, std::span<const T> x, std::span<T> col);

// dx = col2im(dcol); dx is overwritten.
template <class T>
void col2im(const ConvShape& s, std::span<const T> dcol, std::span<T> dx);

// y = conv(x, w) + b. col receives the im2col matrix (patch x cols) for
// reuse by the backward pass.
template <class T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y, std::span<T> col);

// Accumulates dw and db; overwrites dx when it is non-empty. col is the
// matrix produced by conv2d_forward; scratch must hold patch() * cols().
template <class T>
void conv2d_backward(const ConvShape& s, std::span<const T> col, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db, std::span<T> scratch);

template <class T>
void upconv2x2_forward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                       std::span<T> y);

// Accumulates dw and db; overwrites dx.
template <class T>
void upconv2x2_backward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                        std::span<T> dx, std::span<T> dw, std::span<T> db);

namespace reference {

template <class T>
void conv2d_forward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                    std::span<T> y);

template <class T>
void conv2d_backward(const ConvShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                     std::span<T> dx, std::span<T> dw, std::span<T> db);

template <class T>
void upconv2x2_forward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> b,
                       std::span<T> y);

template <class T>
void upconv2x2_backward(const UpShape& s, std::span<const T> x, std::span<const T> w, std::span<const T> dy,
                        std::span<T> dx, std::span<T> dw, std::span<T> db);

}  // namespace reference

}  // namespace twuq::nn::kernels
