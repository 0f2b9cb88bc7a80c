// Compares the blocked OpenMP kernels with the direct-loop reference on the
// layer shapes of the default network, plus one full training step.
//
//   twuq_bench [batch]

#include "twuq/nn/kernels.hpp"
#include "twuq/nn/train.hpp"

#include <omp.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <vector>

using namespace twuq::nn;
using Clock = std::chrono::steady_clock;

namespace {

template <class F>
double seconds(F&& f, int reps) {
    f();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) f();
    return std::chrono::duration<double>(Clock::now() - t0).count() / reps;
}

std::vector<float> random_vec(std::size_t n, std::mt19937& rng) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

void bench_conv(const kernels::ConvShape& s, std::mt19937& rng) {
    auto x = random_vec(s.in_ch * s.cols(), rng);
    auto w = random_vec(s.out_ch * s.patch(), rng);
    auto b = random_vec(s.out_ch, rng);
    auto dy = random_vec(s.out_ch * s.cols(), rng);
    std::vector<float> y(s.out_ch * s.cols()), col(s.patch() * s.cols()), scratch(col.size());
    std::vector<float> dx(x.size()), dw(w.size()), db(b.size());
    const double flops = 2.0 * static_cast<double>(s.out_ch * s.patch() * s.cols());

    const double t_fwd = seconds([&] { kernels::conv2d_forward<float>(s, x, w, b, y, col); }, 5);
    const double t_bwd = seconds([&] { kernels::conv2d_backward<float>(s, col, w, dy, dx, dw, db, scratch); }, 5);
    const double t_ref_fwd = seconds([&] { kernels::reference::conv2d_forward<float>(s, x, w, b, y); }, 1);
    const double t_ref_bwd = seconds([&] { kernels::reference::conv2d_backward<float>(s, x, w, dy, dx, dw, db); }, 1);
    std::printf("conv %3zu->%3zu %2zux%-2zu N=%zu | fwd %8.3f ms (%6.1f GF/s) ref %8.3f ms x%5.1f | "
                "bwd %8.3f ms (%6.1f GF/s) ref %8.3f ms x%5.1f\n",
                s.in_ch, s.out_ch, s.height, s.width, s.batch, t_fwd * 1e3, flops / t_fwd * 1e-9, t_ref_fwd * 1e3,
                t_ref_fwd / t_fwd, t_bwd * 1e3, 2 * flops / t_bwd * 1e-9, t_ref_bwd * 1e3, t_ref_bwd / t_bwd);
}

}  // namespace

int main(int argc, char** argv) {
    const std::size_t batch = argc > 1 ? std::strtoul(argv[1], nullptr, 10) : 32;
    std::printf("threads: %d, batch %zu\n", omp_get_max_threads(), batch);
    std::mt19937 rng(1);
    bench_conv({4, 16, batch, 16, 16, 3}, rng);
    bench_conv({16, 16, batch, 16, 16, 3}, rng);
    bench_conv({32, 32, batch, 8, 8, 3}, rng);
    bench_conv({64, 64, batch, 4, 4, 3}, rng);
    bench_conv({32, 16, batch, 16, 16, 3}, rng);

    UNetConfig cfg;
    TrainingSet<float> set;
    set.count = batch;
    set.size = cfg.image_size;
    const std::size_t pix = cfg.image_size * cfg.image_size;
    set.inputs = random_vec(batch * 4 * pix, rng);
    set.targets = random_vec(batch * pix, rng);
    set.masks.assign(batch * pix, 1.0f);
    TrainConfig tcfg;
    tcfg.epochs = 1;
    tcfg.batch_size = batch;
    const double t_step = seconds([&] { train_network(set, cfg, tcfg, 7); }, 3);
    std::printf("unet training step (batch %zu): %.2f ms -> %.0f samples/s\n", batch, t_step * 1e3,
                static_cast<double>(batch) / t_step);
    return 0;
}
