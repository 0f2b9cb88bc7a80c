#pragma once

#include "twuq/dataset.hpp"
#include "twuq/nn/unet.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace twuq::nn {

// Networks see lengths in micrometres; datasets store metres.
inline constexpr double kLengthUnit = 1e-6;

struct TrainConfig {
    int epochs = 10;
    std::size_t batch_size = 32;
    double initial_lr = 5e-5;
    double lr_drop_factor = 0.75;
    int lr_drop_period = 4;
    double l2_lambda = 0.002;
    std::uint64_t shuffle_seed = 2021;

    void validate() const;
    // initial_lr * lr_drop_factor^floor(epoch / lr_drop_period)
    double learning_rate(int epoch) const;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct EpochRecord {
    int epoch = 0;
    double learning_rate = 0.0;
    double data_loss = 0.0;     // sample-weighted mean masked MSE [um^2]
    double l2_penalty = 0.0;    // l2_lambda * ||kernels||^2 after the epoch
};

template <class T>
struct TrainResult {
    NetworkWeights<T> weights;
    std::vector<EpochRecord> history;
};

// Sample-major packed copy of a dataset in network units.
template <class T>
struct TrainingSet {
    std::size_t count = 0;
    std::size_t size = 0;  // D
    std::vector<T> inputs;   // count x 4 x D x D
    std::vector<T> targets;  // count x D x D
    std::vector<T> masks;    // count x D x D, 1 inside the aperture

    static TrainingSet pack(const dataset::Dataset& ds);
};

// Gathers the listed samples into 4 x N x D x D inputs and 1 x N x D x D
// targets and masks.
template <class T>
void gather_batch(const TrainingSet<T>& set, std::span<const std::size_t> indices, Tensor<T>& input,
                  Tensor<T>& target, Tensor<T>& mask);

// Mini-batch Adam on the masked MSE plus l2_lambda * ||kernels||^2. Each
// epoch reshuffles with a stream keyed by (shuffle_seed, epoch,
// member_seed); dropout draws from a stream keyed by member_seed. Runs
// epochs * ceil(n / batch_size) steps. Throws TrainingError on a
// non-finite loss.
template <class T>
TrainResult<T> train_network(const TrainingSet<T>& set, const UNetConfig& ucfg, const TrainConfig& tcfg,
                             std::uint64_t member_seed,
                             const std::function<void(const EpochRecord&)>& on_epoch = {},
                             const AdamConfig& adam = {});

}  // namespace twuq::nn
