#pragma once

#include "twuq/nn/graph.hpp"
#include "twuq/nn/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

namespace twuq::nn {

// Encoder-decoder regressor: each encoder level is two 3x3 conv + ReLU
// followed by dropout and 2x2 max pooling; the bottleneck doubles the width
// once more; each decoder level upsamples with a 2x2 transposed convolution
// + ReLU, depth-concatenates the matching encoder output and applies two
// 3x3 conv + ReLU. A final 1x1 convolution maps to out_channels.
struct UNetConfig {
    std::size_t in_channels = 4;
    std::size_t out_channels = 1;
    std::size_t image_size = 16;  // D
    std::size_t levels = 2;
    std::size_t base_width = 16;
    double dropout_rate = 0.1;

    void validate() const;
    // Architecture identity; dropout does not change the weights' layout.
    std::string fingerprint() const;
};

template <class T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool decay = false;  // subject to L2 regularisation (kernels only)
};

template <class T>
struct NetworkWeights {
    std::string fingerprint;
    std::vector<Parameter<T>> params;

    std::size_t count() const;
    void zero_grad();
};

// He-uniform initialisation U(-sqrt(6/fan_in), sqrt(6/fan_in)) for kernels,
// zero biases, keyed by member_seed.
template <class T>
NetworkWeights<T> init_weights(const UNetConfig& cfg, std::uint64_t member_seed);

// All-zero weights with the right layout.
template <class T>
NetworkWeights<T> zero_weights(const UNetConfig& cfg);

template <class T>
NetworkWeights<T> convert(const NetworkWeights<float>& w);

// Builds the network on g. input is in_channels x N x D x D; returns the
// out_channels x N x D x D prediction. Parameter nodes are registered in
// the order of w.params with slot = index.
template <class T>
NodeId unet_graph(Graph<T>& g, const NetworkWeights<T>& w, const UNetConfig& cfg, NodeId input, Mode mode,
                  std::mt19937_64* rng);

// Convenience forward pass without gradient bookkeeping.
template <class T>
Tensor<T> unet_forward(const NetworkWeights<T>& w, const UNetConfig& cfg, const Tensor<T>& input,
                       Mode mode = Mode::Eval, std::mt19937_64* rng = nullptr);

// "TWNN" checkpoint (little-endian, float32 payload); see docs/formats.md.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_weights(const NetworkWeights<float>& w, std::uint64_t config_hash, const std::filesystem::path& path);

struct LoadedWeights {
    NetworkWeights<float> weights;
    std::uint64_t config_hash = 0;
};

// Throws FingerprintError when the file was written for a different
// architecture and FormatError for malformed files.
LoadedWeights load_weights(const std::filesystem::path& path, const UNetConfig& expected);

}  // namespace twuq::nn
