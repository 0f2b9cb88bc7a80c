#pragma once

#include "twuq/dataset.hpp"
#include "twuq/nn/train.hpp"
#include "twuq/nn/unet.hpp"
#include "twuq/optics.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace twuq {

struct ReferenceConfig {
    std::size_t terms = 6;           // I = J = K = H
    std::uint64_t seed = 7;
    double target_rmsd = 219e-9;     // alpha = 1 perturbation rms [m]
    std::size_t probe_count = 16;
    std::uint64_t probe_seed = 900000;
};

struct DataConfig {
    std::size_t n_train = 4000;
    std::size_t n_test = 500;
    std::uint64_t train_seed = 1;
    std::uint64_t test_seed = 1000000;
};

struct EnsembleConfig {
    std::size_t members = 4;
    std::uint64_t member_seed = 100;  // member i uses member_seed + i
};

struct SweepConfig {
    std::vector<double> alphas;  // defaults to 0, 0.1, ..., 1
    std::vector<double> sigmas{0.0, 10e-9, 50e-9};
    double z = 1.96;
    std::size_t eval_batch = 64;

    SweepConfig();
};

struct ExperimentConfig {
    std::size_t grid_size = 16;
    dataset::GenerationConfig generation;
    optics::ChannelSet channels = optics::default_channels();
    optics::ForwardParams forward;
    ReferenceConfig reference;
    nn::UNetConfig network;  // image_size mirrors grid_size
    nn::TrainConfig training;
    EnsembleConfig ensemble;
    DataConfig data;
    SweepConfig sweep;
    std::string output_dir = "runs";

    // Throws ConfigError on any inconsistency.
    void validate() const;
    // key = value listing, in a fixed order, of every setting that
    // determines datasets and trained members. [sweep] and [output] are
    // excluded.
    std::string canonical() const;
    // FNV-1a of canonical().
    std::uint64_t hash() const;
};

// TOML-style subset: [section] headers, key = value with numbers, quoted
// strings and single-line arrays, '#' comments. Unknown
// sections or keys, duplicates and type mismatches are ConfigErrors.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
// Full config in the same syntax, parseable by parse_config.
std::string to_toml(const ExperimentConfig& cfg);

// Builds the simulated system: random reference planes scaled so that the
// alpha = 1 perturbation matches reference.target_rmsd over the probe set.
dataset::SystemModel make_system(const ExperimentConfig& cfg);

}  // namespace twuq
