#pragma once

#include "twuq/grid.hpp"
#include "twuq/optics.hpp"
#include "twuq/zernike.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace twuq::dataset {

// Random difference topographies: c_j ~ N(0, sigma_j^2), sigma_j proportional
// to (n_j + 1)^-decay for j >= 1 (piston is never drawn), normalised so the
// expected field rms is 1, then scaled by an amplitude drawn log-uniformly
// from [amp_min, amp_max]. The amplitude is therefore the expected rms [m].
struct GenerationConfig {
    std::size_t n_terms = 36;
    double decay = 1.5;
    double amp_min = 15e-9;
    double amp_max = 12e-6;

    void validate() const;
};

struct TopographyDraw {
    zernike::ZernikeCoeffs coeffs;
    Topography topography;
    double amplitude = 0.0;
};

TopographyDraw sample_topography(std::uint64_t seed, const DiscGrid& grid, const GenerationConfig& cfg);

// The simulated optical system shared by every sample of a dataset.
struct SystemModel {
    DiscGrid grid{16};
    optics::ChannelSet channels = optics::default_channels();
    optics::ReferencePlaneModel reference;  // alpha is overridden per dataset
    optics::ForwardParams forward;
};

struct SampleMeta {
    std::uint64_t id = 0;
    double amplitude = 0.0;
    std::uint64_t coeff_seed = 0;

    bool operator==(const SampleMeta&) const = default;
};

struct Sample {
    optics::OpldStack input;
    Topography target;
    SampleMeta meta;

    bool operator==(const Sample&) const = default;
};

struct Provenance {
    std::uint64_t generator_seed = 0;
    double alpha = 0.0;
    double sigma = 0.0;
    std::uint64_t config_hash = 0;

    bool operator==(const Provenance&) const = default;
};

struct Dataset {
    std::size_t size = 0;  // D
    std::vector<Sample> samples;
    Provenance provenance;

    bool operator==(const Dataset&) const = default;
};

struct BuildRequest {
    std::size_t count = 1;
    std::uint64_t base_seed = 0;
    double alpha = 0.0;
    double sigma = 0.0;
    std::uint64_t config_hash = 0;
};

// Sample i uses seed base_seed + i for its topography and noise. Inputs are
// forward-modelled at request.alpha, then noised at request.sigma; targets
// are the clean topographies. Values are rounded to float precision so the
// stored file reproduces them exactly.
Dataset build_dataset(const BuildRequest& request, const SystemModel& system, const GenerationConfig& gen);

// Seed of the noise stream for one sample.
std::uint64_t noise_seed(std::uint64_t sample_seed);

// Little-endian "TWUQ" container; see docs/formats.md.
inline constexpr std::uint32_t kFormatVersion = 1;

void save_dataset(const Dataset& ds, const std::filesystem::path& path);
// Throws FormatError (Header / Version / Payload) on malformed files and
// IoError when the file cannot be opened.
Dataset load_dataset(const std::filesystem::path& path);

// Aggregate statistics of the target topographies.
struct TopographyStats {
    double median_rms = 0.0;
    double mean_rms = 0.0;
    double min_pv = 0.0;
    double max_pv = 0.0;
};

double rms_deviation(const Topography& t);
double peak_to_valley(const Topography& t);
TopographyStats topography_stats(const Dataset& ds);

// Pooled rms of (a.input - b.input) over valid entries of paired samples.
double input_rmsd(const Dataset& a, const Dataset& b);

}  // namespace twuq::dataset
