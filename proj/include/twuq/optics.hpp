#pragma once

#include "twuq/grid.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace twuq::optics {

inline constexpr std::size_t kChannels = 4;

// Rotationally symmetric asphere: conic base plus even polynomial terms
// A4 r^4 ... A16 r^16.
struct AsphereDesign {
    double radius = 0.0;  // paraxial radius R [m]
    double conic = 0.0;   // kappa
    std::array<double, 7> even_coeffs{};  // A4, A6, ..., A16

    // The asphere used as the design surface of the simulated specimens.
    static AsphereDesign reference_design();
};

double asphere_sag(const AsphereDesign& design, double r);

// How a channel's sub-aperture is restricted on the disc.
enum class SectorRule {
    FullDisc,
    // Pixels whose polar angle lies within +-120 deg of sector_center.
    Sector240,
};

struct ChannelConfig {
    int id = 1;  // 1..4
    double theta = 0.0;  // incidence tilt [rad], in [0, pi/3)
    double source_u = 0.0;  // normalised point-source coordinates
    double source_v = 0.0;
    double slope_dir_x = 1.0;  // direction of the slope coupling term
    double slope_dir_y = 0.0;
    SectorRule rule = SectorRule::FullDisc;
    double sector_center = 0.0;  // [rad]

    bool covers(double x, double y) const noexcept;
};

using ChannelSet = std::array<ChannelConfig, kChannels>;

// Channel 1 covers the full disc at normal incidence; channels 2-4 cover
// 240 deg sectors rotated by 90 deg each.
ChannelSet default_channels();
void validate(const ChannelSet& channels);

// Source-plane (Q) and pixel-plane (P) double-Zernike coefficients with the
// error fraction alpha that scales their contribution.
struct ReferencePlaneModel {
    Matrix source;  // Q, I x J [m]
    Matrix pixel;   // P, K x H [m]
    double alpha = 0.0;

    void validate() const;
};

// A 4 x D x D stack of optical path length differences [m].
// Index: (k * D + row) * D + col.
struct OpldStack {
    std::size_t size = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> valid;

    OpldStack() = default;
    explicit OpldStack(std::size_t d)
        : size(d), values(kChannels * d * d, 0.0), valid(kChannels * d * d, 0) {}

    std::size_t index(std::size_t k, std::size_t pixel) const noexcept { return k * size * size + pixel; }
    bool operator==(const OpldStack&) const = default;
};

// Sum_i (Sum_j M_ij Z_j(outer)) Z_i(local), zero-based Zernike indices.
double reference_plane_path(const Matrix& coeffs, double local_x, double local_y, double outer_x,
                            double outer_y);

struct ForwardParams {
    double slope_coupling = 0.5;  // beta
};

// Partial derivatives of the topography with respect to normalised pupil
// coordinates: central differences where both neighbours are in the
// aperture, one-sided otherwise, zero for isolated pixels.
void topography_gradient(const Topography& topo, const DiscGrid& grid, std::vector<double>& dx,
                         std::vector<double>& dy);

// Synthetic four-channel forward map. For every valid (k, p):
//   2 cos(theta_k) T + beta (a_k dT/dx + b_k dT/dy) T
//   + alpha [L_R1(x, y, U_k, V_k) + L_R2(x, y, x, y)]
OpldStack forward_model(const Topography& topo, const ChannelSet& channels, const ReferencePlaneModel& ref,
                        const DiscGrid& grid, const ForwardParams& params = {});

// Copy of ref with alpha = fraction.
ReferencePlaneModel set_calibration_error(const ReferencePlaneModel& ref, double fraction);

// Root-mean-square of the alpha = 1 perturbation (forward(1) - forward(0))
// over the valid entries produced for the probe topographies.
double perturbation_rmsd(const ReferencePlaneModel& ref, std::span<const Topography> probes,
                         const ChannelSet& channels, const DiscGrid& grid, const ForwardParams& params = {});

// Rescale Q and P by one common factor so that perturbation_rmsd equals
// target_rmsd. Throws ArgumentError for an empty probe set, non-positive
// target, or an all-zero perturbation.
ReferencePlaneModel calibrate_perturbation_scale(const ReferencePlaneModel& raw, double target_rmsd,
                                                 std::span<const Topography> probes, const ChannelSet& channels,
                                                 const DiscGrid& grid, const ForwardParams& params = {});

// Standard-normal Q and P of the given sizes from a fixed seed, alpha = 0.
ReferencePlaneModel random_reference_planes(std::size_t terms, std::uint64_t seed);

// Independent N(0, sigma^2) noise on every valid entry; deterministic in seed.
OpldStack add_noise(const OpldStack& stack, double sigma, std::uint64_t seed);

}  // namespace twuq::optics
