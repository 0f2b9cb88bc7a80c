#include "twuq/optics.hpp"

#include "twuq/errors.hpp"
#include "twuq/zernike.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace twuq::optics {

AsphereDesign AsphereDesign::reference_design() {
    AsphereDesign d;
    d.radius = 0.0202;
    d.conic = -1.0;
    d.even_coeffs = {5.4145e+03, -8.0413e+05, -2.9871e+09, -1.4918e+12, 1.3777e+15, 4.4258e+18, -3.4928e+21};
    return d;
}

double asphere_sag(const AsphereDesign& design, double r) {
    if (design.radius == 0.0) throw ArgumentError("asphere radius must be non-zero");
    const double r2 = r * r;
    const double arg = 1.0 - (1.0 + design.conic) * r2 / (design.radius * design.radius);
    if (arg < 0.0) throw DomainError("asphere sag undefined at r = " + std::to_string(r));
    double sag = r2 / (design.radius * (1.0 + std::sqrt(arg)));
    double power = r2 * r2;  // r^4
    for (double a : design.even_coeffs) {
        sag += a * power;
        power *= r2;
    }
    return sag;
}

bool ChannelConfig::covers(double x, double y) const noexcept {
    if (rule == SectorRule::FullDisc) return true;
    const double diff = std::remainder(std::atan2(y, x) - sector_center, 2.0 * std::numbers::pi);
    return std::abs(diff) <= 2.0 * std::numbers::pi / 3.0;
}

ChannelSet default_channels() {
    const double half_pi = std::numbers::pi / 2.0;
    ChannelSet c;
    c[0] = {1, 0.00, 0.0, 0.0, 1.0, 0.0, SectorRule::FullDisc, 0.0};
    c[1] = {2, 0.10, 0.5, 0.0, 0.0, 1.0, SectorRule::Sector240, 0.0};
    c[2] = {3, 0.20, 0.0, 0.5, -1.0, 0.0, SectorRule::Sector240, half_pi};
    c[3] = {4, 0.30, -0.5, 0.0, 0.0, -1.0, SectorRule::Sector240, 2.0 * half_pi};
    return c;
}

void validate(const ChannelSet& channels) {
    for (std::size_t k = 0; k < kChannels; ++k) {
        const auto& c = channels[k];
        if (c.id != static_cast<int>(k) + 1) throw ConfigError("channel ids must be 1..4 in order");
        if (!(c.theta >= 0.0 && c.theta < std::numbers::pi / 3.0)) {
            throw ConfigError("channel " + std::to_string(c.id) + ": theta must lie in [0, pi/3)");
        }
        if (!(std::abs(c.source_u) <= 1.0 && std::abs(c.source_v) <= 1.0) ||
            c.source_u * c.source_u + c.source_v * c.source_v > 1.0) {
            throw ConfigError("channel " + std::to_string(c.id) + ": source position must lie in the unit disc");
        }
    }
}

void ReferencePlaneModel::validate() const {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ArgumentError("alpha must lie in [0, 1]");
    for (const Matrix* m : {&source, &pixel}) {
        if (m->data.size() != m->rows * m->cols) throw DimensionError("reference-plane matrix size mismatch");
        for (double v : m->data) {
            if (!std::isfinite(v)) throw ArgumentError("reference-plane coefficients must be finite");
        }
    }
}

double reference_plane_path(const Matrix& coeffs, double local_x, double local_y, double outer_x,
                            double outer_y) {
    double total = 0.0;
    for (std::size_t i = 0; i < coeffs.rows; ++i) {
        double inner = 0.0;
        for (std::size_t j = 0; j < coeffs.cols; ++j) {
            inner += coeffs(i, j) * zernike::eval_zernike(j, outer_x, outer_y);
        }
        total += inner * zernike::eval_zernike(i, local_x, local_y);
    }
    return total;
}

void topography_gradient(const Topography& topo, const DiscGrid& grid, std::vector<double>& dx,
                         std::vector<double>& dy) {
    const std::size_t d = grid.size();
    const double h = grid.spacing();
    dx.assign(grid.pixel_count(), 0.0);
    dy.assign(grid.pixel_count(), 0.0);
    auto inside = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        return r >= 0 && c >= 0 && r < static_cast<std::ptrdiff_t>(d) && c < static_cast<std::ptrdiff_t>(d) &&
               topo.valid[static_cast<std::size_t>(r) * d + static_cast<std::size_t>(c)] != 0;
    };
    auto at = [&](std::ptrdiff_t r, std::ptrdiff_t c) {
        return topo.height[static_cast<std::size_t>(r) * d + static_cast<std::size_t>(c)];
    };
    // One axis at a time: (dr, dc) is the unit step along that axis.
    auto derivative = [&](std::ptrdiff_t r, std::ptrdiff_t c, std::ptrdiff_t dr, std::ptrdiff_t dc) {
        const bool fwd = inside(r + dr, c + dc);
        const bool bwd = inside(r - dr, c - dc);
        if (fwd && bwd) return (at(r + dr, c + dc) - at(r - dr, c - dc)) / (2.0 * h);
        if (fwd) return (at(r + dr, c + dc) - at(r, c)) / h;
        if (bwd) return (at(r, c) - at(r - dr, c - dc)) / h;
        return 0.0;
    };
    for (std::size_t r = 0; r < d; ++r) {
        for (std::size_t c = 0; c < d; ++c) {
            const std::size_t p = r * d + c;
            if (!topo.valid[p]) continue;
            const auto rr = static_cast<std::ptrdiff_t>(r);
            const auto cc = static_cast<std::ptrdiff_t>(c);
            dx[p] = derivative(rr, cc, 0, 1);
            dy[p] = derivative(rr, cc, 1, 0);
        }
    }
}

OpldStack forward_model(const Topography& topo, const ChannelSet& channels, const ReferencePlaneModel& ref,
                        const DiscGrid& grid, const ForwardParams& params) {
    if (topo.size != grid.size() || topo.height.size() != grid.pixel_count() ||
        topo.valid.size() != grid.pixel_count()) {
        throw DimensionError("topography does not match the " + std::to_string(grid.size()) + "^2 grid");
    }
    std::vector<double> dx, dy;
    topography_gradient(topo, grid, dx, dy);

    // Per-channel source-plane weights w_i = sum_j Q_ij Z_j(U_k, V_k).
    std::array<std::vector<double>, kChannels> source_weights;
    if (ref.alpha != 0.0) {
        for (std::size_t k = 0; k < kChannels; ++k) {
            auto& w = source_weights[k];
            w.assign(ref.source.rows, 0.0);
            for (std::size_t i = 0; i < ref.source.rows; ++i) {
                for (std::size_t j = 0; j < ref.source.cols; ++j) {
                    w[i] += ref.source(i, j) * zernike::eval_zernike(j, channels[k].source_u, channels[k].source_v);
                }
            }
        }
    }

    OpldStack out(grid.size());
    for (std::size_t p = 0; p < grid.pixel_count(); ++p) {
        if (!grid.in_aperture(p)) continue;
        const double x = grid.x(p);
        const double y = grid.y(p);
        const double t = topo.height[p];
        double pixel_plane = 0.0;
        if (ref.alpha != 0.0) pixel_plane = reference_plane_path(ref.pixel, x, y, x, y);
        for (std::size_t k = 0; k < kChannels; ++k) {
            const auto& ch = channels[k];
            if (!ch.covers(x, y)) continue;
            double v = 2.0 * std::cos(ch.theta) * t +
                       params.slope_coupling * (ch.slope_dir_x * dx[p] + ch.slope_dir_y * dy[p]) * t;
            if (ref.alpha != 0.0) {
                double source_plane = 0.0;
                for (std::size_t i = 0; i < ref.source.rows; ++i) {
                    source_plane += source_weights[k][i] * zernike::eval_zernike(i, x, y);
                }
                v += ref.alpha * (source_plane + pixel_plane);
            }
            const std::size_t idx = out.index(k, p);
            out.values[idx] = v;
            out.valid[idx] = 1;
        }
    }
    return out;
}

ReferencePlaneModel set_calibration_error(const ReferencePlaneModel& ref, double fraction) {
    if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ArgumentError("calibration error fraction must lie in [0, 1], got " + std::to_string(fraction));
    }
    ReferencePlaneModel out = ref;
    out.alpha = fraction;
    return out;
}

double perturbation_rmsd(const ReferencePlaneModel& ref, std::span<const Topography> probes,
                         const ChannelSet& channels, const DiscGrid& grid, const ForwardParams& params) {
    if (probes.empty()) throw ArgumentError("probe set is empty");
    const auto off = set_calibration_error(ref, 0.0);
    const auto on = set_calibration_error(ref, 1.0);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& topo : probes) {
        const auto a = forward_model(topo, channels, off, grid, params);
        const auto b = forward_model(topo, channels, on, grid, params);
        for (std::size_t i = 0; i < a.values.size(); ++i) {
            if (!a.valid[i]) continue;
            const double d = b.values[i] - a.values[i];
            sum += d * d;
            ++count;
        }
    }
    if (count == 0) throw ArgumentError("probe set has no valid entries");
    return std::sqrt(sum / static_cast<double>(count));
}

ReferencePlaneModel calibrate_perturbation_scale(const ReferencePlaneModel& raw, double target_rmsd,
                                                 std::span<const Topography> probes, const ChannelSet& channels,
                                                 const DiscGrid& grid, const ForwardParams& params) {
    if (!(target_rmsd > 0.0)) throw ArgumentError("target rmsd must be positive");
    const double measured = perturbation_rmsd(raw, probes, channels, grid, params);
    if (!(measured > 0.0)) throw ArgumentError("reference planes produce no perturbation; cannot scale");
    const double scale = target_rmsd / measured;
    ReferencePlaneModel out = raw;
    for (double& v : out.source.data) v *= scale;
    for (double& v : out.pixel.data) v *= scale;
    return out;
}

ReferencePlaneModel random_reference_planes(std::size_t terms, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ReferencePlaneModel ref;
    ref.source = Matrix(terms, terms);
    ref.pixel = Matrix(terms, terms);
    for (double& v : ref.source.data) v = normal(rng);
    for (double& v : ref.pixel.data) v = normal(rng);
    return ref;
}

OpldStack add_noise(const OpldStack& stack, double sigma, std::uint64_t seed) {
    if (!(sigma >= 0.0)) throw ArgumentError("noise sigma must be non-negative");
    OpldStack out = stack;
    if (sigma == 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, sigma);
    for (std::size_t i = 0; i < out.values.size(); ++i) {
        if (out.valid[i]) out.values[i] += normal(rng);
    }
    return out;
}

}  // namespace twuq::optics
