#include "twuq/zernike.hpp"

#include "twuq/errors.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

namespace twuq {

DiscGrid::DiscGrid(std::size_t size) : size_(size), mask_(size * size, 0) {
    if (size == 0) throw ArgumentError("grid size must be positive");
    for (std::size_t p = 0; p < pixel_count(); ++p) {
        const double px = x(p);
        const double py = y(p);
        if (px * px + py * py <= 1.0) {
            mask_[p] = 1;
            ++aperture_count_;
        }
    }
}

Topography::Topography(const DiscGrid& grid)
    : size(grid.size()), height(grid.pixel_count(), 0.0), valid(grid.mask()) {}

std::size_t Topography::valid_count() const noexcept {
    std::size_t n = 0;
    for (auto v : valid) n += v != 0;
    return n;
}

}  // namespace twuq

namespace twuq::zernike {

ZernikeIndex index_to_nm(std::size_t j) {
    // Largest n with n(n + 1)/2 <= j.
    int n = static_cast<int>((std::sqrt(8.0 * static_cast<double>(j) + 1.0) - 1.0) / 2.0);
    while (static_cast<std::size_t>((n + 1) * (n + 2) / 2) <= j) ++n;
    while (static_cast<std::size_t>(n * (n + 1) / 2) > j) --n;
    const int m = 2 * static_cast<int>(j) - n * (n + 2);
    return {n, m};
}

std::size_t nm_to_index(int n, int m) {
    if (n < 0 || std::abs(m) > n || (n - std::abs(m)) % 2 != 0) {
        throw ArgumentError("invalid Zernike pair (" + std::to_string(n) + ", " + std::to_string(m) + ")");
    }
    return static_cast<std::size_t>((n * (n + 2) + m) / 2);
}

namespace {

double factorial(int k) {
    double f = 1.0;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
}

}  // namespace

double radial(int n, int abs_m, double rho) {
    double sum = 0.0;
    for (int k = 0; k <= (n - abs_m) / 2; ++k) {
        const double c = factorial(n - k) /
                         (factorial(k) * factorial((n + abs_m) / 2 - k) * factorial((n - abs_m) / 2 - k));
        sum += ((k % 2) ? -c : c) * std::pow(rho, n - 2 * k);
    }
    return sum;
}

double eval_zernike(std::size_t j, double x, double y) {
    const double rho2 = x * x + y * y;
    if (!(rho2 <= 1.0)) {
        throw DomainError("Zernike evaluated outside the unit disc at (" + std::to_string(x) + ", " +
                          std::to_string(y) + ")");
    }
    const auto [n, m] = index_to_nm(j);
    const double rho = std::sqrt(rho2);
    const double r = radial(n, std::abs(m), rho);
    if (m == 0) return std::sqrt(static_cast<double>(n + 1)) * r;
    const double norm = std::sqrt(2.0 * (n + 1));
    const double phi = std::atan2(y, x);
    return m > 0 ? norm * r * std::cos(m * phi) : norm * r * std::sin(-m * phi);
}

ZernikeCoeffs::ZernikeCoeffs(std::vector<double> values) : coeffs_(std::move(values)) {
    for (double v : coeffs_) {
        if (!std::isfinite(v)) throw ArgumentError("Zernike coefficients must be finite");
    }
}

void ZernikeCoeffs::set(std::size_t j, double value) {
    if (!std::isfinite(value)) throw ArgumentError("Zernike coefficients must be finite");
    coeffs_.at(j) = value;
}

Topography eval_expansion(const ZernikeCoeffs& coeffs, const DiscGrid& grid) {
    Topography topo(grid);
    const auto n_pix = static_cast<std::ptrdiff_t>(grid.pixel_count());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t p = 0; p < n_pix; ++p) {
        if (!grid.in_aperture(p)) continue;
        const double x = grid.x(p);
        const double y = grid.y(p);
        double h = 0.0;
        for (std::size_t j = 0; j < coeffs.size(); ++j) {
            if (coeffs[j] != 0.0) h += coeffs[j] * eval_zernike(j, x, y);
        }
        topo.height[p] = h;
    }
    return topo;
}

Matrix basis_matrix(std::size_t n_terms, const DiscGrid& grid) {
    std::vector<std::size_t> pixels;
    pixels.reserve(grid.aperture_count());
    for (std::size_t p = 0; p < grid.pixel_count(); ++p) {
        if (grid.in_aperture(p)) pixels.push_back(p);
    }
    Matrix basis(n_terms, pixels.size());
    const auto n_ap = static_cast<std::ptrdiff_t>(pixels.size());
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t k = 0; k < n_ap; ++k) {
        const double x = grid.x(pixels[k]);
        const double y = grid.y(pixels[k]);
        for (std::size_t j = 0; j < n_terms; ++j) basis(j, k) = eval_zernike(j, x, y);
    }
    return basis;
}

Matrix gram_matrix(std::size_t n_terms, const DiscGrid& grid) {
    if (n_terms == 0) throw ArgumentError("gram_matrix needs at least one term");
    const Matrix basis = basis_matrix(n_terms, grid);
    const double area = grid.pixel_area();
    Matrix gram(n_terms, n_terms);
    const auto nt = static_cast<std::ptrdiff_t>(n_terms);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < nt; ++i) {
        for (std::size_t j = 0; j <= static_cast<std::size_t>(i); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < basis.cols; ++k) s += basis(i, k) * basis(j, k);
            gram(i, j) = s * area;
            gram(j, i) = s * area;
        }
    }
    return gram;
}

}  // namespace twuq::zernike
