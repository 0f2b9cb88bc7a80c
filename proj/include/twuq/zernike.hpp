#pragma once

#include "twuq/grid.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace twuq::zernike {

// Radial order n and azimuthal frequency m with n >= 0, |m| <= n and
// n - |m| even.
struct ZernikeIndex {
    int n = 0;
    int m = 0;

    bool operator==(const ZernikeIndex&) const = default;
};

// OSA/ANSI single index: j = (n(n + 2) + m) / 2.
ZernikeIndex index_to_nm(std::size_t j);
std::size_t nm_to_index(int n, int m);

// Noll-normalised Zernike polynomial, <Z_i, Z_j> over the unit disc equals
// pi * delta_ij. Negative m selects the sine term. Throws DomainError
// outside the closed unit disc.
double eval_zernike(std::size_t j, double x, double y);

// Radial polynomial R_n^|m|(rho), unnormalised.
double radial(int n, int abs_m, double rho);

class ZernikeCoeffs {
public:
    explicit ZernikeCoeffs(std::size_t n_terms) : coeffs_(n_terms, 0.0) {}
    explicit ZernikeCoeffs(std::vector<double> values);

    std::size_t size() const noexcept { return coeffs_.size(); }
    double operator[](std::size_t j) const noexcept { return coeffs_[j]; }
    // Throws ArgumentError on non-finite values.
    void set(std::size_t j, double value);
    std::span<const double> values() const noexcept { return coeffs_; }

    bool operator==(const ZernikeCoeffs&) const = default;

private:
    std::vector<double> coeffs_;
};

// Sum_j coeffs[j] * Z_j at every in-aperture pixel of the grid.
Topography eval_expansion(const ZernikeCoeffs& coeffs, const DiscGrid& grid);

// basis(j, k) = Z_j at the k-th in-aperture pixel (row-major pixel order).
Matrix basis_matrix(std::size_t n_terms, const DiscGrid& grid);

// Entry (i, j) = sum_p Z_i(p) Z_j(p) dA over in-aperture pixels.
Matrix gram_matrix(std::size_t n_terms, const DiscGrid& grid);

}  // namespace twuq::zernike
