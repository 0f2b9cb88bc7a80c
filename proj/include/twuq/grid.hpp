#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace twuq {

// D x D pixel grid mapped onto [-1, 1]^2. Pixel centres sit at
// x = (2c + 1)/D - 1 (column c) and y = (2r + 1)/D - 1 (row r); the aperture
// is the closed unit disc.
class DiscGrid {
public:
    explicit DiscGrid(std::size_t size);

    std::size_t size() const noexcept { return size_; }
    std::size_t pixel_count() const noexcept { return size_ * size_; }
    // D', the number of in-aperture pixels.
    std::size_t aperture_count() const noexcept { return aperture_count_; }

    double coord(std::size_t i) const noexcept {
        return (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(size_) - 1.0;
    }
    double x(std::size_t pixel) const noexcept { return coord(pixel % size_); }
    double y(std::size_t pixel) const noexcept { return coord(pixel / size_); }
    // Pixel spacing in normalised coordinates.
    double spacing() const noexcept { return 2.0 / static_cast<double>(size_); }
    double pixel_area() const noexcept { return spacing() * spacing(); }

    bool in_aperture(std::size_t pixel) const noexcept { return mask_[pixel] != 0; }
    const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }

    bool operator==(const DiscGrid& other) const noexcept { return size_ == other.size_; }

private:
    std::size_t size_;
    std::size_t aperture_count_ = 0;
    std::vector<std::uint8_t> mask_;
};

// A D x D height map in metres. Pixels with valid == 0 hold the sentinel 0
// and are excluded from every norm.
struct Topography {
    std::size_t size = 0;
    std::vector<double> height;
    std::vector<std::uint8_t> valid;

    Topography() = default;
    explicit Topography(const DiscGrid& grid);

    std::size_t valid_count() const noexcept;
    bool operator==(const Topography&) const = default;
};

// Dense row-major matrix of doubles.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

    bool operator==(const Matrix&) const = default;
};

}  // namespace twuq
