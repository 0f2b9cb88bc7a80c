#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace twuq::svg {

enum class Style { Points, Line, Band };

struct Series {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
    std::vector<double> y_upper;  // Band only: y is the lower edge
    Style style = Style::Line;
};

struct Plot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<Series> series;
    bool diagonal = false;  // draw y = x
};

struct HeatMap {
    std::string title;
    std::size_t size = 0;
    std::vector<double> values;
    std::vector<std::uint8_t> mask;
    double vmin = 0.0;
    double vmax = 1.0;
};

// Self-contained SVG documents. Every series and map is repeated as an
// XML comment so the numbers can be recovered without parsing geometry.
std::string render(const Plot& plot, std::uint64_t config_hash);
// Maps side by side with a shared colour scale.
std::string render(const std::vector<HeatMap>& maps, const std::string& title, std::uint64_t config_hash);

void write(const std::filesystem::path& path, const std::string& doc);

}  // namespace twuq::svg
