#include "twuq/svg.hpp"

#include "twuq/binary_io.hpp"
#include "twuq/errors.hpp"
#include "twuq/text.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace twuq::svg {

namespace {

constexpr double kWidth = 640, kHeight = 440;
constexpr double kLeft = 80, kRight = 150, kTop = 40, kBottom = 60;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"};

std::string esc(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::string coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

// Comments may not contain "--".
std::string comment_safe(const std::string& s) {
    std::string out = s;
    for (std::size_t p; (p = out.find("--")) != std::string::npos;) out.replace(p, 2, "- -");
    return out;
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void finish() {
        if (!(lo <= hi)) lo = 0, hi = 1;
        if (hi == lo) {
            const double pad = lo == 0 ? 1.0 : std::abs(lo) * 0.1;
            lo -= pad;
            hi += pad;
        } else {
            const double pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
    }
};

std::string header(double w, double h, const std::string& title, std::uint64_t hash) {
    std::string s = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + coord(w) + "\" height=\"" + coord(h) +
         "\" viewBox=\"0 0 " + coord(w) + " " + coord(h) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<!-- config_hash=" + io::hex64(hash) + " -->\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + coord(w / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" + esc(title) +
         "</text>\n";
    return s;
}

// Dark purple (0) to yellow (1).
std::string colour(double t) {
    t = std::clamp(t, 0.0, 1.0);
    const double r = 68 + t * (253 - 68), g = 1 + t * (231 - 1), b = 84 + t * (37 - 84);
    char buf[16];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", static_cast<int>(r), static_cast<int>(g), static_cast<int>(b));
    return buf;
}

}  // namespace

std::string render(const Plot& plot, std::uint64_t config_hash) {
    Range rx, ry;
    for (const auto& s : plot.series) {
        for (double v : s.x) rx.add(v);
        for (double v : s.y) ry.add(v);
        for (double v : s.y_upper) ry.add(v);
    }
    if (plot.diagonal) {
        const double lo = std::min(rx.lo, ry.lo), hi = std::max(rx.hi, ry.hi);
        rx.lo = ry.lo = lo;
        rx.hi = ry.hi = hi;
    }
    rx.finish();
    ry.finish();
    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto X = [&](double v) { return kLeft + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
    auto Y = [&](double v) { return kTop + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

    std::string s = header(kWidth, kHeight, plot.title, config_hash);
    for (const auto& ser : plot.series) {
        s += "<!-- series \"" + comment_safe(ser.label) + "\" x,y" + (ser.style == Style::Band ? ",y_upper" : "") +
             ":";
        for (std::size_t i = 0; i < ser.x.size(); ++i) {
            s += " " + num(ser.x[i]) + "," + num(ser.y[i]);
            if (ser.style == Style::Band) s += "," + num(ser.y_upper[i]);
        }
        s += " -->\n";
    }
    s += "<rect x=\"" + coord(kLeft) + "\" y=\"" + coord(kTop) + "\" width=\"" + coord(pw) + "\" height=\"" +
         coord(ph) + "\" fill=\"none\" stroke=\"#333\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double vx = rx.lo + (rx.hi - rx.lo) * i / 4, vy = ry.lo + (ry.hi - ry.lo) * i / 4;
        s += "<text x=\"" + coord(X(vx)) + "\" y=\"" + coord(kTop + ph + 18) + "\" text-anchor=\"middle\">" +
             fmt(vx) + "</text>\n";
        s += "<text x=\"" + coord(kLeft - 6) + "\" y=\"" + coord(Y(vy) + 4) + "\" text-anchor=\"end\">" + fmt(vy) +
             "</text>\n";
    }
    s += "<text x=\"" + coord(kLeft + pw / 2) + "\" y=\"" + coord(kHeight - 14) + "\" text-anchor=\"middle\">" +
         esc(plot.x_label) + "</text>\n";
    s += "<text transform=\"translate(18," + coord(kTop + ph / 2) + ") rotate(-90)\" text-anchor=\"middle\">" +
         esc(plot.y_label) + "</text>\n";
    if (plot.diagonal) {
        s += "<line x1=\"" + coord(X(rx.lo)) + "\" y1=\"" + coord(Y(rx.lo)) + "\" x2=\"" + coord(X(rx.hi)) +
             "\" y2=\"" + coord(Y(rx.hi)) + "\" stroke=\"#999\" stroke-dasharray=\"4 3\"/>\n";
    }
    for (std::size_t k = 0; k < plot.series.size(); ++k) {
        const auto& ser = plot.series[k];
        const std::string c = kPalette[k % std::size(kPalette)];
        if (ser.style == Style::Points) {
            for (std::size_t i = 0; i < ser.x.size(); ++i) {
                s += "<circle cx=\"" + coord(X(ser.x[i])) + "\" cy=\"" + coord(Y(ser.y[i])) + "\" r=\"2\" fill=\"" +
                     c + "\" fill-opacity=\"0.6\"/>\n";
            }
        } else if (ser.style == Style::Line) {
            s += "<polyline fill=\"none\" stroke=\"" + c + "\" stroke-width=\"1.5\" points=\"";
            for (std::size_t i = 0; i < ser.x.size(); ++i) s += coord(X(ser.x[i])) + "," + coord(Y(ser.y[i])) + " ";
            s += "\"/>\n";
        } else {
            s += "<polygon fill=\"" + c + "\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
            for (std::size_t i = 0; i < ser.x.size(); ++i) s += coord(X(ser.x[i])) + "," + coord(Y(ser.y[i])) + " ";
            for (std::size_t i = ser.x.size(); i-- > 0;) {
                s += coord(X(ser.x[i])) + "," + coord(Y(ser.y_upper[i])) + " ";
            }
            s += "\"/>\n";
        }
        const double ly = kTop + 10 + 18.0 * static_cast<double>(k);
        s += "<rect x=\"" + coord(kWidth - kRight + 12) + "\" y=\"" + coord(ly - 8) +
             "\" width=\"12\" height=\"10\" fill=\"" + c + "\"/>\n";
        s += "<text x=\"" + coord(kWidth - kRight + 30) + "\" y=\"" + coord(ly + 1) + "\">" + esc(ser.label) +
             "</text>\n";
    }
    return s + "</svg>\n";
}

std::string render(const std::vector<HeatMap>& maps, const std::string& title, std::uint64_t config_hash) {
    if (maps.empty()) throw ArgumentError("no maps to render");
    const double cell = maps.front().size <= 16 ? 12.0 : 192.0 / static_cast<double>(maps.front().size);
    const double side = cell * static_cast<double>(maps.front().size);
    const double gap = 24, top = 50;
    const double w = 20 + static_cast<double>(maps.size()) * (side + gap) + 60;
    const double h = top + side + 60;
    std::string s = header(w, h, title, config_hash);
    const double vmin = maps.front().vmin, vmax = maps.front().vmax;
    for (std::size_t m = 0; m < maps.size(); ++m) {
        const auto& hm = maps[m];
        if (hm.values.size() != hm.size * hm.size || hm.mask.size() != hm.values.size()) {
            throw DimensionError("heat map size mismatch");
        }
        s += "<!-- map \"" + comment_safe(hm.title) + "\" size=" + std::to_string(hm.size) + " row,col,value:";
        for (std::size_t p = 0; p < hm.values.size(); ++p) {
            if (hm.mask[p]) s += " " + std::to_string(p / hm.size) + "," + std::to_string(p % hm.size) + "," +
                                 num(hm.values[p]);
        }
        s += " -->\n";
        const double x0 = 20 + static_cast<double>(m) * (side + gap);
        for (std::size_t p = 0; p < hm.values.size(); ++p) {
            if (!hm.mask[p]) continue;
            const double t = vmax > vmin ? (hm.values[p] - vmin) / (vmax - vmin) : 0.5;
            s += "<rect x=\"" + coord(x0 + cell * static_cast<double>(p % hm.size)) + "\" y=\"" +
                 coord(top + cell * static_cast<double>(p / hm.size)) + "\" width=\"" + coord(cell) +
                 "\" height=\"" + coord(cell) + "\" fill=\"" + colour(t) + "\"/>\n";
        }
        s += "<text x=\"" + coord(x0 + side / 2) + "\" y=\"" + coord(top + side + 18) + "\" text-anchor=\"middle\">" +
             esc(hm.title) + "</text>\n";
    }
    // Colour bar
    const double bx = w - 50;
    for (int i = 0; i < 20; ++i) {
        s += "<rect x=\"" + coord(bx) + "\" y=\"" + coord(top + side - (i + 1) * side / 20) + "\" width=\"14\" height=\"" +
             coord(side / 20 + 0.5) + "\" fill=\"" + colour((i + 0.5) / 20) + "\"/>\n";
    }
    s += "<text x=\"" + coord(bx + 18) + "\" y=\"" + coord(top + 8) + "\">" + fmt(vmax) + "</text>\n";
    s += "<text x=\"" + coord(bx + 18) + "\" y=\"" + coord(top + side) + "\">" + fmt(vmin) + "</text>\n";
    return s + "</svg>\n";
}

void write(const std::filesystem::path& path, const std::string& doc) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << doc;
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace twuq::svg
