#include "hft/report_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace hft {

void atomic_write_file(const std::string& path, const std::string& content) {
    fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
    }
    fs::rename(tmp, target);
}

namespace {

constexpr int kW = 640, kH = 420;
constexpr int kLeft = 64, kRight = 24, kTop = 40, kBottom = 48;
const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    void feed(double v) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    void pad() {
        if (!(lo < hi)) {
            lo -= 1.0;
            hi += 1.0;
        } else {
            const double m = 0.05 * (hi - lo);
            lo -= m;
            hi += m;
        }
    }
};

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(4);
    ss << v;
    return ss.str();
}

void svg_header(std::ostringstream& svg, const std::string& title, const std::string& hash) {
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW << "\" height=\"" << kH
        << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    if (!hash.empty()) svg << "<!-- config " << hash << " -->\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
        << "</text>\n";
}

void svg_axes(std::ostringstream& svg, const Range& xr, const Range& yr, const std::string& xlabel,
              const std::string& ylabel) {
    svg << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << kW - kLeft - kRight
        << "\" height=\"" << kH - kTop - kBottom << "\" fill=\"none\" stroke=\"#333\"/>\n";
    svg << "<text x=\"" << kW / 2 << "\" y=\"" << kH - 12 << "\" text-anchor=\"middle\">" << xlabel
        << "</text>\n";
    svg << "<text x=\"16\" y=\"" << kH / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
        << kH / 2 << ")\">" << ylabel << "</text>\n";
    svg << "<text x=\"" << kLeft << "\" y=\"" << kH - kBottom + 16 << "\" text-anchor=\"middle\">"
        << fmt(xr.lo) << "</text>\n";
    svg << "<text x=\"" << kW - kRight << "\" y=\"" << kH - kBottom + 16
        << "\" text-anchor=\"middle\">" << fmt(xr.hi) << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kH - kBottom << "\" text-anchor=\"end\">"
        << fmt(yr.lo) << "</text>\n";
    svg << "<text x=\"" << kLeft - 6 << "\" y=\"" << kTop + 10 << "\" text-anchor=\"end\">"
        << fmt(yr.hi) << "</text>\n";
}

double map_x(double v, const Range& r) {
    return kLeft + (v - r.lo) / (r.hi - r.lo) * (kW - kLeft - kRight);
}
double map_y(double v, const Range& r) {
    return kH - kBottom - (v - r.lo) / (r.hi - r.lo) * (kH - kTop - kBottom);
}

}  // namespace

void plot_lines_svg(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<PlotSeries>& series,
                    const std::string& config_hash) {
    Range xr, yr;
    for (const auto& s : series) {
        for (double v : s.xs) xr.feed(v);
        for (double v : s.ys) yr.feed(v);
    }
    xr.pad();
    yr.pad();

    std::ostringstream svg;
    svg_header(svg, title, config_hash);
    svg_axes(svg, xr, yr, xlabel, ylabel);
    for (std::size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kColors[si % 6];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.xs.size(); ++i)
            svg << map_x(s.xs[i], xr) << "," << map_y(s.ys[i], yr) << " ";
        svg << "\"/>\n";
        for (std::size_t i = 0; i < s.xs.size(); ++i)
            svg << "<circle cx=\"" << map_x(s.xs[i], xr) << "\" cy=\"" << map_y(s.ys[i], yr)
                << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        svg << "<text x=\"" << kW - kRight - 8 << "\" y=\"" << kTop + 16 + 16 * si
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << s.name << "</text>\n";
    }
    svg << "</svg>\n";
    atomic_write_file(path, svg.str());
}

void plot_histogram_svg(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::vector<HistSeries>& series,
                        int bins, const std::string& config_hash) {
    Range xr;
    for (const auto& s : series)
        for (double v : s.samples) xr.feed(v);
    if (!(xr.lo < xr.hi)) {
        xr.lo -= 0.5;
        xr.hi += 0.5;
    }
    const double width = (xr.hi - xr.lo) / bins;

    std::vector<std::vector<int>> counts(series.size(), std::vector<int>(static_cast<std::size_t>(bins), 0));
    int max_count = 1;
    for (std::size_t si = 0; si < series.size(); ++si)
        for (double v : series[si].samples) {
            int b = std::min(bins - 1, static_cast<int>((v - xr.lo) / width));
            max_count = std::max(max_count, ++counts[si][static_cast<std::size_t>(b)]);
        }

    Range yr;
    yr.feed(0);
    yr.feed(max_count);
    Range xr_draw = xr;

    std::ostringstream svg;
    svg_header(svg, title, config_hash);
    svg_axes(svg, xr_draw, yr, xlabel, "count");
    for (std::size_t si = 0; si < series.size(); ++si) {
        const char* color = kColors[si % 6];
        for (int b = 0; b < bins; ++b) {
            const int c = counts[si][static_cast<std::size_t>(b)];
            if (c == 0) continue;
            const double x0 = map_x(xr.lo + b * width, xr_draw);
            const double x1 = map_x(xr.lo + (b + 1) * width, xr_draw);
            const double y = map_y(c, yr);
            svg << "<rect x=\"" << x0 << "\" y=\"" << y << "\" width=\"" << (x1 - x0)
                << "\" height=\"" << (kH - kBottom - y) << "\" fill=\"" << color
                << "\" fill-opacity=\"0.45\"/>\n";
        }
        svg << "<text x=\"" << kW - kRight - 8 << "\" y=\"" << kTop + 16 + 16 * si
            << "\" text-anchor=\"end\" fill=\"" << color << "\">" << series[si].name << "</text>\n";
    }
    svg << "</svg>\n";
    atomic_write_file(path, svg.str());
}

}  // namespace hft
