#ifndef HFT_REPORT_IO_HPP
#define HFT_REPORT_IO_HPP

#include <string>
#include <vector>

namespace hft {

// write-temp-then-rename so readers never observe partial files
void atomic_write_file(const std::string& path, const std::string& content);

struct PlotSeries {
    std::string name;
    std::vector<double> xs;
    std::vector<double> ys;
};

// Self-contained SVG renderings; every file embeds the config hash as a
// comment so outputs can be traced back to the run that produced them.
void plot_lines_svg(const std::string& path, const std::string& title, const std::string& xlabel,
                    const std::string& ylabel, const std::vector<PlotSeries>& series,
                    const std::string& config_hash = "");

struct HistSeries {
    std::string name;
    std::vector<double> samples;
};

void plot_histogram_svg(const std::string& path, const std::string& title,
                        const std::string& xlabel, const std::vector<HistSeries>& series,
                        int bins = 30, const std::string& config_hash = "");

}  // namespace hft

#endif
