#ifndef HFT_STRIP_HPP
#define HFT_STRIP_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hft/dataset.hpp"

namespace hft {

class Classifier;

struct degenerate_fit_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct StripConfig {
    int partner_count = 100;    // pure images blended with each probe input
    double blend_alpha = 0.5;   // weight of the probe image
    double percentile = 0.01;   // lower-tail mass of the fitted normal
    int calibration_count = 200;  // pure inputs used to fit the threshold
    std::uint64_t seed = 0;
};

struct StripReport {
    double threshold = 0.0;
    std::vector<double> pure_entropies;
    std::vector<double> trojan_entropies;
    double far = 0.0;  // percent of trojan inputs accepted as pure
    StripConfig config;

    std::string to_json() const;
    void entropies_csv(const std::string& path, const std::string& config_hash = "") const;
};

// alpha*x + (1-alpha)*partner, clipped to [0,1]
Image blend(const Image& x, const Image& partner, double alpha);

// mean over partners of H(p) = -sum_i p_i ln p_i for the blended inputs
double strip_entropy(Classifier& model, const Image& x, const std::vector<const Image*>& partners,
                     const StripConfig& config);

// lower `percentile` quantile of a normal fitted by sample mean/stddev
double fit_threshold(const std::vector<double>& pure_entropies, double percentile);

// standard normal quantile (Acklam's rational approximation, ~1e-9 accurate)
double normal_quantile(double p);

StripReport compute_far(Classifier& model, const std::vector<LabeledImage>& trojan_images,
                        const DatasetSplit& pure_calibration, const StripConfig& config);

}  // namespace hft

#endif
