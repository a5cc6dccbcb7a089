#include "hft/strip.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "hft/rng.hpp"
#include "hft/train.hpp"

using nlohmann::json;

namespace hft {

Image blend(const Image& x, const Image& partner, double alpha) {
    if (!x.same_shape(partner)) throw std::invalid_argument("blend: shape mismatch");
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("blend: alpha must be in (0,1)");
    Image out = x;
    const float a = static_cast<float>(alpha);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = std::clamp(a * x.data[i] + (1.f - a) * partner.data[i], 0.f, 1.f);
    return out;
}

namespace {

double entropy_nats(const std::vector<float>& p) {
    double h = 0.0;
    for (float v : p)
        if (v > 0.f) h -= static_cast<double>(v) * std::log(static_cast<double>(v));
    return h;
}

}  // namespace

double strip_entropy(Classifier& model, const Image& x, const std::vector<const Image*>& partners,
                     const StripConfig& config) {
    if (partners.empty()) throw std::invalid_argument("strip_entropy: no partner images");
    std::vector<Image> blended;
    blended.reserve(partners.size());
    for (const Image* p : partners) blended.push_back(blend(x, *p, config.blend_alpha));
    std::vector<const Image*> batch;
    batch.reserve(blended.size());
    for (const Image& b : blended) batch.push_back(&b);
    auto probs = model.predict_probs(batch);
    double sum = 0.0;
    for (const auto& p : probs) sum += entropy_nats(p);
    return sum / static_cast<double>(probs.size());
}

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("normal_quantile: p must be in (0,1)");
    // Acklam's inverse normal CDF approximation
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r, x;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= phigh) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    // one Halley step against the exact CDF tightens it to ~1e-15
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(x * x / 2.0);
    return x - u / (1 + x * u / 2);
}

double fit_threshold(const std::vector<double>& pure_entropies, double percentile) {
    if (pure_entropies.size() < 2)
        throw std::invalid_argument("fit_threshold: need at least 2 samples");
    if (!(percentile > 0.0 && percentile < 0.5))
        throw std::invalid_argument("fit_threshold: percentile must be in (0, 0.5)");
    double mean = 0.0;
    for (double v : pure_entropies) mean += v;
    mean /= static_cast<double>(pure_entropies.size());
    double ss = 0.0;
    for (double v : pure_entropies) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / static_cast<double>(pure_entropies.size() - 1));
    // all-equal samples can leave sd at a few ulps rather than exactly zero
    if (sd <= 1e-12 * (1.0 + std::abs(mean)))
        throw degenerate_fit_error("fit_threshold: zero variance in calibration entropies");
    return mean + sd * normal_quantile(percentile);
}

StripReport compute_far(Classifier& model, const std::vector<LabeledImage>& trojan_images,
                        const DatasetSplit& pure_calibration, const StripConfig& config) {
    if (trojan_images.empty()) throw std::invalid_argument("compute_far: no trojan images");
    if (pure_calibration.images.empty()) throw std::invalid_argument("compute_far: no calibration images");
    if (config.partner_count < 1) throw std::invalid_argument("compute_far: partner_count must be >= 1");

    // one seeded sample of partners, shared by every evaluated input
    Rng rng(config.seed);
    std::vector<int> order(pure_calibration.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);

    const int partner_count =
        std::min<int>(config.partner_count, static_cast<int>(order.size()));
    std::vector<const Image*> partners;
    partners.reserve(static_cast<std::size_t>(partner_count));
    for (int i = 0; i < partner_count; ++i)
        partners.push_back(&pure_calibration.images[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].pixels);

    StripReport rep;
    rep.config = config;

    const int calib_end = std::min<int>(partner_count + config.calibration_count,
                                        static_cast<int>(order.size()));
    for (int i = partner_count; i < calib_end; ++i) {
        const Image& x =
            pure_calibration.images[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])].pixels;
        rep.pure_entropies.push_back(strip_entropy(model, x, partners, config));
    }
    rep.threshold = fit_threshold(rep.pure_entropies, config.percentile);

    std::size_t accepted = 0;
    for (const auto& t : trojan_images) {
        const double h = strip_entropy(model, t.pixels, partners, config);
        rep.trojan_entropies.push_back(h);
        if (h > rep.threshold) ++accepted;
    }
    rep.far = 100.0 * static_cast<double>(accepted) / static_cast<double>(trojan_images.size());
    return rep;
}

std::string StripReport::to_json() const {
    json j;
    j["schema"] = "hft.strip.v1";
    j["threshold"] = threshold;
    j["far"] = far;
    j["pure_entropy_count"] = pure_entropies.size();
    j["trojan_entropy_count"] = trojan_entropies.size();
    j["config"] = {{"partner_count", config.partner_count},
                   {"blend_alpha", config.blend_alpha},
                   {"percentile", config.percentile},
                   {"calibration_count", config.calibration_count},
                   {"seed", config.seed}};
    return j.dump(2);
}

void StripReport::entropies_csv(const std::string& path, const std::string& config_hash) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    if (!config_hash.empty()) out << "# config " << config_hash << "\n";
    out << "kind,entropy\n";
    for (double v : pure_entropies) out << "pure," << v << "\n";
    for (double v : trojan_entropies) out << "trojan," << v << "\n";
}

}  // namespace hft
