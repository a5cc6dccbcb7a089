#include "hft/neural_cleanse.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "hft/rng.hpp"
#include "hft/tensor.hpp"
#include "hft/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace hft {

Image apply_trigger(const Image& x, const Image& mask, const Image& pattern) {
    if (mask.height != x.height || mask.width != x.width)
        throw std::invalid_argument("apply_trigger: mask shape mismatch");
    if (!pattern.same_shape(x)) throw std::invalid_argument("apply_trigger: pattern shape mismatch");
    Image out = x;
    for (int c = 0; c < x.channels; ++c)
        for (int y = 0; y < x.height; ++y)
            for (int xx = 0; xx < x.width; ++xx) {
                const float m = mask.at(0, y, xx);
                out.at(c, y, xx) = (1.f - m) * x.at(c, y, xx) + m * pattern.at(c, y, xx);
            }
    return out;
}

MadResult mad_anomaly(const std::vector<double>& l1_norms) {
    if (l1_norms.size() < 3)
        throw std::invalid_argument("mad_anomaly: need at least 3 classes");
    auto median_of = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        const std::size_t n = v.size();
        return (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    };
    MadResult res;
    res.median = median_of(l1_norms);
    std::vector<double> dev;
    dev.reserve(l1_norms.size());
    for (double v : l1_norms) dev.push_back(std::abs(v - res.median));
    res.mad = 1.4826 * median_of(dev);
    if (res.mad == 0.0) {
        res.degenerate = true;
        res.indices.assign(l1_norms.size(), 0.0);
        return res;
    }
    for (double d : dev) res.indices.push_back(d / res.mad);
    return res;
}

std::vector<int> flagged_classes(const MadResult& mad, const std::vector<double>& l1_norms) {
    std::vector<int> out;
    if (mad.degenerate) return out;
    for (std::size_t i = 0; i < l1_norms.size(); ++i)
        if (mad.indices[i] > 2.0 && l1_norms[i] < mad.median) out.push_back(static_cast<int>(i));
    return out;
}

std::string to_string(NCOutcome o) {
    switch (o) {
        case NCOutcome::WithTarget: return "with_target";
        case NCOutcome::WithNonTarget: return "with_non_target";
        case NCOutcome::NotDetected: return "not_detected";
    }
    return "not_detected";
}

namespace {

struct Adam {
    std::vector<float> m, v;
    double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    long t = 0;

    Adam(std::size_t n, double lr_) : m(n, 0.f), v(n, 0.f), lr(lr_) {}

    void step(std::vector<float>& w, const std::vector<float>& g) {
        ++t;
        const double bc1 = 1.0 - std::pow(b1, t);
        const double bc2 = 1.0 - std::pow(b2, t);
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = static_cast<float>(b1 * m[i] + (1 - b1) * g[i]);
            v[i] = static_cast<float>(b2 * v[i] + (1 - b2) * g[i] * g[i]);
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            w[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + eps));
        }
    }
};

float safe_atanh(float v) {
    v = std::clamp(v, -1.f + 1e-6f, 1.f - 1e-6f);
    return 0.5f * std::log((1.f + v) / (1.f - v));
}

struct TriggerVars {
    std::vector<float> wm, wd;     // pre-tanh
    std::vector<float> mask, pat;  // tanh-mapped to [0,1]
    int h, w, ch;

    TriggerVars(int channels, int height, int width, float m0, float p0)
        : wm(static_cast<std::size_t>(height) * width, safe_atanh(2.f * m0 - 1.f)),
          wd(static_cast<std::size_t>(channels) * height * width, safe_atanh(2.f * p0 - 1.f)),
          mask(wm.size()), pat(wd.size()), h(height), w(width), ch(channels) {
        refresh();
    }

    void refresh() {
        for (std::size_t i = 0; i < wm.size(); ++i) mask[i] = 0.5f * (std::tanh(wm[i]) + 1.f);
        for (std::size_t i = 0; i < wd.size(); ++i) pat[i] = 0.5f * (std::tanh(wd[i]) + 1.f);
    }

    double l1() const {
        double s = 0.0;
        for (float v : mask) s += v;  // mask is non-negative by construction
        return s;
    }

    Image mask_image() const {
        Image im(1, h, w);
        im.data.assign(mask.begin(), mask.end());
        return im;
    }
    Image pattern_image() const {
        Image im(ch, h, w);
        im.data.assign(pat.begin(), pat.end());
        return im;
    }
};

// fraction of images the trigger routes to the target class
double full_asr(Net& net, const std::vector<const Image*>& calib, const TriggerVars& tv,
                int class_id, int batch_size) {
    std::size_t hits = 0;
    const std::size_t plane = static_cast<std::size_t>(tv.h) * tv.w;
    for (std::size_t off = 0; off < calib.size(); off += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(calib.size(), off + static_cast<std::size_t>(batch_size));
        Tensor x(static_cast<int>(end - off), tv.ch, tv.h, tv.w);
        for (std::size_t i = off; i < end; ++i) {
            float* dst = x.sample(static_cast<int>(i - off));
            const float* src = calib[i]->data.data();
            for (int c = 0; c < tv.ch; ++c)
                for (std::size_t p = 0; p < plane; ++p) {
                    const float m = tv.mask[p];
                    dst[c * plane + p] = (1.f - m) * src[c * plane + p] + m * tv.pat[c * plane + p];
                }
        }
        Tensor logits = net.forward(x, false);
        for (int i = 0; i < logits.n; ++i) {
            const float* row = logits.v.data() + static_cast<std::size_t>(i) * logits.c;
            int best = 0;
            for (int j = 1; j < logits.c; ++j)
                if (row[j] > row[best]) best = j;
            if (best == class_id) ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(calib.size());
}

}  // namespace

ReversedTrigger reverse_engineer(ModelArtifact& model, int class_id,
                                 const std::vector<LabeledImage>& calibration,
                                 const NCConfig& config) {
    if (calibration.empty()) throw std::invalid_argument("reverse_engineer: empty calibration set");
    if (class_id < 0 || class_id >= model.spec.class_count)
        throw std::invalid_argument("reverse_engineer: class_id out of range");

    auto worker = model.clone();
    Net& net = worker->net();
    const int H = model.spec.height, W = model.spec.width, CH = model.spec.in_channels;
    const int C = model.spec.class_count;
    const std::size_t plane = static_cast<std::size_t>(H) * W;

    std::vector<const Image*> calib;
    calib.reserve(calibration.size());
    for (const auto& li : calibration) calib.push_back(&li.pixels);

    TriggerVars tv(CH, H, W, static_cast<float>(config.init_mask_value),
                   static_cast<float>(config.init_pattern_value));
    Adam opt_m(tv.wm.size(), config.adam_lr);
    Adam opt_d(tv.wd.size(), config.adam_lr);

    double lambda = config.lambda_init;
    int above = 0, below = 0;

    ReversedTrigger best;
    best.class_id = class_id;
    best.l1_norm = std::numeric_limits<double>::infinity();

    std::vector<float> gm(tv.wm.size()), gd(tv.wd.size());
    Rng rng(config.seed ^ (0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(class_id) + 1)));

    ReversedTrigger result;
    result.class_id = class_id;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        std::vector<int> order(calib.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        rng.shuffle(order);

        double epoch_obj = 0.0;
        std::size_t epoch_n = 0;
        for (std::size_t off = 0; off < order.size(); off += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), off + static_cast<std::size_t>(config.batch_size));
            const int bn = static_cast<int>(end - off);

            Tensor x(bn, CH, H, W);
            for (int i = 0; i < bn; ++i) {
                const float* src = calib[static_cast<std::size_t>(order[off + static_cast<std::size_t>(i)])]->data.data();
                float* dst = x.sample(i);
                for (int c = 0; c < CH; ++c)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const float m = tv.mask[p];
                        dst[c * plane + p] =
                            (1.f - m) * src[c * plane + p] + m * tv.pat[c * plane + p];
                    }
            }

            Tensor logits = net.forward(x, false);
            Tensor grad(bn, C, 1, 1);
            double ce = 0.0;
            int hits = 0;
            for (int i = 0; i < bn; ++i) {
                const float* row = logits.v.data() + static_cast<std::size_t>(i) * C;
                float mx = row[0];
                int best_j = 0;
                for (int j = 1; j < C; ++j)
                    if (row[j] > mx) {
                        mx = row[j];
                        best_j = j;
                    }
                if (best_j == class_id) ++hits;
                double sum = 0.0;
                for (int j = 0; j < C; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
                for (int j = 0; j < C; ++j) {
                    const double p = std::exp(static_cast<double>(row[j]) - mx) / sum;
                    float g = static_cast<float>(p);
                    if (j == class_id) {
                        ce += -std::log(std::max(p, 1e-12));
                        g -= 1.f;
                    }
                    grad.v[static_cast<std::size_t>(i) * C + j] = g / static_cast<float>(bn);
                }
            }
            ce /= bn;

            Tensor gin = net.backward(grad, /*param_grads=*/false);

            std::fill(gm.begin(), gm.end(), 0.f);
            std::fill(gd.begin(), gd.end(), 0.f);
            for (int i = 0; i < bn; ++i) {
                const float* gi = gin.sample(i);
                const float* src = calib[static_cast<std::size_t>(order[off + static_cast<std::size_t>(i)])]->data.data();
                for (int c = 0; c < CH; ++c)
                    for (std::size_t p = 0; p < plane; ++p) {
                        const float g = gi[c * plane + p];
                        gd[c * plane + p] += g * tv.mask[p];
                        gm[p] += g * (tv.pat[c * plane + p] - src[c * plane + p]);
                    }
            }
            for (std::size_t p = 0; p < plane; ++p) gm[p] += static_cast<float>(lambda);

            // through the tanh box reparameterization
            for (std::size_t p = 0; p < tv.wm.size(); ++p) {
                const float t = std::tanh(tv.wm[p]);
                gm[p] *= 0.5f * (1.f - t * t);
            }
            for (std::size_t p = 0; p < tv.wd.size(); ++p) {
                const float t = std::tanh(tv.wd[p]);
                gd[p] *= 0.5f * (1.f - t * t);
            }
            opt_m.step(tv.wm, gm);
            opt_d.step(tv.wd, gd);
            tv.refresh();

            const double asr = static_cast<double>(hits) / bn;
            if (asr >= config.asr_target) {
                if (++above >= config.patience) {
                    lambda *= config.lambda_factor;
                    above = 0;
                }
                below = 0;
            } else {
                if (++below >= config.patience) {
                    lambda /= config.lambda_factor;
                    below = 0;
                }
                above = 0;
            }

            epoch_obj += (ce + lambda * tv.l1()) * bn;
            epoch_n += static_cast<std::size_t>(bn);
        }
        result.loss_trace.push_back(epoch_n ? epoch_obj / static_cast<double>(epoch_n) : 0.0);

        // epoch snapshot: keep the smallest trigger that truly reaches the target
        const double asr_now = full_asr(net, calib, tv, class_id, config.batch_size);
        const double l1_now = tv.l1();
        if (asr_now >= config.asr_target && l1_now < best.l1_norm) {
            best.mask = tv.mask_image();
            best.pattern = tv.pattern_image();
            best.l1_norm = l1_now;
            best.best_asr = asr_now;
            best.converged = true;
        }
    }

    if (best.converged) {
        result.mask = best.mask;
        result.pattern = best.pattern;
        result.l1_norm = best.l1_norm;
        result.best_asr = best.best_asr;
        result.converged = true;
    } else {
        result.mask = tv.mask_image();
        result.pattern = tv.pattern_image();
        result.l1_norm = tv.l1();
        result.best_asr = full_asr(net, calib, tv, class_id, config.batch_size);
        result.converged = false;
    }
    return result;
}

NCReport run_nc(ModelArtifact& model, const DatasetSplit& calibration, int true_target,
                const NCConfig& config) {
    if (calibration.images.empty()) throw std::invalid_argument("run_nc: empty calibration split");
    const int C = model.spec.class_count;

    // one seeded calibration subset, shared by every class
    Rng rng(config.seed);
    std::vector<int> order(calibration.images.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    rng.shuffle(order);
    const std::size_t take =
        std::min<std::size_t>(order.size(), static_cast<std::size_t>(config.calibration_count));
    std::vector<LabeledImage> calib;
    calib.reserve(take);
    for (std::size_t i = 0; i < take; ++i)
        calib.push_back(calibration.images[static_cast<std::size_t>(order[i])]);

    NCReport rep;
    rep.true_target = true_target;
    rep.triggers.resize(static_cast<std::size_t>(C));

    const int threads = std::max(1, config.threads);
    std::vector<std::future<void>> futs;
    std::atomic<int> next_class{0};
    auto work = [&]() {
        for (;;) {
            const int cls = next_class.fetch_add(1);
            if (cls >= C) break;
            rep.triggers[static_cast<std::size_t>(cls)] = reverse_engineer(model, cls, calib, config);
        }
    };
    if (threads == 1) {
        work();
    } else {
        futs.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) futs.push_back(std::async(std::launch::async, work));
        for (auto& f : futs) f.get();
    }

    std::vector<double> l1s;
    l1s.reserve(static_cast<std::size_t>(C));
    for (const auto& t : rep.triggers) l1s.push_back(t.l1_norm);
    MadResult mad = mad_anomaly(l1s);
    rep.anomaly_indices = mad.indices;
    rep.flagged = flagged_classes(mad, l1s);

    const bool target_flagged =
        std::find(rep.flagged.begin(), rep.flagged.end(), true_target) != rep.flagged.end();
    if (target_flagged)
        rep.outcome = NCOutcome::WithTarget;
    else if (!rep.flagged.empty())
        rep.outcome = NCOutcome::WithNonTarget;
    else
        rep.outcome = NCOutcome::NotDetected;
    return rep;
}

std::string NCReport::to_json() const {
    json j;
    j["schema"] = "hft.nc.v1";
    j["true_target"] = true_target;
    j["outcome"] = to_string(outcome);
    j["flagged"] = flagged;
    j["anomaly_indices"] = anomaly_indices;
    json per_class = json::array();
    for (const auto& t : triggers)
        per_class.push_back({{"class_id", t.class_id},
                             {"l1_norm", t.l1_norm},
                             {"converged", t.converged},
                             {"asr", t.best_asr}});
    j["triggers"] = per_class;
    return j.dump(2);
}

void NCReport::export_triggers(const std::string& dir) const {
    fs::create_directories(dir);
    for (const auto& t : triggers) {
        if (t.mask.data.empty()) continue;
        write_pgm((fs::path(dir) / ("mask_class_" + std::to_string(t.class_id) + ".pgm")).string(),
                  t.mask);
        write_ppm((fs::path(dir) / ("pattern_class_" + std::to_string(t.class_id) + ".ppm")).string(),
                  t.pattern);
    }
}

}  // namespace hft
