#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "hft/neural_cleanse.hpp"
#include "hft/rng.hpp"
#include "hft/train.hpp"

using namespace hft;

namespace {

// brute-force oracle: median by sorting, MAD by definition
std::pair<std::vector<double>, double> mad_oracle(std::vector<double> v) {
    auto med = [](std::vector<double> s) {
        std::sort(s.begin(), s.end());
        const std::size_t n = s.size();
        return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
    };
    const double m = med(v);
    std::vector<double> dev;
    for (double x : v) dev.push_back(std::abs(x - m));
    const double mad = 1.4826 * med(dev);
    std::vector<double> idx;
    for (double d : dev) idx.push_back(mad > 0 ? d / mad : 0.0);
    return {idx, m};
}

}  // namespace

TEST_CASE("mad_anomaly hand example: [10,11,9,10,1] flags class 4") {
    std::vector<double> l1{10, 11, 9, 10, 1};
    MadResult res = mad_anomaly(l1);
    CHECK(res.median == doctest::Approx(10.0));
    CHECK(res.mad == doctest::Approx(1.4826));
    CHECK(res.indices[4] == doctest::Approx(9.0 / 1.4826).epsilon(1e-12));
    CHECK(res.indices[4] > 2.0);
    auto flagged = flagged_classes(res, l1);
    CHECK(flagged == std::vector<int>{4});
}

TEST_CASE("mad_anomaly: all-equal norms degenerate, nothing flagged") {
    std::vector<double> l1{5, 5, 5, 5};
    MadResult res = mad_anomaly(l1);
    CHECK(res.degenerate);
    CHECK(flagged_classes(res, l1).empty());
    CHECK_THROWS_AS(mad_anomaly({1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("flagging requires strict index > 2 on the low side") {
    // construct index exactly 2: dev = 2 * mad
    // values {0, 10, 20} -> med 10, mad 1.4826*10; dev(0) = 10 -> idx 0.6745
    // instead craft: {8, 10, 12, 10, 10 - 2*1.4826*?}; simpler functional check:
    std::vector<double> l1{10, 10, 12, 8, 10};
    MadResult res = mad_anomaly(l1);
    for (std::size_t i = 0; i < l1.size(); ++i) {
        const bool flagged =
            std::find(flagged_classes(res, l1).begin(), flagged_classes(res, l1).end(),
                      static_cast<int>(i)) != flagged_classes(res, l1).end();
        const bool should = res.indices[i] > 2.0 && l1[i] < res.median;
        CHECK(flagged == should);
    }

    // high-side outlier (large L1) must NOT be flagged
    std::vector<double> high{10, 11, 9, 10, 40};
    MadResult res_high = mad_anomaly(high);
    CHECK(res_high.indices[4] > 2.0);
    CHECK(flagged_classes(res_high, high).empty());
}

TEST_CASE("mad_anomaly matches the brute-force oracle on 100 random vectors") {
    Rng rng(500);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = rng.range_int(3, 20);
        std::vector<double> v;
        for (int i = 0; i < n; ++i) v.push_back(rng.uniform(0.0, 100.0));
        auto [want_idx, want_med] = mad_oracle(v);
        MadResult res = mad_anomaly(v);
        CHECK(res.median == doctest::Approx(want_med).epsilon(1e-12));
        if (!res.degenerate)
            for (int i = 0; i < n; ++i)
                CHECK(res.indices[static_cast<std::size_t>(i)] ==
                      doctest::Approx(want_idx[static_cast<std::size_t>(i)]).epsilon(1e-9));
    }
}

TEST_CASE("mad anomaly indices are scale-invariant") {
    Rng rng(501);
    std::vector<double> v;
    for (int i = 0; i < 9; ++i) v.push_back(rng.uniform(1.0, 50.0));
    MadResult base = mad_anomaly(v);
    for (double c : {0.1, 3.0, 1234.5}) {
        std::vector<double> scaled;
        for (double x : v) scaled.push_back(c * x);
        MadResult res = mad_anomaly(scaled);
        for (std::size_t i = 0; i < v.size(); ++i)
            CHECK(res.indices[i] == doctest::Approx(base.indices[i]).epsilon(1e-9));
    }
}

TEST_CASE("apply_trigger algebra: m=1 gives the pattern, m=0 the image") {
    Rng rng(502);
    Image x(3, 8, 8), pattern(3, 8, 8);
    for (auto& v : x.data) v = static_cast<float>(rng.uniform());
    for (auto& v : pattern.data) v = static_cast<float>(rng.uniform());
    Image ones(1, 8, 8, 1.f), zeros(1, 8, 8, 0.f);
    CHECK(apply_trigger(x, ones, pattern).data == pattern.data);
    CHECK(apply_trigger(x, zeros, pattern).data == x.data);

    Image half(1, 8, 8, 0.5f);
    Image mixed = apply_trigger(x, half, pattern);
    for (std::size_t i = 0; i < x.data.size(); ++i)
        CHECK(mixed.data[i] == doctest::Approx(0.5f * (x.data[i] + pattern.data[i])).epsilon(1e-6));
}

TEST_CASE("reverse_engineer with zero epochs returns the near-zero init trigger") {
    ModelSpec spec;
    spec.height = 8;
    spec.width = 8;
    spec.class_count = 3;
    ModelArtifact model(spec);
    Rng rng(7);
    model.net().init(rng);

    std::vector<LabeledImage> calib;
    for (int i = 0; i < 4; ++i) {
        LabeledImage li;
        li.pixels = Image(3, 8, 8, 0.5f);
        li.label = 0;
        li.source_id = "c" + std::to_string(i);
        calib.push_back(std::move(li));
    }
    NCConfig cfg;
    cfg.epochs = 0;
    cfg.init_mask_value = 0.0;
    ReversedTrigger trig = reverse_engineer(model, 1, calib, cfg);
    CHECK(trig.l1_norm < 1e-2);
    CHECK_FALSE(trig.converged);
    // stored l1 matches a recomputation from the mask
    double l1 = 0;
    for (float v : trig.mask.data) l1 += std::abs(v);
    CHECK(std::abs(l1 - trig.l1_norm) < 1e-4);
}

TEST_CASE("nc outcome classification from flags") {
    // the outcome rule: with_target iff target flagged; with_non_target iff
    // flags exist without the target; not_detected iff no flags
    CHECK(to_string(NCOutcome::WithTarget) == "with_target");
    CHECK(to_string(NCOutcome::WithNonTarget) == "with_non_target");
    CHECK(to_string(NCOutcome::NotDetected) == "not_detected");
}
