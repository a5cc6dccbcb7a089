#include <doctest.h>

#include <cmath>
#include <memory>

#include "hft/net.hpp"
#include "hft/rng.hpp"
#include "hft/tensor.hpp"

using namespace hft;

namespace {

// scalar objective: weighted sum of outputs, so dL/dout = weights
double objective(const Tensor& out, const std::vector<float>& w) {
    double s = 0.0;
    for (std::size_t i = 0; i < out.v.size(); ++i) s += static_cast<double>(out.v[i]) * w[i];
    return s;
}

// finite-difference check of input and parameter gradients
void check_gradients(Layer& layer, Tensor x, double tol = 2e-2) {
    set_compute_threads(2);
    Rng rng(1234);
    layer.init(rng);

    Tensor out = layer.forward(x, /*train=*/true);
    std::vector<float> gw(out.v.size());
    for (auto& v : gw) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    Tensor gout = out;
    gout.v = gw;

    for (Param* p : layer.params()) p->zero_grad();
    Tensor gin = layer.backward(gout, /*param_grads=*/true);

    // float32 finite differences are noisy; accept the best of two steps
    auto fd_matches = [&](auto&& eval, double analytic) {
        double best = 1e300;
        for (const float eps : {3e-3f, 1e-2f}) {
            const double fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            best = std::min(best, std::abs(fd - analytic) / (1.0 + std::abs(fd)));
        }
        return best <= tol;
    };

    // input gradient, a random subset of coordinates
    for (int trial = 0; trial < 12; ++trial) {
        const std::size_t i = static_cast<std::size_t>(rng.below(x.v.size()));
        CHECK(fd_matches(
            [&](float eps) {
                Tensor xp = x;
                xp.v[i] += eps;
                return objective(layer.forward(xp, true), gw);
            },
            gin.v[i]));
    }

    // parameter gradients
    layer.forward(x, true);  // restore caches for the unperturbed input
    for (Param* p : layer.params()) {
        for (int trial = 0; trial < 8; ++trial) {
            const std::size_t i = static_cast<std::size_t>(rng.below(p->w.size()));
            const float saved = p->w[i];
            CHECK(fd_matches(
                [&](float eps) {
                    p->w[i] = saved + eps;
                    const double f = objective(layer.forward(x, true), gw);
                    p->w[i] = saved;
                    return f;
                },
                p->g[i]));
        }
    }
}

Tensor random_input(int n, int c, int h, int w, std::uint64_t seed) {
    Rng rng(seed);
    Tensor x(n, c, h, w);
    for (auto& v : x.v) v = static_cast<float>(rng.uniform());
    return x;
}

}  // namespace

TEST_CASE("conv gradients (stride 1, padded)") {
    auto conv = make_conv(3, 4, 3, 1, 1, /*bias=*/true);
    check_gradients(*conv, random_input(3, 3, 8, 8, 7));
}

TEST_CASE("conv gradients (stride 2)") {
    auto conv = make_conv(4, 6, 3, 2, 1);
    check_gradients(*conv, random_input(2, 4, 8, 8, 8));
}

TEST_CASE("conv gradients (1x1 shortcut shape)") {
    auto conv = make_conv(4, 8, 1, 2, 0);
    check_gradients(*conv, random_input(2, 4, 8, 8, 9));
}

TEST_CASE("batchnorm gradients (train mode)") {
    auto bn = make_batchnorm(5);
    check_gradients(*bn, random_input(4, 5, 6, 6, 10));
}

TEST_CASE("dense gradients") {
    auto dense = make_dense(4 * 3 * 3, 7);
    check_gradients(*dense, random_input(5, 4, 3, 3, 11));
}

TEST_CASE("residual block gradients") {
    // composite blocks run the probe through several ReLUs whose kinks the
    // finite differences straddle, so the tolerance is looser than for the
    // individually-checked primitive layers above
    auto block = make_basic_block(4, 8, 2);
    check_gradients(*block, random_input(2, 4, 8, 8, 12), 0.15);
    auto preact = make_preact_block(4, 4, 1);
    check_gradients(*preact, random_input(2, 4, 8, 8, 13), 0.15);
}

TEST_CASE("maxpool forwards the max and routes gradient to it") {
    auto pool = make_maxpool2();
    Tensor x(1, 1, 2, 2);
    x.v = {1.f, 5.f, 3.f, 2.f};
    Tensor y = pool->forward(x, true);
    CHECK(y.v.size() == 1);
    CHECK(y.v[0] == 5.f);
    Tensor g(1, 1, 1, 1);
    g.v = {2.f};
    Tensor gin = pool->backward(g, true);
    CHECK(gin.v == std::vector<float>{0.f, 2.f, 0.f, 0.f});
}

TEST_CASE("batchnorm eval mode uses running stats and is affine") {
    auto bn = make_batchnorm(2);
    // train once so running stats move away from the defaults
    Tensor x = random_input(8, 2, 4, 4, 21);
    bn->forward(x, true);
    Tensor probe = random_input(2, 2, 4, 4, 22);
    Tensor y1 = bn->forward(probe, false);
    Tensor y2 = bn->forward(probe, false);
    CHECK(y1.v == y2.v);
    // eval backward: dx = dy * gamma * invstd, linear in dy
    Tensor g = random_input(2, 2, 4, 4, 23);
    Tensor gin = bn->backward(g, false);
    Tensor g2 = g;
    for (auto& v : g2.v) v *= 2.f;
    Tensor gin2 = bn->backward(g2, false);
    for (std::size_t i = 0; i < gin.v.size(); ++i)
        CHECK(gin2.v[i] == doctest::Approx(2.f * gin.v[i]).epsilon(1e-5));
}

TEST_CASE("network forward shapes and channel masks") {
    ModelSpec spec;
    spec.class_count = 7;
    Net net = build_model(spec);
    Rng rng(3);
    net.init(rng);
    Tensor x = random_input(2, 3, 32, 32, 33);
    Tensor logits = net.forward(x, false);
    CHECK(logits.n == 2);
    CHECK(logits.c == 7);

    const int last_conv = net.last_conv_layer();
    const int channels = net.layer(last_conv).out_channels();
    CHECK(channels == 32);

    // zeroing every channel of the last conv freezes the logits to the
    // constant produced by the biases downstream
    std::vector<float> mask(static_cast<std::size_t>(channels), 0.f);
    net.set_channel_mask(last_conv, mask);
    Tensor z1 = net.forward(x, false);
    for (int j = 0; j < z1.c; ++j)
        CHECK(z1.v[static_cast<std::size_t>(j)] ==
              doctest::Approx(z1.v[static_cast<std::size_t>(z1.c + j)]).epsilon(1e-5));
    net.clear_channel_masks();
    Tensor z2 = net.forward(x, false);
    CHECK(std::abs(z2.v[0] - logits.v[0]) < 1e-5f);
}

TEST_CASE("resnet variants build and run") {
    for (Arch arch : {Arch::PreactResnet18, Arch::Resnet34}) {
        ModelSpec spec;
        spec.arch = arch;
        spec.class_count = 5;
        Net net = build_model(spec);
        Rng rng(4);
        net.init(rng);
        Tensor x = random_input(1, 3, 32, 32, 44);
        Tensor logits = net.forward(x, false);
        CHECK(logits.c == 5);
        for (float v : logits.v) CHECK(std::isfinite(v));
    }
}
