#include "hft/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include <Eigen/Core>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace hft {

namespace {

// Row-major buffers are viewed through column-major maps of the transposed
// shape: Eigen's GEMM kernels are several times faster on col-major operands.
using MapCM = Eigen::Map<Eigen::MatrixXf>;
using MapCCM = Eigen::Map<const Eigen::MatrixXf>;

void he_normal(std::vector<float>& w, int fan_in, Rng& rng) {
    const float s = std::sqrt(2.f / static_cast<float>(fan_in));
    for (float& v : w) v = static_cast<float>(rng.normal()) * s;
}

int thread_id() {
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

// one sample's im2col, row-per-offset layout: dst[(ci,ky,kx)][oy*ow+ox],
// i.e. the (OHW x K) column-major view with contiguous position runs
void im2col_sample(const float* xs, int c, int h, int w, int k, int stride, int pad, int oh,
                   int ow, float* dst) {
    const std::size_t ohw = static_cast<std::size_t>(oh) * ow;
    for (int ci = 0; ci < c; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* drow = dst + (static_cast<std::size_t>(ci) * k * k + ky * k + kx) * ohw;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    float* d = drow + static_cast<std::size_t>(oy) * ow;
                    if (iy < 0 || iy >= h) {
                        std::memset(d, 0, static_cast<std::size_t>(ow) * sizeof(float));
                        continue;
                    }
                    const float* src = xs + (static_cast<std::size_t>(ci) * h + iy) * w;
                    if (stride == 1) {
                        const int ox0 = std::max(0, pad - kx);
                        const int ox1 = std::min(ow, w + pad - kx);
                        if (ox0 > 0) std::memset(d, 0, static_cast<std::size_t>(ox0) * sizeof(float));
                        for (int ox = ox0; ox < ox1; ++ox) d[ox] = src[ox + kx - pad];
                        if (ox1 < ow)
                            std::memset(d + ox1, 0, static_cast<std::size_t>(ow - ox1) * sizeof(float));
                    } else {
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            d[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.f;
                        }
                    }
                }
            }
}

// Convolution via per-sample im2col + GEMM, samples in parallel. The
// per-sample buffers stay cache-resident and the (OHW x K)*(K x Cout)
// orientation writes channel planes in place, no gather/scatter pass.
class Conv2d final : public Layer {
public:
    Conv2d(int in_ch, int out_ch, int k, int stride, int pad, bool bias)
        : in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), pad_(pad), has_bias_(bias) {
        w_.w.assign(static_cast<std::size_t>(out_ch) * in_ch * k * k, 0.f);
        w_.g.assign(w_.w.size(), 0.f);
        if (has_bias_) {
            b_.w.assign(static_cast<std::size_t>(out_ch), 0.f);
            b_.g.assign(b_.w.size(), 0.f);
        }
    }

    std::string kind() const override { return "conv"; }
    int out_channels() const override { return out_ch_; }

    Tensor forward(const Tensor& x, bool) override {
        if (x.c != in_ch_) throw std::invalid_argument("conv: channel mismatch");
        x_ = x;  // kept for the weight-gradient im2col in backward
        oh_ = (x.h + 2 * pad_ - k_) / stride_ + 1;
        ow_ = (x.w + 2 * pad_ - k_) / stride_ + 1;
        const int K = in_ch_ * k_ * k_;
        const std::size_t ohw = static_cast<std::size_t>(oh_) * ow_;

        Tensor out(x.n, out_ch_, oh_, ow_);
        const int T = compute_threads();
        ensure_pool(col_pool_, T, ohw * static_cast<std::size_t>(K));
#pragma omp parallel for schedule(static) num_threads(T)
        for (int n = 0; n < x.n; ++n) {
            float* colb = col_pool_[static_cast<std::size_t>(thread_id())].data();
            im2col_sample(x.sample(n), in_ch_, x.h, x.w, k_, stride_, pad_, oh_, ow_, colb);
            // out^T (OHW x Cout) = col^T (OHW x K) * W^T (K x Cout); the
            // row-major buffers are exactly these column-major views
            MapCCM C(colb, static_cast<Eigen::Index>(ohw), K);
            MapCCM W(w_.w.data(), K, out_ch_);
            MapCM O(out.sample(n), static_cast<Eigen::Index>(ohw), out_ch_);
            O.noalias() = C * W;
            if (has_bias_) {
                float* dst = out.sample(n);
                for (int co = 0; co < out_ch_; ++co) {
                    const float bv = b_.w[static_cast<std::size_t>(co)];
                    for (std::size_t p = 0; p < ohw; ++p)
                        dst[static_cast<std::size_t>(co) * ohw + p] += bv;
                }
            }
        }
        return out;
    }

    Tensor backward(const Tensor& gout, bool param_grads) override {
        const int K = in_ch_ * k_ * k_;
        const std::size_t ohw = static_cast<std::size_t>(oh_) * ow_;
        const std::size_t ihw = static_cast<std::size_t>(x_.h) * x_.w;
        const int K2 = out_ch_ * k_ * k_;
        const int T = compute_threads();

        ensure_pool(col_pool_, T, ohw * static_cast<std::size_t>(K));
        ensure_pool(colg_pool_, T, std::max(ihw * static_cast<std::size_t>(K2),
                                            ohw * static_cast<std::size_t>(K)));
        // per-thread weight-gradient partials, reduced in thread order; with
        // a fixed thread count and static scheduling this is reproducible
        std::vector<Eigen::MatrixXf> gw_partial;
        std::vector<Eigen::VectorXf> gb_partial;
        if (param_grads) {
            gw_partial.assign(static_cast<std::size_t>(T), Eigen::MatrixXf::Zero(K, out_ch_));
            gb_partial.assign(static_cast<std::size_t>(T), Eigen::VectorXf::Zero(out_ch_));
        }

        std::vector<float> wrot;
        if (stride_ == 1) {
            // grad wrt input = gout convolved with the 180-degree-rotated
            // kernel; wrot^T laid out (K2 x Cin) column-major
            wrot.resize(static_cast<std::size_t>(K2) * in_ch_);
            for (int co = 0; co < out_ch_; ++co)
                for (int ci = 0; ci < in_ch_; ++ci)
                    for (int ky = 0; ky < k_; ++ky)
                        for (int kx = 0; kx < k_; ++kx)
                            wrot[static_cast<std::size_t>(ci) * K2 + co * k_ * k_ + ky * k_ + kx] =
                                w_.w[static_cast<std::size_t>(co) * K +
                                     (ci * k_ + (k_ - 1 - ky)) * k_ + (k_ - 1 - kx)];
        }

        Tensor gin(x_.n, in_ch_, x_.h, x_.w);
#pragma omp parallel for schedule(static) num_threads(T)
        for (int n = 0; n < x_.n; ++n) {
            const int tid = thread_id();
            // gout sample planes are already the (OHW x Cout) column-major view
            MapCCM G(gout.sample(n), static_cast<Eigen::Index>(ohw), out_ch_);

            if (param_grads) {
                float* colb = col_pool_[static_cast<std::size_t>(tid)].data();
                im2col_sample(x_.sample(n), in_ch_, x_.h, x_.w, k_, stride_, pad_, oh_, ow_, colb);
                MapCCM C(colb, static_cast<Eigen::Index>(ohw), K);
                gw_partial[static_cast<std::size_t>(tid)].noalias() += C.transpose() * G;
                if (has_bias_) gb_partial[static_cast<std::size_t>(tid)] += G.colwise().sum();
            }

            if (stride_ == 1) {
                float* colgb = colg_pool_[static_cast<std::size_t>(tid)].data();
                im2col_sample(gout.sample(n), out_ch_, oh_, ow_, k_, 1, k_ - 1 - pad_, x_.h, x_.w,
                              colgb);
                MapCCM CG(colgb, static_cast<Eigen::Index>(ihw), K2);
                MapCCM WR(wrot.data(), K2, in_ch_);
                MapCM GI(gin.sample(n), static_cast<Eigen::Index>(ihw), in_ch_);
                GI.noalias() = CG * WR;
            } else {
                float* gcolb = colg_pool_[static_cast<std::size_t>(tid)].data();
                // gcol^T (OHW x K) = G (OHW x Cout) * W (Cout x K)
                MapCCM W(w_.w.data(), K, out_ch_);
                MapCM GC(gcolb, static_cast<Eigen::Index>(ohw), K);
                GC.noalias() = G * W.transpose();
                col2im_sample(gcolb, gin.sample(n));
            }
        }

        if (param_grads) {
            for (int t = 0; t < T; ++t) {
                const auto& GW = gw_partial[static_cast<std::size_t>(t)];  // (K x Cout)
                for (int co = 0; co < out_ch_; ++co)
                    for (int k = 0; k < K; ++k)
                        w_.g[static_cast<std::size_t>(co) * K + k] += GW(k, co);
                if (has_bias_)
                    for (int co = 0; co < out_ch_; ++co)
                        b_.g[static_cast<std::size_t>(co)] += gb_partial[static_cast<std::size_t>(t)](co);
            }
        }
        return gin;
    }

    std::vector<Param*> params() override {
        if (has_bias_) return {&w_, &b_};
        return {&w_};
    }
    std::vector<std::vector<float>*> state() override {
        if (has_bias_) return {&w_.w, &b_.w};
        return {&w_.w};
    }
    void init(Rng& rng) override {
        he_normal(w_.w, in_ch_ * k_ * k_, rng);
        if (has_bias_) std::fill(b_.w.begin(), b_.w.end(), 0.f);
    }

private:
    static void ensure_pool(std::vector<std::vector<float>>& pool, int threads, std::size_t size) {
        pool.resize(static_cast<std::size_t>(threads));
        for (auto& b : pool)
            if (b.size() < size) b.resize(size);
    }

    // accumulate one sample's gcol rows back onto the padded input grid;
    // gcol is (OHW x K) column-major, so row r is contiguous over positions
    void col2im_sample(const float* gcolT, float* gs) const {
        const std::size_t ohw = static_cast<std::size_t>(oh_) * ow_;
        for (int ci = 0; ci < in_ch_; ++ci)
            for (int ky = 0; ky < k_; ++ky)
                for (int kx = 0; kx < k_; ++kx) {
                    const std::size_t r = static_cast<std::size_t>(ci) * k_ * k_ + ky * k_ + kx;
                    const float* grow = gcolT + r * ohw;
                    for (int oy = 0; oy < oh_; ++oy) {
                        const int iy = oy * stride_ + ky - pad_;
                        if (iy < 0 || iy >= x_.h) continue;
                        float* d = gs + (static_cast<std::size_t>(ci) * x_.h + iy) * x_.w;
                        const float* src = grow + static_cast<std::size_t>(oy) * ow_;
                        for (int ox = 0; ox < ow_; ++ox) {
                            const int ix = ox * stride_ + kx - pad_;
                            if (ix >= 0 && ix < x_.w) d[ix] += src[ox];
                        }
                    }
                }
    }

    int in_ch_, out_ch_, k_, stride_, pad_;
    bool has_bias_;
    Param w_, b_;
    Tensor x_;
    std::vector<std::vector<float>> col_pool_, colg_pool_;
    int oh_ = 0, ow_ = 0;
};

class BatchNorm2d final : public Layer {
public:
    explicit BatchNorm2d(int channels) : ch_(channels) {
        gamma_.w.assign(static_cast<std::size_t>(channels), 1.f);
        gamma_.g.assign(gamma_.w.size(), 0.f);
        beta_.w.assign(static_cast<std::size_t>(channels), 0.f);
        beta_.g.assign(beta_.w.size(), 0.f);
        running_mean_.assign(static_cast<std::size_t>(channels), 0.f);
        running_var_.assign(static_cast<std::size_t>(channels), 1.f);
    }

    std::string kind() const override { return "batchnorm"; }

    Tensor forward(const Tensor& x, bool train) override {
        if (x.c != ch_) throw std::invalid_argument("batchnorm: channel mismatch");
        trained_mode_ = train;
        const std::size_t plane = x.plane();
        const std::size_t m = static_cast<std::size_t>(x.n) * plane;
        Tensor out(x.n, x.c, x.h, x.w);
        invstd_.assign(static_cast<std::size_t>(ch_), 0.f);
        if (train) {
            xhat_.assign(x.count(), 0.f);
            dims_ = {x.n, x.c, x.h, x.w};
#pragma omp parallel for schedule(static) num_threads(compute_threads())
            for (int c = 0; c < ch_; ++c) {
                double mean = 0.0;
                for (int n = 0; n < x.n; ++n) {
                    const float* p = x.sample(n) + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) mean += p[i];
                }
                mean /= static_cast<double>(m);
                double var = 0.0;
                for (int n = 0; n < x.n; ++n) {
                    const float* p = x.sample(n) + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double d = p[i] - mean;
                        var += d * d;
                    }
                }
                var /= static_cast<double>(m);
                const float inv = static_cast<float>(1.0 / std::sqrt(var + kEps));
                invstd_[static_cast<std::size_t>(c)] = inv;
                const float g = gamma_.w[static_cast<std::size_t>(c)];
                const float b = beta_.w[static_cast<std::size_t>(c)];
                const float mu = static_cast<float>(mean);
                for (int n = 0; n < x.n; ++n) {
                    const float* p = x.sample(n) + static_cast<std::size_t>(c) * plane;
                    float* xh = xhat_.data() + (x.sample_stride() * n) + static_cast<std::size_t>(c) * plane;
                    float* o = out.sample(n) + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) {
                        const float v = (p[i] - mu) * inv;
                        xh[i] = v;
                        o[i] = g * v + b;
                    }
                }
                running_mean_[static_cast<std::size_t>(c)] =
                    (1.f - kMomentum) * running_mean_[static_cast<std::size_t>(c)] + kMomentum * mu;
                running_var_[static_cast<std::size_t>(c)] =
                    (1.f - kMomentum) * running_var_[static_cast<std::size_t>(c)] +
                    kMomentum * static_cast<float>(var);
            }
        } else {
#pragma omp parallel for schedule(static) num_threads(compute_threads())
            for (int c = 0; c < ch_; ++c) {
                const float inv = 1.f / std::sqrt(running_var_[static_cast<std::size_t>(c)] + kEps);
                invstd_[static_cast<std::size_t>(c)] = inv;
                const float g = gamma_.w[static_cast<std::size_t>(c)];
                const float b = beta_.w[static_cast<std::size_t>(c)];
                const float mu = running_mean_[static_cast<std::size_t>(c)];
                for (int n = 0; n < x.n; ++n) {
                    const float* p = x.sample(n) + static_cast<std::size_t>(c) * plane;
                    float* o = out.sample(n) + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) o[i] = g * (p[i] - mu) * inv + b;
                }
            }
        }
        return out;
    }

    Tensor backward(const Tensor& gout, bool param_grads) override {
        const std::size_t plane = gout.plane();
        Tensor gin(gout.n, gout.c, gout.h, gout.w);
        if (!trained_mode_) {
            // frozen stats: a per-channel affine map
            for (int c = 0; c < ch_; ++c) {
                const float scale = gamma_.w[static_cast<std::size_t>(c)] * invstd_[static_cast<std::size_t>(c)];
                for (int n = 0; n < gout.n; ++n) {
                    const float* g = gout.sample(n) + static_cast<std::size_t>(c) * plane;
                    float* o = gin.sample(n) + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) o[i] = g[i] * scale;
                }
            }
            return gin;
        }
        const std::size_t m = static_cast<std::size_t>(gout.n) * plane;
#pragma omp parallel for schedule(static) num_threads(compute_threads())
        for (int c = 0; c < ch_; ++c) {
            double dgamma = 0.0, dbeta = 0.0;
            for (int n = 0; n < gout.n; ++n) {
                const float* g = gout.sample(n) + static_cast<std::size_t>(c) * plane;
                const float* xh =
                    xhat_.data() + gout.sample_stride() * n + static_cast<std::size_t>(c) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                    dgamma += static_cast<double>(g[i]) * xh[i];
                    dbeta += g[i];
                }
            }
            if (param_grads) {
                gamma_.g[static_cast<std::size_t>(c)] += static_cast<float>(dgamma);
                beta_.g[static_cast<std::size_t>(c)] += static_cast<float>(dbeta);
            }
            const float scale = gamma_.w[static_cast<std::size_t>(c)] *
                                invstd_[static_cast<std::size_t>(c)] / static_cast<float>(m);
            const float fdg = static_cast<float>(dgamma);
            const float fdb = static_cast<float>(dbeta);
            for (int n = 0; n < gout.n; ++n) {
                const float* g = gout.sample(n) + static_cast<std::size_t>(c) * plane;
                const float* xh =
                    xhat_.data() + gout.sample_stride() * n + static_cast<std::size_t>(c) * plane;
                float* o = gin.sample(n) + static_cast<std::size_t>(c) * plane;
                for (std::size_t i = 0; i < plane; ++i)
                    o[i] = scale * (static_cast<float>(m) * g[i] - fdb - xh[i] * fdg);
            }
        }
        return gin;
    }

    std::vector<Param*> params() override { return {&gamma_, &beta_}; }
    std::vector<std::vector<float>*> state() override {
        return {&gamma_.w, &beta_.w, &running_mean_, &running_var_};
    }
    int out_channels() const override { return 0; }

private:
    static constexpr float kEps = 1e-5f;
    static constexpr float kMomentum = 0.1f;
    int ch_;
    Param gamma_, beta_;
    std::vector<float> running_mean_, running_var_;
    std::vector<float> xhat_, invstd_;
    struct {
        int n, c, h, w;
    } dims_{};
    bool trained_mode_ = false;
};

class ReLU final : public Layer {
public:
    std::string kind() const override { return "relu"; }
    Tensor forward(const Tensor& x, bool) override {
        Tensor out = x;
        for (float& v : out.v) v = v > 0.f ? v : 0.f;
        out_ = out;
        return out;
    }
    Tensor backward(const Tensor& gout, bool) override {
        Tensor gin = gout;
        for (std::size_t i = 0; i < gin.v.size(); ++i)
            if (out_.v[i] <= 0.f) gin.v[i] = 0.f;
        return gin;
    }

private:
    Tensor out_;
};

class MaxPool2 final : public Layer {
public:
    std::string kind() const override { return "maxpool"; }
    Tensor forward(const Tensor& x, bool) override {
        in_h_ = x.h;
        in_w_ = x.w;
        const int oh = x.h / 2, ow = x.w / 2;
        Tensor out(x.n, x.c, oh, ow);
        argmax_.assign(out.count(), 0);
        std::size_t oi = 0;
        for (int n = 0; n < x.n; ++n)
            for (int c = 0; c < x.c; ++c) {
                const float* p = x.sample(n) + static_cast<std::size_t>(c) * x.plane();
                for (int y = 0; y < oh; ++y)
                    for (int xx = 0; xx < ow; ++xx) {
                        int best = (2 * y) * x.w + 2 * xx;
                        float bv = p[best];
                        const int cand[3] = {(2 * y) * x.w + 2 * xx + 1,
                                             (2 * y + 1) * x.w + 2 * xx,
                                             (2 * y + 1) * x.w + 2 * xx + 1};
                        for (int ci : cand)
                            if (p[ci] > bv) {
                                bv = p[ci];
                                best = ci;
                            }
                        out.v[oi] = bv;
                        argmax_[oi] = best;
                        ++oi;
                    }
            }
        return out;
    }
    Tensor backward(const Tensor& gout, bool) override {
        Tensor gin(gout.n, gout.c, in_h_, in_w_);
        std::size_t oi = 0;
        for (int n = 0; n < gout.n; ++n)
            for (int c = 0; c < gout.c; ++c) {
                float* gp = gin.sample(n) + static_cast<std::size_t>(c) * gin.plane();
                for (std::size_t i = 0; i < gout.plane(); ++i, ++oi)
                    gp[argmax_[oi]] += gout.v[oi];
            }
        return gin;
    }

private:
    std::vector<int> argmax_;
    int in_h_ = 0, in_w_ = 0;
};

class GlobalAvgPool final : public Layer {
public:
    std::string kind() const override { return "gap"; }
    Tensor forward(const Tensor& x, bool) override {
        in_h_ = x.h;
        in_w_ = x.w;
        Tensor out(x.n, x.c, 1, 1);
        const float inv = 1.f / static_cast<float>(x.plane());
        for (int n = 0; n < x.n; ++n)
            for (int c = 0; c < x.c; ++c) {
                const float* p = x.sample(n) + static_cast<std::size_t>(c) * x.plane();
                float s = 0.f;
                for (std::size_t i = 0; i < x.plane(); ++i) s += p[i];
                out.v[static_cast<std::size_t>(n) * x.c + c] = s * inv;
            }
        return out;
    }
    Tensor backward(const Tensor& gout, bool) override {
        Tensor gin(gout.n, gout.c, in_h_, in_w_);
        const float inv = 1.f / static_cast<float>(gin.plane());
        for (int n = 0; n < gout.n; ++n)
            for (int c = 0; c < gout.c; ++c) {
                const float g = gout.v[static_cast<std::size_t>(n) * gout.c + c] * inv;
                float* p = gin.sample(n) + static_cast<std::size_t>(c) * gin.plane();
                for (std::size_t i = 0; i < gin.plane(); ++i) p[i] = g;
            }
        return gin;
    }

private:
    int in_h_ = 0, in_w_ = 0;
};

class Dense final : public Layer {
public:
    Dense(int in_f, int out_f) : in_f_(in_f), out_f_(out_f) {
        // stored [in][out] row-major, i.e. a (out x in) column-major matrix
        w_.w.assign(static_cast<std::size_t>(out_f) * in_f, 0.f);
        w_.g.assign(w_.w.size(), 0.f);
        b_.w.assign(static_cast<std::size_t>(out_f), 0.f);
        b_.g.assign(b_.w.size(), 0.f);
    }
    std::string kind() const override { return "dense"; }

    Tensor forward(const Tensor& x, bool) override {
        if (static_cast<int>(x.sample_stride()) != in_f_)
            throw std::invalid_argument("dense: feature size mismatch");
        in_dims_ = {x.n, x.c, x.h, x.w};
        x_ = x.v;
        Tensor out(x.n, out_f_, 1, 1);
        MapCCM X(x_.data(), in_f_, x.n);      // x^T view
        MapCCM W(w_.w.data(), out_f_, in_f_);
        MapCM O(out.v.data(), out_f_, x.n);   // out^T view
        O.noalias() = W * X;
        for (int n = 0; n < x.n; ++n)
            for (int o = 0; o < out_f_; ++o)
                out.v[static_cast<std::size_t>(n) * out_f_ + o] += b_.w[static_cast<std::size_t>(o)];
        return out;
    }

    Tensor backward(const Tensor& gout, bool param_grads) override {
        const int n = gout.n;
        MapCCM G(gout.v.data(), out_f_, n);  // gout^T view
        if (param_grads) {
            MapCCM X(x_.data(), in_f_, n);
            MapCM GW(w_.g.data(), out_f_, in_f_);
            GW.noalias() += G * X.transpose();
            for (int o = 0; o < out_f_; ++o) b_.g[static_cast<std::size_t>(o)] += G.row(o).sum();
        }
        Tensor gin(in_dims_.n, in_dims_.c, in_dims_.h, in_dims_.w);
        MapCCM W(w_.w.data(), out_f_, in_f_);
        MapCM GI(gin.v.data(), in_f_, n);  // gin^T view
        GI.noalias() = W.transpose() * G;
        return gin;
    }

    std::vector<Param*> params() override { return {&w_, &b_}; }
    std::vector<std::vector<float>*> state() override { return {&w_.w, &b_.w}; }
    void init(Rng& rng) override {
        he_normal(w_.w, in_f_, rng);
        std::fill(b_.w.begin(), b_.w.end(), 0.f);
    }

private:
    int in_f_, out_f_;
    Param w_, b_;
    std::vector<float> x_;
    struct {
        int n, c, h, w;
    } in_dims_{};
};

void add_inplace(Tensor& a, const Tensor& b) {
    for (std::size_t i = 0; i < a.v.size(); ++i) a.v[i] += b.v[i];
}

// conv-bn-relu-conv-bn + shortcut, relu after the sum
class BasicBlock final : public Layer {
public:
    BasicBlock(int in_ch, int out_ch, int stride)
        : out_ch_(out_ch),
          conv1_(in_ch, out_ch, 3, stride, 1, false),
          bn1_(out_ch),
          conv2_(out_ch, out_ch, 3, 1, 1, false),
          bn2_(out_ch),
          has_shortcut_(stride != 1 || in_ch != out_ch) {
        if (has_shortcut_) {
            sconv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, false);
            sbn_ = std::make_unique<BatchNorm2d>(out_ch);
        }
    }

    std::string kind() const override { return "basic_block"; }
    int out_channels() const override { return out_ch_; }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor a = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
        Tensor b = bn2_.forward(conv2_.forward(a, train), train);
        Tensor s = has_shortcut_ ? sbn_->forward(sconv_->forward(x, train), train) : x;
        add_inplace(b, s);
        return relu_out_.forward(b, train);
    }

    Tensor backward(const Tensor& gout, bool pg) override {
        Tensor dz = relu_out_.backward(gout, pg);
        Tensor dmain = conv2_.backward(bn2_.backward(dz, pg), pg);
        dmain = conv1_.backward(bn1_.backward(relu1_.backward(dmain, pg), pg), pg);
        if (has_shortcut_) {
            Tensor ds = sconv_->backward(sbn_->backward(dz, pg), pg);
            add_inplace(dmain, ds);
        } else {
            add_inplace(dmain, dz);
        }
        return dmain;
    }

    std::vector<Param*> params() override {
        std::vector<Param*> out;
        for (Layer* l : children()) for (Param* p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<std::vector<float>*> state() override {
        std::vector<std::vector<float>*> out;
        for (Layer* l : children()) for (auto* s : l->state()) out.push_back(s);
        return out;
    }
    void init(Rng& rng) override {
        for (Layer* l : children()) l->init(rng);
    }

private:
    std::vector<Layer*> children() {
        std::vector<Layer*> out{&conv1_, &bn1_, &conv2_, &bn2_};
        if (has_shortcut_) {
            out.push_back(sconv_.get());
            out.push_back(sbn_.get());
        }
        return out;
    }

    int out_ch_;
    Conv2d conv1_;
    BatchNorm2d bn1_;
    Conv2d conv2_;
    BatchNorm2d bn2_;
    ReLU relu1_, relu_out_;
    bool has_shortcut_;
    std::unique_ptr<Conv2d> sconv_;
    std::unique_ptr<BatchNorm2d> sbn_;
};

// bn-relu-conv-bn-relu-conv with the shortcut taken from the pre-activation
class PreactBlock final : public Layer {
public:
    PreactBlock(int in_ch, int out_ch, int stride)
        : out_ch_(out_ch),
          bn1_(in_ch),
          conv1_(in_ch, out_ch, 3, stride, 1, false),
          bn2_(out_ch),
          conv2_(out_ch, out_ch, 3, 1, 1, false),
          has_shortcut_(stride != 1 || in_ch != out_ch) {
        if (has_shortcut_) sconv_ = std::make_unique<Conv2d>(in_ch, out_ch, 1, stride, 0, false);
    }

    std::string kind() const override { return "preact_block"; }
    int out_channels() const override { return out_ch_; }

    Tensor forward(const Tensor& x, bool train) override {
        Tensor p = relu1_.forward(bn1_.forward(x, train), train);
        Tensor s = has_shortcut_ ? sconv_->forward(p, train) : x;
        Tensor q = conv1_.forward(p, train);
        Tensor r = relu2_.forward(bn2_.forward(q, train), train);
        Tensor t = conv2_.forward(r, train);
        add_inplace(t, s);
        return t;
    }

    Tensor backward(const Tensor& gout, bool pg) override {
        Tensor dmain = conv2_.backward(gout, pg);
        dmain = conv1_.backward(bn2_.backward(relu2_.backward(dmain, pg), pg), pg);
        if (has_shortcut_) {
            Tensor ds = sconv_->backward(gout, pg);
            add_inplace(dmain, ds);
        }
        Tensor dx = bn1_.backward(relu1_.backward(dmain, pg), pg);
        if (!has_shortcut_) add_inplace(dx, gout);
        return dx;
    }

    std::vector<Param*> params() override {
        std::vector<Param*> out;
        for (Layer* l : children()) for (Param* p : l->params()) out.push_back(p);
        return out;
    }
    std::vector<std::vector<float>*> state() override {
        std::vector<std::vector<float>*> out;
        for (Layer* l : children()) for (auto* s : l->state()) out.push_back(s);
        return out;
    }
    void init(Rng& rng) override {
        for (Layer* l : children()) l->init(rng);
    }

private:
    std::vector<Layer*> children() {
        std::vector<Layer*> out{&bn1_, &conv1_, &bn2_, &conv2_};
        if (has_shortcut_) out.push_back(sconv_.get());
        return out;
    }

    int out_ch_;
    BatchNorm2d bn1_;
    Conv2d conv1_;
    BatchNorm2d bn2_;
    Conv2d conv2_;
    ReLU relu1_, relu2_;
    bool has_shortcut_;
    std::unique_ptr<Conv2d> sconv_;
};

}  // namespace

Tensor Net::forward(const Tensor& x, bool train, int tap_layer, Tensor* tap) {
    if (masks_.size() != layers_.size()) masks_.resize(layers_.size());
    Tensor cur = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        cur = layers_[i]->forward(cur, train);
        const auto& mask = masks_[i];
        if (!mask.empty()) {
            if (static_cast<int>(mask.size()) != cur.c)
                throw std::invalid_argument("channel mask size mismatch at layer " + std::to_string(i));
            for (int n = 0; n < cur.n; ++n)
                for (int c = 0; c < cur.c; ++c) {
                    float* p = cur.sample(n) + static_cast<std::size_t>(c) * cur.plane();
                    const float mv = mask[static_cast<std::size_t>(c)];
                    for (std::size_t j = 0; j < cur.plane(); ++j) p[j] *= mv;
                }
        }
        if (static_cast<int>(i) == tap_layer && tap) *tap = cur;
    }
    return cur;
}

Tensor Net::backward(const Tensor& grad_logits, bool param_grads) {
    if (masks_.size() != layers_.size()) masks_.resize(layers_.size());
    Tensor g = grad_logits;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        const auto& mask = masks_[i];
        if (!mask.empty()) {
            for (int n = 0; n < g.n; ++n)
                for (int c = 0; c < g.c; ++c) {
                    float* p = g.sample(n) + static_cast<std::size_t>(c) * g.plane();
                    const float mv = mask[static_cast<std::size_t>(c)];
                    for (std::size_t j = 0; j < g.plane(); ++j) p[j] *= mv;
                }
        }
        g = layers_[i]->backward(g, param_grads);
    }
    return g;
}

std::vector<Param*> Net::params() {
    std::vector<Param*> out;
    for (auto& l : layers_) for (Param* p : l->params()) out.push_back(p);
    return out;
}

std::vector<std::vector<float>*> Net::state() {
    std::vector<std::vector<float>*> out;
    for (auto& l : layers_) for (auto* s : l->state()) out.push_back(s);
    return out;
}

void Net::init(Rng& rng) {
    for (auto& l : layers_) l->init(rng);
}

std::vector<int> Net::conv_layer_ids() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < layers_.size(); ++i)
        if (layers_[i]->out_channels() > 0) out.push_back(static_cast<int>(i));
    return out;
}

int Net::last_conv_layer() const {
    auto ids = conv_layer_ids();
    if (ids.empty()) throw std::runtime_error("model has no convolutional layers");
    return ids.back();
}

void Net::set_channel_mask(int layer_id, std::vector<float> mask) {
    if (masks_.size() != layers_.size()) masks_.resize(layers_.size());
    if (layer_id < 0 || layer_id >= static_cast<int>(layers_.size()))
        throw std::invalid_argument("set_channel_mask: layer id out of range");
    masks_[static_cast<std::size_t>(layer_id)] = std::move(mask);
}

void Net::clear_channel_masks() {
    masks_.assign(layers_.size(), {});
}

std::unique_ptr<Layer> make_conv(int in_ch, int out_ch, int ksize, int stride, int pad, bool bias) {
    return std::make_unique<Conv2d>(in_ch, out_ch, ksize, stride, pad, bias);
}
std::unique_ptr<Layer> make_batchnorm(int channels) { return std::make_unique<BatchNorm2d>(channels); }
std::unique_ptr<Layer> make_relu() { return std::make_unique<ReLU>(); }
std::unique_ptr<Layer> make_maxpool2() { return std::make_unique<MaxPool2>(); }
std::unique_ptr<Layer> make_global_avgpool() { return std::make_unique<GlobalAvgPool>(); }
std::unique_ptr<Layer> make_dense(int in_features, int out_features) {
    return std::make_unique<Dense>(in_features, out_features);
}
std::unique_ptr<Layer> make_basic_block(int in_ch, int out_ch, int stride) {
    return std::make_unique<BasicBlock>(in_ch, out_ch, stride);
}
std::unique_ptr<Layer> make_preact_block(int in_ch, int out_ch, int stride) {
    return std::make_unique<PreactBlock>(in_ch, out_ch, stride);
}

std::string to_string(Arch a) {
    switch (a) {
        case Arch::SmallCnn: return "small_cnn";
        case Arch::PreactResnet18: return "preact_resnet18";
        case Arch::Resnet34: return "resnet34";
    }
    return "small_cnn";
}

Arch arch_from_string(const std::string& s) {
    if (s == "small_cnn") return Arch::SmallCnn;
    if (s == "preact_resnet18") return Arch::PreactResnet18;
    if (s == "resnet34") return Arch::Resnet34;
    throw std::invalid_argument("unknown architecture: " + s);
}

Net build_model(const ModelSpec& spec) {
    Net net;
    const int C = spec.class_count;
    switch (spec.arch) {
        case Arch::SmallCnn: {
            if (spec.height % 4 != 0 || spec.width % 4 != 0)
                throw std::invalid_argument("small_cnn wants dimensions divisible by 4");
            net.add(make_conv(spec.in_channels, 16, 3, 1, 1));
            net.add(make_batchnorm(16));
            net.add(make_relu());
            net.add(make_conv(16, 16, 3, 1, 1));
            net.add(make_batchnorm(16));
            net.add(make_relu());
            net.add(make_maxpool2());
            net.add(make_conv(16, 32, 3, 1, 1));
            net.add(make_batchnorm(32));
            net.add(make_relu());
            net.add(make_conv(32, 32, 3, 1, 1));
            net.add(make_batchnorm(32));
            net.add(make_relu());
            net.add(make_maxpool2());
            net.add(make_dense(32 * (spec.height / 4) * (spec.width / 4), 128));
            net.add(make_relu());
            net.add(make_dense(128, C));
            break;
        }
        case Arch::PreactResnet18: {
            net.add(make_conv(spec.in_channels, 64, 3, 1, 1));
            const int plan[4][2] = {{64, 1}, {128, 2}, {256, 2}, {512, 2}};
            int in_ch = 64;
            for (auto& [ch, stride] : plan) {
                net.add(make_preact_block(in_ch, ch, stride));
                net.add(make_preact_block(ch, ch, 1));
                in_ch = ch;
            }
            net.add(make_batchnorm(512));
            net.add(make_relu());
            net.add(make_global_avgpool());
            net.add(make_dense(512, C));
            break;
        }
        case Arch::Resnet34: {
            net.add(make_conv(spec.in_channels, 64, 3, 1, 1));
            net.add(make_batchnorm(64));
            net.add(make_relu());
            const int counts[4] = {3, 4, 6, 3};
            const int chans[4] = {64, 128, 256, 512};
            int in_ch = 64;
            for (int s = 0; s < 4; ++s) {
                for (int b = 0; b < counts[s]; ++b) {
                    const int stride = (s > 0 && b == 0) ? 2 : 1;
                    net.add(make_basic_block(in_ch, chans[s], stride));
                    in_ch = chans[s];
                }
            }
            net.add(make_global_avgpool());
            net.add(make_dense(512, C));
            break;
        }
    }
    return net;
}

}  // namespace hft
