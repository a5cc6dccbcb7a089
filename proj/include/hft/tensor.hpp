#ifndef HFT_TENSOR_HPP
#define HFT_TENSOR_HPP

#include <cstddef>
#include <vector>

#include "hft/image.hpp"

namespace hft {

// NCHW float tensor.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.f) {}

    std::size_t count() const { return v.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
    std::size_t sample_stride() const { return static_cast<std::size_t>(c) * h * w; }

    float* sample(int i) { return v.data() + sample_stride() * i; }
    const float* sample(int i) const { return v.data() + sample_stride() * i; }

    bool same_shape(const Tensor& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
};

Tensor batch_from_images(const std::vector<const Image*>& imgs);
Image image_from_sample(const Tensor& t, int i);

// number of threads used for GEMM and the elementwise kernels
void set_compute_threads(int n);
int compute_threads();

}  // namespace hft

#endif
