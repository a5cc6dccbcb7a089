#include "hft/tensor.hpp"

#include <cstring>
#include <stdexcept>

#include <Eigen/Core>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace hft {

Tensor batch_from_images(const std::vector<const Image*>& imgs) {
    if (imgs.empty()) throw std::invalid_argument("batch_from_images: empty batch");
    const Image& first = *imgs.front();
    Tensor t(static_cast<int>(imgs.size()), first.channels, first.height, first.width);
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        if (!imgs[i]->same_shape(first))
            throw std::invalid_argument("batch_from_images: mixed image shapes in batch");
        std::memcpy(t.sample(static_cast<int>(i)), imgs[i]->data.data(),
                    first.size() * sizeof(float));
    }
    return t;
}

Image image_from_sample(const Tensor& t, int i) {
    Image img(t.c, t.h, t.w);
    std::memcpy(img.data.data(), t.sample(i), t.sample_stride() * sizeof(float));
    return img;
}

namespace {
int g_threads = 1;
}

void set_compute_threads(int n) {
    g_threads = n < 1 ? 1 : n;
    Eigen::setNbThreads(g_threads);
#if defined(__GLIBC__)
    // activation buffers are tens of MB; keep them on the heap instead of
    // round-tripping through mmap/munmap on every batch
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
#endif
}

int compute_threads() { return g_threads; }

}  // namespace hft
