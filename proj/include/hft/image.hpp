#ifndef HFT_IMAGE_HPP
#define HFT_IMAGE_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace hft {

// Dense float image, CHW layout, values expected in [0,1].
struct Image {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<float> data;  // channels*height*width

    Image() = default;
    Image(int c, int h, int w, float fill = 0.f)
        : channels(c), height(h), width(w),
          data(static_cast<std::size_t>(c) * h * w, fill) {}

    float& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    float at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    std::size_t size() const { return data.size(); }
    bool same_shape(const Image& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Bilinear resize with half-pixel center alignment. Returns the input
// unchanged (bitwise) when the target matches the source size.
Image resize_bilinear(const Image& img, int target_h, int target_w);

// Quantize to the 8-bit grid; mirrors what disk round-trips do to pixel data.
void quantize_u8_inplace(Image& img);

// PPM (P6) / PGM (P5), binary, maxval 255. Grayscale loads replicate the
// channel. Throws std::runtime_error with the path on malformed files.
Image read_pnm(const std::string& path);
void write_ppm(const std::string& path, const Image& img);
void write_pgm(const std::string& path, const Image& img);  // first channel

}  // namespace hft

#endif
