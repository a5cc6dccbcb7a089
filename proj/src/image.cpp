#include "hft/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace hft {

Image resize_bilinear(const Image& img, int target_h, int target_w) {
    if (target_h < 1 || target_w < 1)
        throw std::invalid_argument("resize_bilinear: target dimensions must be >= 1");
    if (img.height == target_h && img.width == target_w) return img;

    Image out(img.channels, target_h, target_w);
    const double sy = static_cast<double>(img.height) / target_h;
    const double sx = static_cast<double>(img.width) / target_w;
    for (int y = 0; y < target_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        int y0 = static_cast<int>(fy);
        int y1 = std::min(y0 + 1, img.height - 1);
        double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            int x0 = static_cast<int>(fx);
            int x1 = std::min(x0 + 1, img.width - 1);
            double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                double top = (1.0 - wx) * img.at(c, y0, x0) + wx * img.at(c, y0, x1);
                double bot = (1.0 - wx) * img.at(c, y1, x0) + wx * img.at(c, y1, x1);
                double v = (1.0 - wy) * top + wy * bot;
                out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
        }
    }
    return out;
}

void quantize_u8_inplace(Image& img) {
    for (float& v : img.data) {
        float q = std::round(std::clamp(v, 0.f, 1.f) * 255.f);
        v = q / 255.f;
    }
}

namespace {

int read_pnm_int(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments per the PNM grammar
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch))
        throw std::runtime_error("malformed PNM header: " + path);
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = in.get();
    }
    return value;
}

}  // namespace

Image read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open image file: " + path);
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw std::runtime_error("unsupported image format (want P5/P6 PNM): " + path);
    const int src_channels = (m1 == '6') ? 3 : 1;
    int w = read_pnm_int(in, path);
    int h = read_pnm_int(in, path);
    int maxval = read_pnm_int(in, path);
    if (w < 1 || h < 1 || maxval != 255)
        throw std::runtime_error("unsupported PNM dimensions/maxval: " + path);

    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * src_channels);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (in.gcount() != static_cast<std::streamsize>(raw.size()))
        throw std::runtime_error("truncated image payload: " + path);

    Image img(3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                std::size_t s = (static_cast<std::size_t>(y) * w + x) * src_channels +
                                (src_channels == 3 ? c : 0);
                img.at(c, y, x) = raw[s] / 255.f;
            }
    return img;
}

namespace {

unsigned char to_u8(float v) {
    return static_cast<unsigned char>(std::round(std::clamp(v, 0.f, 1.f) * 255.f));
}

}  // namespace

void write_ppm(const std::string& path, const Image& img) {
    if (img.channels != 3) throw std::invalid_argument("write_ppm: need 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image file: " + path);
    out << "P6\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(img.width) * img.height * 3);
    std::size_t i = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) raw[i++] = to_u8(img.at(c, y, x));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void write_pgm(const std::string& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write image file: " + path);
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(static_cast<std::size_t>(img.width) * img.height);
    std::size_t i = 0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) raw[i++] = to_u8(img.at(0, y, x));
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

}  // namespace hft
