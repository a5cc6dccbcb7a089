#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "hft/image.hpp"
#include "hft/rng.hpp"

using namespace hft;

namespace {

// independent bilinear resize used as oracle: same half-pixel convention,
// different code path (separable axis weights precomputed)
Image reference_resize(const Image& img, int th, int tw) {
    Image out(img.channels, th, tw);
    std::vector<double> wy(static_cast<std::size_t>(th)), wx(static_cast<std::size_t>(tw));
    std::vector<int> y0s(static_cast<std::size_t>(th)), x0s(static_cast<std::size_t>(tw));
    for (int y = 0; y < th; ++y) {
        double fy = (y + 0.5) * img.height / th - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
        y0s[static_cast<std::size_t>(y)] = static_cast<int>(fy);
        wy[static_cast<std::size_t>(y)] = fy - y0s[static_cast<std::size_t>(y)];
    }
    for (int x = 0; x < tw; ++x) {
        double fx = (x + 0.5) * img.width / tw - 0.5;
        fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
        x0s[static_cast<std::size_t>(x)] = static_cast<int>(fx);
        wx[static_cast<std::size_t>(x)] = fx - x0s[static_cast<std::size_t>(x)];
    }
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                const int y0 = y0s[static_cast<std::size_t>(y)];
                const int y1 = std::min(y0 + 1, img.height - 1);
                const int x0 = x0s[static_cast<std::size_t>(x)];
                const int x1 = std::min(x0 + 1, img.width - 1);
                const double ay = wy[static_cast<std::size_t>(y)], ax = wx[static_cast<std::size_t>(x)];
                out.at(c, y, x) = static_cast<float>(
                    (1 - ay) * ((1 - ax) * img.at(c, y0, x0) + ax * img.at(c, y0, x1)) +
                    ay * ((1 - ax) * img.at(c, y1, x0) + ax * img.at(c, y1, x1)));
            }
    return out;
}

}  // namespace

TEST_CASE("resize to the same size is bitwise identity") {
    Rng rng(5);
    Image img(3, 32, 32);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    Image out = resize_bilinear(img, 32, 32);
    CHECK(out.data == img.data);
}

TEST_CASE("resize of a constant image stays constant") {
    Image img(3, 17, 23, 0.37f);
    Image out = resize_bilinear(img, 32, 32);
    for (float v : out.data) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
}

TEST_CASE("resize of a gradient matches the independent implementation") {
    Image img(3, 48, 48);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x)
                img.at(c, y, x) = (y / 47.f + x / 47.f) / 2.f * (c + 1) / 3.f;
    Image got = resize_bilinear(img, 32, 32);
    Image want = reference_resize(img, 32, 32);
    for (std::size_t i = 0; i < got.data.size(); ++i)
        CHECK(std::abs(got.data[i] - want.data[i]) < 1e-5f);
}

TEST_CASE("resize rejects degenerate targets") {
    Image img(3, 4, 4, 0.5f);
    CHECK_THROWS_AS(resize_bilinear(img, 0, 4), std::invalid_argument);
}

TEST_CASE("ppm round trip preserves u8-quantized pixels") {
    Rng rng(6);
    Image img(3, 9, 7);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform());
    quantize_u8_inplace(img);
    const std::string path = std::filesystem::temp_directory_path() / "hft_img_test.ppm";
    write_ppm(path, img);
    Image back = read_pnm(path);
    CHECK(back.height == 9);
    CHECK(back.width == 7);
    CHECK(back.data == img.data);
    std::remove(path.c_str());
}

TEST_CASE("malformed image files raise errors naming the file") {
    namespace fs = std::filesystem;
    const std::string path = fs::temp_directory_path() / "hft_bad.ppm";
    {
        FILE* f = std::fopen(path.c_str(), "wb");
        std::fputs("P6\n4 4\n255\nxx", f);  // truncated payload
        std::fclose(f);
    }
    CHECK_THROWS_WITH_AS(read_pnm(path), doctest::Contains("hft_bad.ppm"), std::runtime_error);
    std::remove(path.c_str());
    CHECK_THROWS(read_pnm("/nonexistent/nope.ppm"));
}
