#include "hft/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>

#include "hft/rng.hpp"

namespace hft {

namespace {

struct Rgb {
    float r, g, b;
};

float luminance(const Rgb& c) { return 0.299f * c.r + 0.587f * c.g + 0.114f * c.b; }

Rgb random_color(Rng& rng) {
    return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()),
            static_cast<float>(rng.uniform())};
}

// soft-edge coverage from a signed distance, ~1px anti-aliasing band
float coverage(float sdf) { return std::clamp(0.5f - sdf / 1.2f, 0.f, 1.f); }

void fill_gradient(Image& img, const Rgb& a, const Rgb& b, float angle) {
    const float ca = std::cos(angle), sa = std::sin(angle);
    const float diag = static_cast<float>(img.width + img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            float t = 0.5f + (ca * (x - img.width * 0.5f) + sa * (y - img.height * 0.5f)) / diag;
            t = std::clamp(t, 0.f, 1.f);
            img.at(0, y, x) = a.r + t * (b.r - a.r);
            img.at(1, y, x) = a.g + t * (b.g - a.g);
            img.at(2, y, x) = a.b + t * (b.b - a.b);
        }
}

void add_noise(Image& img, Rng& rng, float sigma) {
    for (float& v : img.data)
        v = std::clamp(v + static_cast<float>(rng.normal()) * sigma, 0.f, 1.f);
}

void blend_pixel(Image& img, int y, int x, const Rgb& c, float cov) {
    if (cov <= 0.f) return;
    img.at(0, y, x) += cov * (c.r - img.at(0, y, x));
    img.at(1, y, x) += cov * (c.g - img.at(1, y, x));
    img.at(2, y, x) += cov * (c.b - img.at(2, y, x));
}

// ---- signed distances around origin ------------------------------------

float sdf_circle(float dx, float dy, float r) { return std::sqrt(dx * dx + dy * dy) - r; }

float sdf_diamond(float dx, float dy, float r) { return (std::abs(dx) + std::abs(dy)) / std::numbers::sqrt2_v<float> - r; }

float sdf_octagon(float dx, float dy, float r) {
    float ax = std::abs(dx), ay = std::abs(dy);
    return std::max(std::max(ax, ay), (ax + ay) / std::numbers::sqrt2_v<float>) - r * 0.92f;
}

float sdf_box(float dx, float dy, float hx, float hy) {
    return std::max(std::abs(dx) - hx, std::abs(dy) - hy);
}

// equilateral triangle pointing up (flip dy for down)
float sdf_triangle(float dx, float dy, float r) {
    const float k = std::sqrt(3.f);
    float d1 = dy - r * 0.5f;                      // bottom edge
    float d2 = (k * dx - dy) * 0.5f - r * 0.5f;    // right edge
    float d3 = (-k * dx - dy) * 0.5f - r * 0.5f;   // left edge
    return std::max(d1, std::max(d2, d3));
}

void rotate(float& dx, float& dy, float angle) {
    float c = std::cos(angle), s = std::sin(angle);
    float nx = c * dx - s * dy, ny = s * dx + c * dy;
    dx = nx;
    dy = ny;
}

// ---- shapes family -------------------------------------------------------

void draw_shapes_motif(Image& img, int cls, Rng& rng) {
    const int W = img.width, H = img.height;
    Rgb bg_a = random_color(rng), bg_b = random_color(rng);
    fill_gradient(img, bg_a, bg_b, static_cast<float>(rng.uniform(0, 2 * std::numbers::pi)));

    Rgb fg = random_color(rng);
    float bg_lum = 0.5f * (luminance(bg_a) + luminance(bg_b));
    for (int tries = 0; tries < 32 && std::abs(luminance(fg) - bg_lum) < 0.3f; ++tries)
        fg = random_color(rng);

    const float cx = W * 0.5f + static_cast<float>(rng.uniform(-4.0, 4.0));
    const float cy = H * 0.5f + static_cast<float>(rng.uniform(-4.0, 4.0));
    const float r = W * static_cast<float>(rng.uniform(0.30, 0.44));
    const float rot = static_cast<float>(rng.uniform(-0.18, 0.18));
    const float phase = static_cast<float>(rng.uniform(0.0, 16.0));
    const float period = static_cast<float>(rng.uniform(5.0, 8.0));

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float dx = x - cx, dy = y - cy;
            float cov = 0.f;
            switch (cls) {
                case 0:  // disk
                    cov = coverage(sdf_circle(dx, dy, r));
                    break;
                case 1: {  // ring
                    float d = sdf_circle(dx, dy, r);
                    float inner = sdf_circle(dx, dy, r * 0.55f);
                    cov = std::min(coverage(d), 1.f - coverage(inner));
                    break;
                }
                case 2: {  // axis-aligned cross
                    float bw = r * 0.28f;
                    rotate(dx, dy, rot * 0.3f);
                    cov = std::max(coverage(sdf_box(dx, dy, r, bw)),
                                   coverage(sdf_box(dx, dy, bw, r)));
                    break;
                }
                case 3:  // horizontal stripes
                    cov = (std::fmod(y + phase, period) < period * 0.5f) ? 1.f : 0.f;
                    break;
                case 4:  // vertical stripes
                    cov = (std::fmod(x + phase, period) < period * 0.5f) ? 1.f : 0.f;
                    break;
                case 5: {  // checkerboard
                    float cell = period + 1.5f;
                    int qx = static_cast<int>(std::floor((x + phase) / cell));
                    int qy = static_cast<int>(std::floor((y + phase) / cell));
                    cov = ((qx + qy) & 1) ? 1.f : 0.f;
                    break;
                }
                case 6:  // triangle up
                    rotate(dx, dy, rot);
                    cov = coverage(sdf_triangle(dx, dy, r));
                    break;
                case 7:  // diamond
                    cov = coverage(sdf_diamond(dx, dy, r * 1.2f));
                    break;
                case 8: {  // dot grid
                    float cell = 8.f + period * 0.4f;
                    float gx = std::fmod(x + phase, cell) - cell * 0.5f;
                    float gy = std::fmod(y + phase, cell) - cell * 0.5f;
                    cov = coverage(sdf_circle(gx, gy, 2.4f));
                    break;
                }
                case 9: {  // diagonal cross
                    rotate(dx, dy, std::numbers::pi_v<float> / 4 + rot * 0.3f);
                    float bw = r * 0.26f;
                    cov = std::max(coverage(sdf_box(dx, dy, r * 1.15f, bw)),
                                   coverage(sdf_box(dx, dy, bw, r * 1.15f)));
                    break;
                }
                default:
                    throw std::invalid_argument("shapes family has 10 classes");
            }
            blend_pixel(img, y, x, fg, cov);
        }
    add_noise(img, rng, 0.03f);
}

// ---- signs family --------------------------------------------------------

float sdf_plate(int shape, float dx, float dy, float r) {
    switch (shape) {
        case 0: return sdf_circle(dx, dy, r);
        case 1: return sdf_triangle(dx, dy, r * 1.15f);
        case 2: return sdf_triangle(dx, -dy, r * 1.15f);
        case 3: return sdf_diamond(dx, dy, r * 1.25f);
        default: return sdf_octagon(dx, dy, r * 1.1f);
    }
}

void draw_sign(Image& img, int cls, Rng& rng) {
    const int W = img.width, H = img.height;
    const int shape = cls / 2;    // circle, tri-up, tri-down, diamond, octagon
    const int variant = cls % 2;  // 0: red ring + light face + dark bar, 1: blue face + light dot

    Rgb scene_a = random_color(rng), scene_b = random_color(rng);
    // mute the scene so the plate dominates
    scene_a = {0.25f + 0.5f * scene_a.r, 0.25f + 0.5f * scene_a.g, 0.25f + 0.5f * scene_a.b};
    scene_b = {0.25f + 0.5f * scene_b.r, 0.25f + 0.5f * scene_b.g, 0.25f + 0.5f * scene_b.b};
    fill_gradient(img, scene_a, scene_b, static_cast<float>(rng.uniform(0, 2 * std::numbers::pi)));

    const float bright = static_cast<float>(rng.uniform(0.62, 1.0));
    Rgb red{0.82f * bright, 0.10f * bright, 0.10f * bright};
    Rgb blue{0.12f * bright, 0.25f * bright, 0.85f * bright};
    Rgb face{0.92f * bright, 0.90f * bright, 0.88f * bright};
    Rgb dark{0.10f * bright, 0.10f * bright, 0.12f * bright};

    const float cx = W * 0.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
    const float cy = H * 0.5f + static_cast<float>(rng.uniform(-3.0, 3.0));
    const float r = W * static_cast<float>(rng.uniform(0.30, 0.42));

    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            float dx = x - cx, dy = y - cy;
            float outer = sdf_plate(shape, dx, dy, r);
            float inner = sdf_plate(shape, dx, dy, r * 0.70f);
            if (variant == 0) {
                blend_pixel(img, y, x, red, coverage(outer));
                blend_pixel(img, y, x, face, coverage(inner));
                blend_pixel(img, y, x, dark,
                            coverage(sdf_box(dx, dy, r * 0.45f, r * 0.14f)));
            } else {
                blend_pixel(img, y, x, blue, coverage(outer));
                blend_pixel(img, y, x, face, coverage(sdf_circle(dx, dy, r * 0.28f)));
            }
        }
    add_noise(img, rng, 0.02f);
}

}  // namespace

SynthFamily synth_family_from_string(const std::string& s) {
    if (s == "shapes") return SynthFamily::Shapes;
    if (s == "signs") return SynthFamily::Signs;
    throw std::invalid_argument("unknown synthetic family: " + s + " (want shapes|signs)");
}

std::string to_string(SynthFamily f) {
    return f == SynthFamily::Shapes ? "shapes" : "signs";
}

DatasetSplit make_synthetic(SynthFamily family, SplitKind kind, int per_class,
                            std::uint64_t seed, int size) {
    if (per_class < 1) throw std::invalid_argument("make_synthetic: per_class must be >= 1");
    constexpr int kClasses = 10;
    DatasetSplit out;
    out.class_count = kClasses;
    out.kind = kind;
    out.dataset_name = to_string(family);
    Rng base(seed ^ (family == SynthFamily::Shapes ? 0x5368617065736673ULL : 0x5369676e73736673ULL));
    const std::uint64_t split_tag = (kind == SplitKind::Train) ? 1 : 2;

    char buf[64];
    for (int cls = 0; cls < kClasses; ++cls) {
        for (int i = 0; i < per_class; ++i) {
            Rng rng = base.fork(split_tag * 1000000007ULL + static_cast<std::uint64_t>(cls) * 1000003ULL +
                                static_cast<std::uint64_t>(i));
            LabeledImage li;
            li.pixels = Image(3, size, size);
            if (family == SynthFamily::Shapes)
                draw_shapes_motif(li.pixels, cls, rng);
            else
                draw_sign(li.pixels, cls, rng);
            quantize_u8_inplace(li.pixels);
            li.label = cls;
            std::snprintf(buf, sizeof(buf), "%s/%d/%s%05d", out.dataset_name.c_str(), cls,
                          kind == SplitKind::Train ? "tr" : "te", i);
            li.source_id = buf;
            out.images.push_back(std::move(li));
        }
    }
    std::sort(out.images.begin(), out.images.end(),
              [](const LabeledImage& a, const LabeledImage& b) { return a.source_id < b.source_id; });
    return out;
}

}  // namespace hft
