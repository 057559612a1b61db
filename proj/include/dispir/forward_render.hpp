#pragma once

#include "dispir/brdf.hpp"
#include "dispir/core.hpp"
#include "dispir/scene_model.hpp"

#include <random>
#include <vector>

namespace dispir {

struct DisplayPattern {
    std::vector<Rgb> values;

    size_t size() const { return values.size(); }

    void validate(size_t expected) const {
        if (values.size() != expected)
            throw DataError("DisplayPattern: length " + std::to_string(values.size()) +
                            " does not match display N=" + std::to_string(expected));
        for (const Rgb &v : values)
            if ((v < 0.0).any() || (v > 1.0).any())
                throw DataError("DisplayPattern: values outside [0,1]");
    }
};

struct FalloffParams {
    double a = 0.0;
    double b = 1.0;
    double c = 0.0;

    // a + b d^2 is monotone in d^2, so checking the range ends suffices.
    bool positive_on(double d_min = 0.2, double d_max = 2.0) const {
        return a + b * d_min * d_min > 0.0 && a + b * d_max * d_max > 0.0;
    }
};

struct NoiseModel {
    double sigma = 0.0;
    std::uint64_t seed = 0;
};

struct Reflectance {
    BasisBrdfSet bases;
    WeightMaps weights;
};

struct OlatStack {
    std::vector<Image> images;
    std::vector<bool> clipped;

    size_t size() const { return images.size(); }
};

// L_i = s (P_i + B_i)^gamma
inline Rgb display_intensity(const Rgb &pattern_value, const DisplayModel &display, size_t index) {
    return display.s * (pattern_value + display.backlight.at(index)).pow(display.gamma);
}

inline std::vector<Rgb> pattern_radiance(const DisplayPattern &pattern, const DisplayModel &display) {
    pattern.validate(display.size());
    std::vector<Rgb> radiance(display.size());
    for (size_t i = 0; i < display.size(); ++i)
        radiance[i] = display_intensity(pattern.values[i], display, i);
    return radiance;
}

inline double falloff(double d, const FalloffParams &p) {
    if (!(d > 0.0)) throw DataError("falloff: distance must be positive");
    const double q = p.a + p.b * d * d;
    if (!(q > 0.0)) throw NumericalError("falloff: a + b d^2 <= 0");
    return 1.0 / q + p.c;
}

// Transport from superpixel `light` to pixel `pixel` under unit radiance:
// (n.i)+ f(i,o) falloff(d_i).
inline Rgb pixel_transport(const SceneMaps &scene, const Reflectance &refl, size_t pixel,
                           const Vec3 &light_position, const FalloffParams &fp) {
    const Vec3 &x = scene.points[pixel];
    const Vec3 &n = scene.normal[pixel];
    const IncidentSample in = incident_geometry(x, light_position);
    const double cos_i = n.dot(in.direction);
    if (cos_i <= 0.0) return Rgb::Zero();
    const Vec3 o = (scene.camera_center - x).normalized();
    const auto w = refl.weights.at(pixel);
    Rgb f = Rgb::Zero();
    for (size_t j = 0; j < refl.bases.size(); ++j)
        if (w[j] != 0.0) f += w[j] * eval_cook_torrance(refl.bases.bases[j], in.direction, o, n);
    return cos_i * falloff(in.distance, fp) * f;
}

inline void check_render_inputs(const SceneMaps &scene, const DisplayModel &display,
                                const Reflectance &refl) {
    const int W = scene.width(), H = scene.height();
    if (!scene.normal.same_shape(W, H) || !scene.mask.same_shape(W, H) ||
        !scene.points.same_shape(W, H))
        throw DataError("render: scene map dimensions differ");
    if (refl.weights.width() != W || refl.weights.height() != H)
        throw DataError("render: weight map dimensions differ from scene");
    if (static_cast<size_t>(refl.weights.count()) != refl.bases.size())
        throw DataError("render: weight count does not match basis count");
    if (display.backlight.size() != display.size())
        throw DataError("render: display backlight length mismatch");
}

// Noise-free, unclipped image for arbitrary per-superpixel radiances.
inline Image render_radiance(const SceneMaps &scene, const DisplayModel &display,
                             const Reflectance &refl, const std::vector<Rgb> &radiance,
                             const FalloffParams &fp) {
    check_render_inputs(scene, display, refl);
    if (radiance.size() != display.size())
        throw DataError("render: radiance length does not match display N");
    Image img(scene.width(), scene.height(), 3);
    parallel_chunks(scene.mask.size(), 256, [&](size_t b, size_t e, size_t) {
        for (size_t p = b; p < e; ++p) {
            if (!scene.mask[p]) continue;
            Rgb acc = Rgb::Zero();
            for (size_t i = 0; i < radiance.size(); ++i) {
                if ((radiance[i] == 0.0).all()) continue;
                acc += pixel_transport(scene, refl, p, display.superpixel_positions[i], fp) *
                       radiance[i];
            }
            img.set_rgb(p, acc);
        }
    });
    return img;
}

// Adds N(0, sigma^2) per sample. `stream` selects an independent deterministic
// sequence so that every image of a batch gets its own noise.
inline void add_noise(Image &img, const NoiseModel &noise, std::uint64_t stream = 0) {
    if (noise.sigma < 0.0) throw DataError("NoiseModel: sigma must be >= 0");
    if (noise.sigma == 0.0) return;
    std::seed_seq seq{static_cast<std::uint32_t>(noise.seed), static_cast<std::uint32_t>(noise.seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> dist(0.0, noise.sigma);
    for (double &v : img.data()) v += dist(rng);
}

inline Image add_noise_clip(Image img, const NoiseModel &noise, std::uint64_t stream = 0) {
    add_noise(img, noise, stream);
    return clip01(std::move(img));
}

inline Image render_pattern(const SceneMaps &scene, const DisplayModel &display,
                            const Reflectance &refl, const DisplayPattern &pattern,
                            const FalloffParams &fp, const NoiseModel &noise = {},
                            bool clip = true, std::uint64_t stream = 0) {
    Image img = render_radiance(scene, display, refl, pattern_radiance(pattern, display), fp);
    add_noise(img, noise, stream);
    // Noise lands on masked pixels only.
    if (noise.sigma > 0.0)
        for (size_t p = 0; p < scene.mask.size(); ++p)
            if (!scene.mask[p]) img.set_rgb(p, Rgb::Zero());
    return clip ? clip01(std::move(img)) : img;
}

// Image k holds unit radiance at superpixel k only (backlight excluded).
inline OlatStack render_olat_stack(const SceneMaps &scene, const DisplayModel &display,
                                   const Reflectance &refl, const FalloffParams &fp,
                                   bool clip = false) {
    check_render_inputs(scene, display, refl);
    const size_t N = display.size();
    OlatStack stack;
    stack.images.assign(N, Image(scene.width(), scene.height(), 3));
    stack.clipped.assign(N, clip);
    parallel_chunks(scene.mask.size(), 256, [&](size_t b, size_t e, size_t) {
        for (size_t p = b; p < e; ++p) {
            if (!scene.mask[p]) continue;
            for (size_t k = 0; k < N; ++k)
                stack.images[k].set_rgb(
                    p, pixel_transport(scene, refl, p, display.superpixel_positions[k], fp));
        }
    });
    if (clip)
        for (auto &img : stack.images) img = clip01(std::move(img));
    return stack;
}

// I(P) = clip(sum_i I_i s (P_i + B_i)^gamma + eps)
inline Image relight(const OlatStack &stack, const DisplayPattern &pattern,
                     const DisplayModel &display, const NoiseModel &noise = {}, bool clip = true,
                     std::uint64_t stream = 0) {
    if (stack.size() != display.size())
        throw DataError("relight: stack has " + std::to_string(stack.size()) +
                        " images but display N=" + std::to_string(display.size()));
    if (stack.images.empty()) throw DataError("relight: empty stack");
    const std::vector<Rgb> radiance = pattern_radiance(pattern, display);
    const Image &first = stack.images.front();
    for (const Image &img : stack.images)
        if (!img.same_shape(first)) throw DataError("relight: stack images differ in shape");
    Image out(first.width(), first.height(), first.channels());
    const size_t npix = out.pixel_count();
    parallel_chunks(npix, 1024, [&](size_t b, size_t e, size_t) {
        for (size_t p = b; p < e; ++p) {
            Rgb acc = Rgb::Zero();
            for (size_t i = 0; i < stack.size(); ++i) acc += stack.images[i].rgb(p) * radiance[i];
            out.set_rgb(p, acc);
        }
    });
    add_noise(out, noise, stream);
    return clip ? clip01(std::move(out)) : out;
}

} // namespace dispir
