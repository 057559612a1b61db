#pragma once

// Independent oracles shared by the unit tests and the acceptance binary.

#include "dispir/dispir.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

using namespace dispir;

inline constexpr double kFdStep = 1e-4;
// Relative error is measured against max(|a|, |b|, kRelFloor) so that
// derivatives that vanish analytically are judged on an absolute scale.
inline constexpr double kRelFloor = 1e-3;

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), kRelFloor});
}

inline Vec3 random_unit(std::mt19937_64 &rng) {
    std::normal_distribution<double> g;
    Vec3 v(g(rng), g(rng), g(rng));
    return v.normalized();
}

// Random direction on the hemisphere around n with n.v >= min_cos.
inline Vec3 random_hemisphere(std::mt19937_64 &rng, const Vec3 &n, double min_cos) {
    for (;;) {
        const Vec3 v = random_unit(rng);
        if (v.dot(n) >= min_cos) return v;
    }
}

inline Vec3 any_tangent(const Vec3 &n) {
    const Vec3 a = std::abs(n.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    return n.cross(a).normalized();
}

struct GradConfig {
    BasisBrdfSet set;
    std::vector<double> w;
    Vec3 i, o, n;
};

// Roughness stays in [0.1, 1) and both cosines above 0.1: away from the
// sigma clamp and the backfacing switch.
inline GradConfig random_grad_config(std::mt19937_64 &rng, int J) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    GradConfig c;
    for (int j = 0; j < J; ++j) {
        CookTorranceParams p;
        for (int ch = 0; ch < 3; ++ch) {
            p.diffuse[ch] = u(rng);
            p.specular[ch] = u(rng);
            p.roughness[ch] = 0.1 + 0.89 * u(rng);
        }
        c.set.bases.push_back(p);
    }
    double sum = 0.0;
    for (int j = 0; j < J; ++j) {
        c.w.push_back(0.05 + u(rng));
        sum += c.w.back();
    }
    for (double &v : c.w) v /= sum;
    c.n = random_unit(rng);
    c.i = random_hemisphere(rng, c.n, 0.1);
    c.o = random_hemisphere(rng, c.n, 0.1);
    return c;
}

// Largest relative error between grad_brdf and central differences of
// eval_basis over every parameter of one configuration.
inline double brdf_gradient_error(const GradConfig &c) {
    const size_t J = c.set.size();
    const BrdfGradient g = grad_brdf(c.set, c.w, c.i, c.o, c.n);
    const double h = kFdStep;
    double worst = 0.0;
    auto fd = [&](auto &&mutate) {
        BasisBrdfSet plus = c.set, minus = c.set;
        std::vector<double> wp = c.w, wm = c.w;
        Vec3 np = c.n, nm = c.n;
        mutate(plus, wp, np, +h);
        mutate(minus, wm, nm, -h);
        return ((eval_basis(plus, wp, c.i, c.o, np) - eval_basis(minus, wm, c.i, c.o, nm)) / (2 * h))
            .eval();
    };
    for (size_t j = 0; j < J; ++j) {
        for (int ch = 0; ch < 3; ++ch) {
            auto d = fd([&](BasisBrdfSet &s, std::vector<double> &, Vec3 &, double e) {
                s.bases[j].diffuse[ch] += e;
            });
            auto s = fd([&](BasisBrdfSet &s, std::vector<double> &, Vec3 &, double e) {
                s.bases[j].specular[ch] += e;
            });
            auto r = fd([&](BasisBrdfSet &s, std::vector<double> &, Vec3 &, double e) {
                s.bases[j].roughness[ch] += e;
            });
            worst = std::max({worst, rel_err(g.diffuse[j][ch], d[ch]), rel_err(g.specular[j][ch], s[ch]),
                              rel_err(g.roughness[j][ch], r[ch])});
        }
    }
    // Weight partials, probed along simplex-preserving directions e_a - e_b.
    for (size_t a = 0; a + 1 < J; ++a) {
        const size_t b = a + 1;
        auto dw = fd([&](BasisBrdfSet &, std::vector<double> &w, Vec3 &, double e) {
            w[a] += e;
            w[b] -= e;
        });
        for (int ch = 0; ch < 3; ++ch)
            worst = std::max(worst, rel_err(g.weight[a][ch] - g.weight[b][ch], dw[ch]));
    }
    // Normal partials along two tangent directions; d/de normalize(n + e t) = t.
    const Vec3 t1 = any_tangent(c.n), t2 = c.n.cross(t1);
    for (const Vec3 &t : {t1, t2}) {
        auto dn = fd([&](BasisBrdfSet &, std::vector<double> &, Vec3 &n, double e) {
            n = (n + e * t).normalized();
        });
        for (int ch = 0; ch < 3; ++ch) worst = std::max(worst, rel_err(g.normal[ch].dot(t), dn[ch]));
    }
    return worst;
}

// Random map whose masked neighbor differences all exceed 1e-3, keeping the
// central differences clear of the smoothed kink at zero.
inline Image random_tv_map(std::mt19937_64 &rng, int W, int H, int C, const Mask &mask) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (;;) {
        Image m(W, H, C);
        for (double &v : m.data()) v = u(rng);
        bool ok = true;
        for (int y = 0; y < H && ok; ++y)
            for (int x = 0; x < W && ok; ++x) {
                if (!mask(x, y)) continue;
                for (int c = 0; c < C; ++c) {
                    if (x + 1 < W && mask(x + 1, y) && std::abs(m.at(x + 1, y, c) - m.at(x, y, c)) < 1e-3)
                        ok = false;
                    if (y + 1 < H && mask(x, y + 1) && std::abs(m.at(x, y + 1, c) - m.at(x, y, c)) < 1e-3)
                        ok = false;
                }
            }
        if (ok) return m;
    }
}

inline double tv_gradient_error(const Image &map, const Mask &mask) {
    Image grad;
    tv_norm(map, mask, &grad);
    double worst = 0.0;
    for (size_t k = 0; k < map.size(); ++k) {
        Image p = map, m = map;
        p[k] += kFdStep;
        m[k] -= kFdStep;
        const double fd = (tv_norm(p, mask) - tv_norm(m, mask)) / (2 * kFdStep);
        worst = std::max(worst, rel_err(grad[k], fd));
    }
    return worst;
}

// Independent scene for relighting checks: a tilted, bumpy surface at about
// 0.5 m with two glossy materials mixed by smooth random weights.
inline void random_scene(std::mt19937_64 &rng, int W, int H, CameraModel &camera, SceneMaps &scene,
                         Reflectance &refl) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    camera = CameraModel(0.9 * W, {(W - 1) / 2.0, (H - 1) / 2.0}, W, H);
    DepthMap depth(W, H);
    NormalMap normal(W, H);
    Mask mask(W, H, 1);
    const double fx = 1 + 3 * u(rng), fy = 1 + 3 * u(rng), ph = 2 * kPi * u(rng);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double sx = static_cast<double>(x) / W, sy = static_cast<double>(y) / H;
            depth(x, y) = 0.5 + 0.03 * std::sin(fx * sx * 2 * kPi + ph) + 0.02 * sy;
            const Vec3 n(0.3 * std::sin(fx * sx * 2 * kPi + ph), 0.3 * std::cos(fy * sy * 2 * kPi), -1.0);
            normal(x, y) = n.normalized();
            if (u(rng) < 0.05) mask(x, y) = 0;
        }
    scene = make_scene(camera, depth, normal, mask);
    refl.bases.bases.clear();
    for (int j = 0; j < 2; ++j) {
        CookTorranceParams p;
        for (int c = 0; c < 3; ++c) {
            p.diffuse[c] = 0.05 + 0.3 * u(rng);
            p.specular[c] = 0.1 + 0.5 * u(rng);
            p.roughness[c] = 0.2 + 0.6 * u(rng);
        }
        refl.bases.bases.push_back(p);
    }
    refl.weights = WeightMaps(W, H, 2);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const double a = 0.5 + 0.5 * std::sin(0.2 * x + 0.1 * y);
            auto w = refl.weights.at(scene.mask.index(x, y));
            w[0] = a;
            w[1] = 1.0 - a;
        }
}

inline DisplayPattern random_pattern(std::mt19937_64 &rng, size_t N) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DisplayPattern p;
    p.values.resize(N);
    for (auto &v : p.values) v = Rgb(u(rng), u(rng), u(rng));
    return p;
}

// max over entries of |a - b| / max(|a|, |b|), with entries where both are
// exactly zero skipped.
inline double max_rel_diff(const Image &a, const Image &b) {
    double worst = 0.0;
    for (size_t k = 0; k < a.size(); ++k) {
        const double s = std::max(std::abs(a[k]), std::abs(b[k]));
        if (s == 0.0) continue;
        worst = std::max(worst, std::abs(a[k] - b[k]) / s);
    }
    return worst;
}

// Synthetic inverse-rendering protocol: 144 one-hot captures, every sixth
// held out, noise with stream k on capture k. uniform_depth > 0 replaces the
// solver's depth input inside the mask.
struct RoundTrip {
    SynthScene scene;
    SolveResult result;
    double psnr_db = 0.0; // mean over held-out patterns, within the mask
    double mae_deg = 0.0;
    double seconds = 0.0;
};

inline RoundTrip run_round_trip(ScenePreset preset, int res, SolveConfig cfg, double sigma,
                                double uniform_depth = 0.0, std::uint64_t noise_seed = 7) {
    const auto t0 = std::chrono::steady_clock::now();
    RoundTrip rt{synth_scene(preset, res, res), {}, 0.0, 0.0, 0.0};
    const SynthScene &s = rt.scene;
    const OlatStack stack = render_olat_stack(s.scene, s.display, s.reflectance, s.falloff);
    const size_t N = s.display.size();
    SolveProblem prob{{}, {}, s.display, s.camera, s.scene.depth, s.scene.mask, s.falloff};
    std::vector<size_t> train, test;
    default_split(N, train, test);
    auto capture = [&](size_t k) { return add_noise_clip(stack.images[k], {sigma, noise_seed}, k); };
    for (size_t k : train) {
        prob.captures.push_back(capture(k));
        prob.patterns.push_back(onehot_pattern(N, k));
    }
    if (uniform_depth > 0.0)
        for (size_t p = 0; p < prob.depth.size(); ++p)
            if (prob.mask[p]) prob.depth[p] = uniform_depth;
    rt.result = solve(prob, cfg);
    double sum = 0.0;
    for (size_t k : test) {
        const Image est =
            render_estimate(rt.result.estimate, s.camera, s.display, onehot_pattern(N, k), s.falloff);
        sum += psnr(est, capture(k), &s.scene.mask);
    }
    rt.psnr_db = sum / static_cast<double>(test.size());
    rt.mae_deg = normal_mae(rt.result.estimate.normal, s.scene.normal, s.scene.mask);
    rt.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rt;
}

} // namespace oracle
