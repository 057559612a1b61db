#pragma once

#include "dispir/brdf.hpp"
#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/photometric_stereo.hpp"
#include "dispir/scene_model.hpp"

#include <map>
#include <random>
#include <string>
#include <vector>

namespace dispir {

struct SceneEstimate {
    NormalMap normal;
    BasisBrdfSet bases;
    WeightMaps weights;
    DepthMap depth;
    Mask mask;
};

struct SolveConfig {
    int J = 2;
    int iterations = 500;
    double step_reflectance = 1e-2;
    double step_normal = 5e-3;
    double step_weights = 5e-2;
    double tv_lambda = 1e-2;
    // Stop once the loss fell by less than this fraction over the last
    // convergence_window accepted steps; 0 disables.
    double tolerance = 1e-4;
    int convergence_window = 20;
    std::uint64_t seed = 0;
    bool saturation_exclude = true;
    double saturation = 0.98;
    PsThresholds ps_thresholds{};

    void validate() const {
        if (J < 1) throw DataError("SolveConfig: J must be >= 1");
        if (iterations < 0) throw DataError("SolveConfig: iterations must be >= 0");
        if (tv_lambda < 0) throw DataError("SolveConfig: tv_lambda must be >= 0");
    }
};

struct SolveProblem {
    std::vector<Image> captures;
    std::vector<DisplayPattern> patterns;
    DisplayModel display;
    CameraModel camera;
    DepthMap depth;
    Mask mask;
    FalloffParams falloff;
};

struct SolveResult {
    SceneEstimate estimate;
    SceneEstimate initial;
    std::vector<double> loss_trace; // accepted iterates, non-increasing
    int evaluations = 0;
    std::vector<std::string> warnings;
};

// Per-sample validity, laid out like Image::data() of each measurement.
using Validity = std::vector<std::vector<std::uint8_t>>;

inline Validity saturation_validity(const std::vector<Image> &captures, const Mask &mask,
                                    double saturation) {
    Validity v;
    v.reserve(captures.size());
    for (const Image &img : captures) {
        std::vector<std::uint8_t> ok(img.size(), 0);
        const int C = img.channels();
        for (size_t p = 0; p < img.pixel_count(); ++p)
            if (mask[p])
                for (int c = 0; c < C; ++c) ok[p * C + c] = img[p * C + c] <= saturation;
        v.push_back(std::move(ok));
    }
    return v;
}

// Root mean squared difference over valid pixel-channel-measurements.
inline double rmse_loss(const std::vector<Image> &rendered, const std::vector<Image> &captured,
                        const Validity *validity = nullptr) {
    if (rendered.size() != captured.size()) throw DataError("rmse_loss: stack sizes differ");
    if (validity && validity->size() != captured.size())
        throw DataError("rmse_loss: validity size differs");
    double sse = 0.0;
    size_t n = 0;
    for (size_t m = 0; m < captured.size(); ++m) {
        if (!rendered[m].same_shape(captured[m])) throw DataError("rmse_loss: image shapes differ");
        for (size_t k = 0; k < captured[m].size(); ++k) {
            if (validity && !(*validity)[m].at(k)) continue;
            const double d = rendered[m][k] - captured[m][k];
            sse += d * d;
            ++n;
        }
    }
    if (n == 0) throw DataError("rmse_loss: no valid entries");
    return std::sqrt(sse / static_cast<double>(n));
}

inline constexpr double kTvEpsilon = 1e-6;

// Anisotropic total variation: mean over masked horizontal/vertical neighbor
// pairs and channels of sqrt(d^2 + eps^2) - eps. When grad is non-null it
// receives dTV/dmap.
inline double tv_norm(const Image &map, const Mask &mask, Image *grad = nullptr) {
    if (!mask.same_shape(map.width(), map.height())) throw DataError("tv_norm: mask shape mismatch");
    const int W = map.width(), H = map.height(), C = map.channels();
    if (grad) *grad = Image(W, H, C);
    size_t pairs = 0;
    double sum = 0.0;
    auto visit = [&](size_t a, size_t b) {
        ++pairs;
        for (int c = 0; c < C; ++c) {
            const double d = map[b * C + c] - map[a * C + c];
            const double r = std::sqrt(d * d + kTvEpsilon * kTvEpsilon);
            sum += r - kTvEpsilon;
            if (grad) {
                (*grad)[b * C + c] += d / r;
                (*grad)[a * C + c] -= d / r;
            }
        }
    };
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const size_t p = mask.index(x, y);
            if (!mask[p]) continue;
            if (x + 1 < W && mask[p + 1]) visit(p, p + 1);
            if (y + 1 < H && mask[p + W]) visit(p, p + W);
        }
    if (pairs == 0) return 0.0;
    const double norm = 1.0 / (static_cast<double>(pairs) * C);
    if (grad)
        for (double &g : grad->data()) g *= norm;
    return sum * norm;
}

// Hexcone HSV; hue in [0,1).
inline Eigen::Array3d rgb_to_hsv(const Rgb &c) {
    const double mx = c.maxCoeff(), mn = c.minCoeff(), delta = mx - mn;
    double h = 0.0;
    if (delta > 0.0) {
        if (mx == c[0])
            h = std::fmod((c[1] - c[2]) / delta, 6.0);
        else if (mx == c[1])
            h = (c[2] - c[0]) / delta + 2.0;
        else
            h = (c[0] - c[1]) / delta + 4.0;
        h /= 6.0;
        if (h < 0.0) h += 1.0;
    }
    const double s = mx > 0.0 ? delta / mx : 0.0;
    return {h, s, mx};
}

struct ClusterInit {
    WeightMaps weights;
    BasisBrdfSet bases;
    std::vector<std::string> warnings;
};

// K-means over the hue/saturation disc (s cos 2 pi h, s sin 2 pi h) with
// k-means++ seeding; clusters become one-hot weight maps whose diffuse albedo
// is the centroid color. Specular albedo and roughness start at 0.5.
inline ClusterInit init_clusters(const Image &pseudo_diffuse, const Mask &mask, int J,
                                 std::uint64_t seed) {
    if (J < 1) throw DataError("init_clusters: J must be >= 1");
    if (!mask.same_shape(pseudo_diffuse.width(), pseudo_diffuse.height()))
        throw DataError("init_clusters: mask shape mismatch");
    std::vector<size_t> pixels;
    std::vector<Eigen::Vector2d> pts;
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        const auto hsv = rgb_to_hsv(pseudo_diffuse.rgb(p).max(0.0));
        pixels.push_back(p);
        pts.emplace_back(hsv[1] * std::cos(2 * kPi * hsv[0]), hsv[1] * std::sin(2 * kPi * hsv[0]));
    }
    if (pixels.empty()) throw DataError("init_clusters: empty mask");

    ClusterInit out;
    std::map<std::pair<long long, long long>, int> distinct;
    for (const auto &q : pts)
        distinct.emplace(std::make_pair(std::llround(q.x() * 1e9), std::llround(q.y() * 1e9)), 0);
    int K = J;
    if (static_cast<int>(distinct.size()) < J) {
        K = static_cast<int>(distinct.size());
        out.warnings.push_back("init_clusters: only " + std::to_string(K) +
                               " distinct colors; reducing J from " + std::to_string(J));
    }

    std::mt19937_64 rng(seed);
    std::vector<Eigen::Vector2d> centers;
    centers.push_back(pts[std::uniform_int_distribution<size_t>(0, pts.size() - 1)(rng)]);
    std::vector<double> d2(pts.size());
    while (static_cast<int>(centers.size()) < K) {
        double total = 0.0;
        for (size_t k = 0; k < pts.size(); ++k) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto &c : centers) best = std::min(best, (pts[k] - c).squaredNorm());
            d2[k] = best;
            total += best;
        }
        if (!(total > 0.0)) break;
        double r = std::uniform_real_distribution<double>(0.0, total)(rng);
        size_t pick = pts.size() - 1;
        for (size_t k = 0; k < pts.size(); ++k) {
            r -= d2[k];
            if (r <= 0.0 && d2[k] > 0.0) {
                pick = k;
                break;
            }
        }
        centers.push_back(pts[pick]);
    }

    std::vector<int> label(pts.size(), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (size_t k = 0; k < pts.size(); ++k) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (size_t c = 0; c < centers.size(); ++c) {
                const double d = (pts[k] - centers[c]).squaredNorm();
                if (d < bd) bd = d, best = static_cast<int>(c);
            }
            if (label[k] != best) label[k] = best, changed = true;
        }
        std::vector<Eigen::Vector2d> sum(centers.size(), Eigen::Vector2d::Zero());
        std::vector<size_t> cnt(centers.size(), 0);
        for (size_t k = 0; k < pts.size(); ++k) sum[label[k]] += pts[k], ++cnt[label[k]];
        for (size_t c = 0; c < centers.size(); ++c)
            if (cnt[c]) centers[c] = sum[c] / static_cast<double>(cnt[c]);
        if (!changed) break;
    }

    // Drop empty clusters and relabel densely.
    std::vector<size_t> cnt(centers.size(), 0);
    for (int l : label) ++cnt[l];
    std::vector<int> remap(centers.size(), -1);
    int used = 0;
    for (size_t c = 0; c < centers.size(); ++c)
        if (cnt[c]) remap[c] = used++;
    if (used < K)
        out.warnings.push_back("init_clusters: merged empty clusters; J=" + std::to_string(used));

    std::vector<Rgb> color(used, Rgb::Zero());
    std::vector<size_t> members(used, 0);
    for (size_t k = 0; k < pixels.size(); ++k) {
        const int l = remap[label[k]];
        color[l] += pseudo_diffuse.rgb(pixels[k]);
        ++members[l];
    }
    out.weights = WeightMaps(mask.width(), mask.height(), used, 0.0);
    for (size_t k = 0; k < pixels.size(); ++k) out.weights.at(pixels[k])[remap[label[k]]] = 1.0;
    for (int l = 0; l < used; ++l) {
        CookTorranceParams b;
        b.diffuse = (color[l] / static_cast<double>(members[l])).max(0.0).min(1.0);
        b.specular = Rgb::Constant(0.5);
        b.roughness = Rgb::Constant(0.5);
        out.bases.bases.push_back(b);
    }
    return out;
}

inline SceneMaps estimate_scene(const SceneEstimate &est, const CameraModel &camera) {
    NormalMap normal = est.normal;
    for (size_t p = 0; p < normal.size(); ++p)
        if (!est.mask[p]) normal[p] = Vec3(0, 0, -1);
    return make_scene(camera, est.depth, std::move(normal), est.mask);
}

// Relit image of an estimate under a display pattern.
inline Image render_estimate(const SceneEstimate &est, const CameraModel &camera,
                             const DisplayModel &display, const DisplayPattern &pattern,
                             const FalloffParams &fp, bool clip = true) {
    const SceneMaps scene = estimate_scene(est, camera);
    return render_pattern(scene, display, Reflectance{est.bases, est.weights}, pattern, fp, {},
                          clip);
}

namespace detail {

inline constexpr double kInitLogitGap = 5.0;
inline constexpr size_t kSolverChunk = 64;

struct SolverParams {
    std::vector<Vec3> normal;      // per compact pixel
    std::vector<double> logits;    // P x J
    std::vector<double> basis;     // J x 9: rho_d(3) rho_s(3) sigma(3)
};

struct PixelGeometry {
    Vec3 view;
    std::vector<Vec3> dir;         // per used light
    std::vector<double> fall;      // per used light
};

// Fused render/loss/gradient evaluation over all training measurements.
class SolverObjective {
  public:
    SolverObjective(const SolveProblem &prob, const SolveConfig &cfg, const Mask &mask)
        : prob_(prob), cfg_(cfg), mask_(mask), W_(mask.width()), H_(mask.height()) {
        const size_t M = prob.captures.size();
        const size_t N = prob.display.size();
        for (size_t p = 0; p < mask.size(); ++p)
            if (mask[p]) pixels_.push_back(p);

        std::vector<int> light_slot(N, -1);
        sparse_.resize(M);
        for (size_t m = 0; m < M; ++m) {
            const auto L = pattern_radiance(prob.patterns[m], prob.display);
            for (size_t i = 0; i < N; ++i) {
                if (!(L[i] != 0.0).any()) continue;
                if (light_slot[i] < 0) {
                    light_slot[i] = static_cast<int>(lights_.size());
                    lights_.push_back(i);
                }
                sparse_[m].emplace_back(light_slot[i], L[i]);
            }
        }

        Mask has_depth;
        const Grid<Vec3> points = backproject(prob.camera, prob.depth, &has_depth);
        const Vec3 eye = prob.camera.center();
        geom_.resize(pixels_.size());
        for (size_t q = 0; q < pixels_.size(); ++q) {
            const Vec3 &x = points[pixels_[q]];
            auto &g = geom_[q];
            g.view = (eye - x).normalized();
            g.dir.resize(lights_.size());
            g.fall.resize(lights_.size());
            for (size_t l = 0; l < lights_.size(); ++l) {
                const IncidentSample in = incident_geometry(x, lights_[l], prob.display);
                g.dir[l] = in.direction;
                g.fall[l] = falloff(in.distance, prob.falloff);
            }
        }

        valid_count_ = 0;
        for (size_t m = 0; m < M; ++m) {
            const Image &img = prob.captures[m];
            for (size_t p : pixels_)
                for (int c = 0; c < 3; ++c)
                    valid_count_ += is_valid(img[p * 3 + c]);
        }
        if (valid_count_ == 0) throw DataError("solve: no valid (unsaturated) measurements");
    }

    const std::vector<size_t> &pixels() const { return pixels_; }
    const std::vector<PixelGeometry> &geometry() const { return geom_; }

    bool is_valid(double v) const { return !cfg_.saturation_exclude || v <= cfg_.saturation; }

    static size_t normal_eq_size(int J) { return 3 * static_cast<size_t>(4 * J * J + 2 * J); }

    // Returns total loss; fills grad (same layout as params) when non-null.
    // normal_eq receives, per channel, the least-squares system in
    // (rho_d_0..J-1, rho_s_0..J-1) with everything else held fixed: 2J x 2J
    // matrix then 2J right-hand side.
    double evaluate(const SolverParams &x, int J, SolverParams *grad,
                    std::vector<double> *normal_eq = nullptr) const {
        const size_t P = pixels_.size();
        const size_t chunks = chunk_count(P, kSolverChunk);
        std::vector<double> chunk_sse(chunks, 0.0);
        std::vector<std::vector<double>> chunk_basis(chunks), chunk_eq(chunks);
        if (grad) {
            grad->normal.assign(P, Vec3::Zero());
            grad->logits.assign(P * J, 0.0);
            grad->basis.assign(static_cast<size_t>(J) * 9, 0.0);
        }
        std::vector<double> weights(P * J);
        for (size_t q = 0; q < P; ++q)
            softmax({x.logits.data() + q * J, static_cast<size_t>(J)}, {weights.data() + q * J, static_cast<size_t>(J)});

        parallel_chunks(P, kSolverChunk, [&](size_t b, size_t e, size_t chunk) {
            std::vector<double> gb(grad ? static_cast<size_t>(J) * 9 : 0, 0.0);
            std::vector<double> eq(normal_eq ? normal_eq_size(J) : 0, 0.0);
            double sse = 0.0;
            for (size_t q = b; q < e; ++q)
                sse += pixel_pass(x, J, q, weights.data() + q * J, grad, gb, normal_eq ? eq.data() : nullptr);
            chunk_sse[chunk] = sse;
            if (grad) chunk_basis[chunk] = std::move(gb);
            if (normal_eq) chunk_eq[chunk] = std::move(eq);
        });
        if (normal_eq) {
            normal_eq->assign(normal_eq_size(J), 0.0);
            for (const auto &eq : chunk_eq)
                for (size_t k = 0; k < eq.size(); ++k) (*normal_eq)[k] += eq[k];
        }

        double sse = 0.0;
        for (double s : chunk_sse) sse += s;
        const double rmse = std::sqrt(sse / static_cast<double>(valid_count_));
        double loss = rmse;
        if (grad) {
            for (const auto &gb : chunk_basis)
                for (size_t k = 0; k < gb.size(); ++k) grad->basis[k] += gb[k];
            // d rmse = d sse / (2 K rmse)
            const double scale = rmse > 0.0 ? 1.0 / (2.0 * valid_count_ * rmse) : 0.0;
            for (auto &g : grad->normal) g *= scale;
            for (auto &g : grad->logits) g *= scale;
            for (auto &g : grad->basis) g *= scale;
        }

        if (cfg_.tv_lambda > 0.0) {
            Image wmap(W_, H_, J), nmap(W_, H_, 3);
            for (size_t q = 0; q < P; ++q) {
                for (int j = 0; j < J; ++j) wmap[pixels_[q] * J + j] = weights[q * J + j];
                for (int c = 0; c < 3; ++c) nmap[pixels_[q] * 3 + c] = x.normal[q][c];
            }
            Image gw, gn;
            const double tvw = tv_norm(wmap, mask_, grad ? &gw : nullptr);
            const double tvn = tv_norm(nmap, mask_, grad ? &gn : nullptr);
            loss += cfg_.tv_lambda * (tvw + tvn);
            if (grad) {
                for (size_t q = 0; q < P; ++q) {
                    const size_t p = pixels_[q];
                    const double *w = weights.data() + q * J;
                    double dot = 0.0;
                    for (int j = 0; j < J; ++j) dot += w[j] * gw[p * J + j];
                    for (int j = 0; j < J; ++j)
                        grad->logits[q * J + j] += cfg_.tv_lambda * w[j] * (gw[p * J + j] - dot);
                    Vec3 g(gn[p * 3], gn[p * 3 + 1], gn[p * 3 + 2]);
                    grad->normal[q] += cfg_.tv_lambda * g;
                }
            }
        }
        if (grad)
            for (size_t q = 0; q < P; ++q) {
                const Vec3 &n = x.normal[q];
                grad->normal[q] -= grad->normal[q].dot(n) * n;
            }
        return loss;
    }

  private:
    // Sum of squared residuals at one pixel; accumulates gradients of that sum.
    double pixel_pass(const SolverParams &x, int J, size_t q, const double *w, SolverParams *grad,
                      std::vector<double> &gbasis, double *normal_eq) const {
        const size_t p = pixels_[q];
        const auto &g = geom_[q];
        const Vec3 &n = x.normal[q];
        const size_t NL = lights_.size();
        const size_t M = prob_.captures.size();

        struct LightTerm {
            BrdfGeometry geo;
            double cos_i_fall = 0.0; // (n.i) falloff
            Rgb f = Rgb::Zero();
            Rgb T = Rgb::Zero();
            bool lit = false;
        };
        thread_local std::vector<LightTerm> terms;
        thread_local std::vector<LobeTerms> lobes; // NL x J x 3
        terms.assign(NL, LightTerm{});
        if (grad || normal_eq) lobes.assign(NL * J * 3, LobeTerms{});

        for (size_t l = 0; l < NL; ++l) {
            LightTerm &t = terms[l];
            t.geo = brdf_geometry(g.dir[l], g.view, n);
            if (t.geo.backfacing) continue;
            t.lit = true;
            t.cos_i_fall = t.geo.cos_i * g.fall[l];
            const double F = schlick_fresnel(t.geo.cos_d);
            for (int j = 0; j < J; ++j) {
                const double *bp = x.basis.data() + j * 9;
                for (int c = 0; c < 3; ++c) {
                    LobeTerms lobe = grad ? specular_lobe<true>(bp[6 + c], t.geo, F)
                                          : specular_lobe<false>(bp[6 + c], t.geo, F);
                    t.f[c] += w[j] * (bp[c] + bp[3 + c] * lobe.value);
                    if (grad || normal_eq) lobes[(l * J + j) * 3 + c] = lobe;
                }
            }
            t.T = t.cos_i_fall * t.f;
        }

        double sse = 0.0;
        thread_local std::vector<Rgb> dT;
        thread_local std::vector<double> phi;
        if (grad) dT.assign(NL, Rgb::Zero());
        const size_t U = 2 * static_cast<size_t>(J);
        for (size_t m = 0; m < M; ++m) {
            Rgb R = Rgb::Zero();
            for (const auto &[l, L] : sparse_[m]) R += terms[l].T * L;
            const Image &cap = prob_.captures[m];
            Rgb dR = Rgb::Zero();
            for (int c = 0; c < 3; ++c) {
                const double cv = cap[p * 3 + c];
                if (!is_valid(cv)) continue;
                double r = R[c];
                bool clipped = false;
                if (!cfg_.saturation_exclude && r > 1.0) r = 1.0, clipped = true;
                const double diff = r - cv;
                sse += diff * diff;
                if (clipped) continue;
                dR[c] = 2.0 * diff;
                if (!normal_eq) continue;
                phi.assign(U, 0.0);
                for (const auto &[l, L] : sparse_[m]) {
                    const LightTerm &t = terms[l];
                    if (!t.lit) continue;
                    const double k = t.cos_i_fall * L[c];
                    for (int j = 0; j < J; ++j) {
                        phi[j] += w[j] * k;
                        phi[J + j] += w[j] * k * lobes[(l * J + j) * 3 + c].value;
                    }
                }
                double *A = normal_eq + c * (U * U + U);
                double *rhs = A + U * U;
                for (size_t a = 0; a < U; ++a) {
                    rhs[a] += phi[a] * cv;
                    for (size_t b2 = 0; b2 < U; ++b2) A[a * U + b2] += phi[a] * phi[b2];
                }
            }
            if (grad && (dR != 0.0).any())
                for (const auto &[l, L] : sparse_[m]) dT[l] += dR * L;
        }
        if (!grad) return sse;

        Vec3 gn = Vec3::Zero();
        double *glog = grad->logits.data() + q * J;
        thread_local std::vector<double> gw;
        gw.assign(J, 0.0);
        for (size_t l = 0; l < NL; ++l) {
            const LightTerm &t = terms[l];
            if (!t.lit || (dT[l] == 0.0).all()) continue;
            const Rgb gf = dT[l] * t.cos_i_fall; // d sse / d f_c
            // (n.i) factor: T_c = cos_i fall f_c
            gn += (dT[l] * t.f).sum() * g.fall[l] * g.dir[l];
            for (int j = 0; j < J; ++j) {
                double *gbj = gbasis.data() + j * 9;
                const double *bp = x.basis.data() + j * 9;
                double fj_dot = 0.0;
                for (int c = 0; c < 3; ++c) {
                    const LobeTerms &lobe = lobes[(l * J + j) * 3 + c];
                    const double wg = w[j] * gf[c];
                    gbj[c] += wg;
                    gbj[3 + c] += wg * lobe.value;
                    gbj[6 + c] += wg * bp[3 + c] * lobe.d_roughness;
                    fj_dot += gf[c] * (bp[c] + bp[3 + c] * lobe.value);
                    const double s = wg * bp[3 + c];
                    gn += s * (lobe.d_cos_i * g.dir[l] + lobe.d_cos_o * g.view +
                               lobe.d_cos_h * t.geo.half);
                }
                gw[j] += fj_dot;
            }
        }
        double dot = 0.0;
        for (int j = 0; j < J; ++j) dot += w[j] * gw[j];
        for (int j = 0; j < J; ++j) glog[j] += w[j] * (gw[j] - dot);
        grad->normal[q] += gn;
        return sse;
    }

    const SolveProblem &prob_;
    const SolveConfig &cfg_;
    const Mask &mask_;
    int W_, H_;
    std::vector<size_t> pixels_;
    std::vector<size_t> lights_;
    std::vector<std::vector<std::pair<size_t, Rgb>>> sparse_;
    std::vector<PixelGeometry> geom_;
    size_t valid_count_ = 0;
};

inline constexpr double kMinViewCosine = 1e-2;

// Keeps n . view >= kMinViewCosine; a visible pixel cannot face away from the camera.
inline Vec3 face_viewer(const Vec3 &n, const Vec3 &view) {
    const double c = n.dot(view);
    if (c >= kMinViewCosine) return n;
    Vec3 t = n - c * view;
    if (t.norm() < 1e-12) t = view.unitOrthogonal();
    return std::sqrt(1.0 - kMinViewCosine * kMinViewCosine) * t.normalized() + kMinViewCosine * view;
}

struct Adam {
    std::vector<double> m, v;
    int t = 0;
    static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

    void init(size_t n) { m.assign(n, 0.0), v.assign(n, 0.0), t = 0; }
    void push(const double *g, size_t n) {
        for (size_t k = 0; k < n; ++k) {
            m[k] = kBeta1 * m[k] + (1 - kBeta1) * g[k];
            v[k] = kBeta2 * v[k] + (1 - kBeta2) * g[k] * g[k];
        }
    }
    double direction(size_t k) const {
        const double mh = m[k] / (1 - std::pow(kBeta1, t));
        const double vh = v[k] / (1 - std::pow(kBeta2, t));
        return mh / (std::sqrt(vh) + kEps);
    }
};

// Box-constrained least squares on [0,1]^U by active-set refinement: violated
// variables are pinned to their nearest bound and the rest re-solved.
inline Eigen::VectorXd bounded_least_squares(const Eigen::MatrixXd &A, const Eigen::VectorXd &rhs) {
    const Eigen::Index U = rhs.size();
    const double ridge = 1e-12 * (A.trace() / static_cast<double>(U) + 1e-300);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(U);
    std::vector<int> pinned(static_cast<size_t>(U), -1); // -1 free, else the bound value
    for (Eigen::Index pass = 0; pass <= U; ++pass) {
        std::vector<Eigen::Index> free;
        for (Eigen::Index k = 0; k < U; ++k) {
            if (pinned[k] < 0) free.push_back(k);
            else x[k] = pinned[k];
        }
        if (free.empty()) break;
        const Eigen::Index F = static_cast<Eigen::Index>(free.size());
        Eigen::MatrixXd Af(F, F);
        Eigen::VectorXd bf(F);
        for (Eigen::Index a = 0; a < F; ++a) {
            bf[a] = rhs[free[a]];
            for (Eigen::Index k = 0; k < U; ++k)
                if (pinned[k] >= 0) bf[a] -= A(free[a], k) * x[k];
            for (Eigen::Index b = 0; b < F; ++b) Af(a, b) = A(free[a], free[b]);
            Af(a, a) += ridge;
        }
        const Eigen::VectorXd sol = Af.ldlt().solve(bf);
        bool violated = false;
        for (Eigen::Index a = 0; a < F; ++a) {
            x[free[a]] = sol[a];
            if (!(sol[a] >= 0.0)) pinned[free[a]] = 0, violated = true;
            else if (sol[a] > 1.0) pinned[free[a]] = 1, violated = true;
        }
        if (!violated) break;
    }
    return x.cwiseMax(0.0).cwiseMin(1.0);
}

// Albedos (rho_d, rho_s) minimizing the data term with everything else fixed.
inline void solve_albedos(const std::vector<double> &eq, int J, std::vector<double> &basis) {
    const Eigen::Index U = 2 * J;
    for (int c = 0; c < 3; ++c) {
        const double *A = eq.data() + c * (U * U + U);
        const Eigen::MatrixXd Am = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(A, U, U);
        const Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(A + U * U, U);
        if (!(Am.trace() > 0.0)) continue;
        const Eigen::VectorXd x = bounded_least_squares(Am, rhs);
        if (!x.allFinite()) continue;
        for (int j = 0; j < J; ++j) {
            basis[j * 9 + c] = x[j];
            basis[j * 9 + 3 + c] = x[J + j];
        }
    }
}

} // namespace detail

// Baseline inverse renderer: near-field PS and hue/saturation clustering for
// initialization, then descent with backtracking on
// RMSE + tv_lambda (TV(weights) + TV(normals)). Normals, weight logits and
// roughness take Adam steps; albedos, on which the rendering is linear, are
// re-solved by bounded least squares at every accepted iterate.
inline SolveResult solve(const SolveProblem &prob, const SolveConfig &cfg) {
    cfg.validate();
    const size_t M = prob.captures.size();
    if (M < 1) throw DataError("solve: need at least one capture");
    if (prob.patterns.size() != M) throw DataError("solve: captures and patterns differ in count");
    if (count_set(prob.mask) == 0) throw DataError("solve: empty mask");
    if (!prob.depth.same_shape(prob.mask)) throw DataError("solve: depth/mask shape mismatch");
    for (const Image &img : prob.captures)
        if (img.width() != prob.mask.width() || img.height() != prob.mask.height() ||
            img.channels() != 3)
            throw DataError("solve: capture shape does not match mask");
    Mask mask = prob.mask;
    for (size_t p = 0; p < mask.size(); ++p)
        if (!(prob.depth[p] > 0.0)) mask[p] = 0;

    SolveResult result;
    // Initialization.
    NormalMap init_normal(mask.width(), mask.height(), Vec3(0, 0, -1));
    Image pseudo(mask.width(), mask.height(), 3);
    Mask ps_mask = mask;
    if (M >= 3) {
        const PsResult ps = nearfield_ps(prob.captures, prob.patterns, prob.display, prob.camera,
                                         prob.depth, prob.falloff, mask, cfg.ps_thresholds);
        init_normal = ps.normal;
        pseudo = ps.pseudo_diffuse;
        ps_mask = ps.mask;
        if (ps.dropped)
            result.warnings.push_back("solve: photometric stereo dropped " +
                                      std::to_string(ps.dropped) + " pixels; using view-facing normals");
    }
    const Grid<Vec3> points = backproject(prob.camera, prob.depth);
    for (size_t p = 0; p < mask.size(); ++p)
        if (mask[p] && !ps_mask[p]) init_normal[p] = (prob.camera.center() - points[p]).normalized();

    ClusterInit clusters = init_clusters(pseudo, ps_mask.empty() || count_set(ps_mask) == 0 ? mask : ps_mask,
                                         cfg.J, cfg.seed);
    for (auto &w : clusters.warnings) result.warnings.push_back(w);
    const int J = clusters.weights.count();
    // Pixels the clustering did not see take the first basis.
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        auto w = clusters.weights.at(p);
        double s = 0.0;
        for (double v : w) s += v;
        if (s == 0.0) w[0] = 1.0;
    }

    SceneEstimate init{init_normal, clusters.bases, clusters.weights, prob.depth, mask};
    result.initial = init;
    result.estimate = init;
    if (cfg.iterations == 0) return result;

    detail::SolverObjective objective(prob, cfg, mask);
    const auto &pixels = objective.pixels();
    const size_t P = pixels.size();

    detail::SolverParams x;
    x.normal.resize(P);
    x.logits.assign(P * J, 0.0);
    x.basis.resize(static_cast<size_t>(J) * 9);
    for (size_t q = 0; q < P; ++q) {
        x.normal[q] = detail::face_viewer(init_normal[pixels[q]], objective.geometry()[q].view);
        const auto w = init.weights.at(pixels[q]);
        for (int j = 0; j < J; ++j) x.logits[q * J + j] = w[j] > 0.5 ? 0.0 : -detail::kInitLogitGap;
    }
    for (int j = 0; j < J; ++j) {
        const auto &b = init.bases.bases[j];
        for (int c = 0; c < 3; ++c) {
            x.basis[j * 9 + c] = b.diffuse[c];
            x.basis[j * 9 + 3 + c] = b.specular[c];
            x.basis[j * 9 + 6 + c] = b.roughness[c];
        }
    }

    const auto &geometry = objective.geometry();
    auto project = [&geometry](detail::SolverParams &s, int nb) {
        for (size_t q = 0; q < s.normal.size(); ++q)
            s.normal[q] = detail::face_viewer(s.normal[q].normalized(), geometry[q].view);
        for (int j = 0; j < nb; ++j)
            for (int c = 0; c < 3; ++c) {
                double *b = s.basis.data() + j * 9;
                b[c] = std::clamp(b[c], 0.0, 1.0);
                b[3 + c] = std::clamp(b[3 + c], 0.0, 1.0);
                b[6 + c] = std::clamp(b[6 + c], kMinRoughness, 1.0);
            }
    };

    detail::SolverParams grad;
    std::vector<double> eq;
    double loss = objective.evaluate(x, J, &grad, &eq);
    result.evaluations = 1;
    result.loss_trace.push_back(loss);

    detail::Adam adam_n, adam_w, adam_b;
    adam_n.init(P * 3);
    adam_w.init(P * J);
    adam_b.init(static_cast<size_t>(J) * 9);
    double scale = 1.0;
    int rejections = 0;
    for (int it = 0; it < cfg.iterations; ++it) {
        if (rejections == 1) {
            // Momentum no longer descends; restart from the current gradient.
            adam_n.init(P * 3);
            adam_w.init(P * J);
            adam_b.init(static_cast<size_t>(J) * 9);
        }
        if (rejections <= 1) {
            for (auto *a : {&adam_n, &adam_w, &adam_b}) ++a->t;
            adam_n.push(grad.normal.front().data(), P * 3);
            adam_w.push(grad.logits.data(), P * J);
            adam_b.push(grad.basis.data(), grad.basis.size());
        }
        detail::SolverParams cand = x;
        for (size_t q = 0; q < P; ++q) {
            Vec3 step(adam_n.direction(q * 3), adam_n.direction(q * 3 + 1), adam_n.direction(q * 3 + 2));
            step -= step.dot(x.normal[q]) * x.normal[q];
            cand.normal[q] = x.normal[q] - scale * cfg.step_normal * step;
        }
        for (size_t k = 0; k < cand.logits.size(); ++k)
            cand.logits[k] -= scale * cfg.step_weights * adam_w.direction(k);
        for (size_t k = 0; k < cand.basis.size(); ++k)
            cand.basis[k] -= scale * cfg.step_reflectance * adam_b.direction(k);
        // The closed-form albedo update is skipped after repeated failures
        // (possible when clipped entries leave the linear model).
        if (rejections < 3) detail::solve_albedos(eq, J, cand.basis);
        project(cand, J);

        detail::SolverParams cand_grad;
        std::vector<double> cand_eq;
        const double cand_loss = objective.evaluate(cand, J, &cand_grad, &cand_eq);
        ++result.evaluations;
        if (std::isfinite(cand_loss) && cand_loss <= loss) {
            x = std::move(cand);
            grad = std::move(cand_grad);
            eq = std::move(cand_eq);
            loss = cand_loss;
            result.loss_trace.push_back(loss);
            scale = std::min(1.0, scale * 1.25);
            rejections = 0;
            const size_t k = result.loss_trace.size();
            const size_t win = static_cast<size_t>(std::max(cfg.convergence_window, 1));
            if (cfg.tolerance > 0.0 && k > win &&
                result.loss_trace[k - 1 - win] - loss <= cfg.tolerance * result.loss_trace[k - 1 - win])
                break;
        } else {
            scale *= 0.5;
            ++rejections;
            if (scale < 1e-6) break;
        }
    }

    SceneEstimate est = init;
    for (size_t q = 0; q < P; ++q) {
        const size_t p = pixels[q];
        est.normal[p] = x.normal[q];
        softmax({x.logits.data() + q * J, static_cast<size_t>(J)}, est.weights.at(p));
    }
    for (int j = 0; j < J; ++j) {
        auto &b = est.bases.bases[j];
        for (int c = 0; c < 3; ++c) {
            b.diffuse[c] = x.basis[j * 9 + c];
            b.specular[c] = x.basis[j * 9 + 3 + c];
            b.roughness[c] = x.basis[j * 9 + 6 + c];
        }
    }
    result.estimate = std::move(est);
    return result;
}

} // namespace dispir
