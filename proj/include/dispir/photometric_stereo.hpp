#pragma once

#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/scene_model.hpp"

#include <Eigen/Dense>

#include <vector>

namespace dispir {

struct PsResult {
    NormalMap normal;
    Image pseudo_diffuse;
    Grid<double> residual;
    Mask mask;            // input mask minus dropped pixels
    size_t dropped = 0;   // pixels removed for lack of a well-posed solve
};

struct PsThresholds {
    double low = 0.02;
    double high = 0.98;
};

// Measurement m at pixel p is valid iff low <= max_c I_m(p, c) <= high.
inline std::vector<Mask> shadow_saturation_mask(const std::vector<Image> &captures,
                                                PsThresholds t = {}) {
    if (!(t.low < t.high)) throw DataError("shadow_saturation_mask: need low < high");
    std::vector<Mask> valid;
    valid.reserve(captures.size());
    for (const Image &img : captures) {
        Mask m(img.width(), img.height(), 0);
        for (size_t p = 0; p < img.pixel_count(); ++p) {
            const double v = img.rgb(p).maxCoeff();
            m[p] = (v >= t.low && v <= t.high) ? 1 : 0;
        }
        valid.push_back(std::move(m));
    }
    return valid;
}

namespace detail {

inline void check_captures(const std::vector<Image> &images, const Mask &mask) {
    if (images.empty()) throw DataError("photometric stereo: no images");
    for (const Image &img : images)
        if (img.width() != mask.width() || img.height() != mask.height() || img.channels() != 3)
            throw DataError("photometric stereo: image/mask shape mismatch");
}

// Solves the 3x3 normal equations; false when the system is too ill-conditioned.
inline bool solve3(const Mat3 &ata, const Vec3 &aty, Vec3 &x) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(ata);
    const Vec3 ev = eig.eigenvalues();
    if (!(ev[0] > 1e-10 * ev[2]) || !(ev[2] > 0.0)) return false;
    x = ata.ldlt().solve(aty);
    return x.allFinite();
}

} // namespace detail

// Classic far-field Lambertian photometric stereo on luminance.
inline PsResult woodham_ps(const std::vector<Image> &images, const std::vector<Vec3> &light_dirs,
                           const std::vector<double> &light_intensities, const Mask &mask,
                           PsThresholds thresholds = {0.0, std::numeric_limits<double>::infinity()}) {
    detail::check_captures(images, mask);
    const size_t M = images.size();
    if (light_dirs.size() != M || light_intensities.size() != M)
        throw DataError("woodham_ps: one light direction and intensity per image required");
    if (M < 3) throw DataError("woodham_ps: need at least 3 images");

    Eigen::MatrixXd L(static_cast<Eigen::Index>(M), 3);
    for (size_t m = 0; m < M; ++m)
        L.row(static_cast<Eigen::Index>(m)) = light_intensities[m] * light_dirs[m].normalized().transpose();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(L);
    const auto sv = svd.singularValues();
    if (!(sv[2] > 1e-8 * sv[0])) throw NumericalError("woodham_ps: light matrix is rank deficient");

    const auto valid = shadow_saturation_mask(images, thresholds);
    const int W = mask.width(), H = mask.height();
    PsResult out{NormalMap(W, H, Vec3::Zero()), Image(W, H, 3), Grid<double>(W, H, 0.0), mask, 0};
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        Mat3 ata = Mat3::Zero();
        Vec3 aty = Vec3::Zero();
        int count = 0;
        for (size_t m = 0; m < M; ++m) {
            if (!valid[m][p]) continue;
            const Vec3 l = L.row(static_cast<Eigen::Index>(m)).transpose();
            ata += l * l.transpose();
            aty += l * luminance(images[m].rgb(p));
            ++count;
        }
        Vec3 b;
        if (count < 3 || !detail::solve3(ata, aty, b) || !(b.norm() > 0.0)) {
            out.mask[p] = 0;
            ++out.dropped;
            continue;
        }
        const Vec3 n = b / b.norm();
        out.normal[p] = n;
        Rgb num = Rgb::Zero();
        double den = 0.0, res = 0.0;
        for (size_t m = 0; m < M; ++m) {
            if (!valid[m][p]) continue;
            const Vec3 l = L.row(static_cast<Eigen::Index>(m)).transpose();
            const double shade = n.dot(l);
            num += shade * images[m].rgb(p);
            den += shade * shade;
            const double r = luminance(images[m].rgb(p)) - b.dot(l);
            res += r * r;
        }
        out.pseudo_diffuse.set_rgb(p, den > 0.0 ? Rgb((num / den).max(0.0)) : Rgb::Zero());
        out.residual[p] = std::sqrt(res / count);
    }
    return out;
}

// Directions and 1/d^2 intensities of each superpixel as seen from `target`,
// for treating the display as a set of distant lights.
inline void far_field_lights(const DisplayModel &display, const Vec3 &target,
                             std::vector<Vec3> &dirs, std::vector<double> &intensities) {
    dirs.clear();
    intensities.clear();
    for (size_t i = 0; i < display.size(); ++i) {
        const IncidentSample in = incident_geometry(target, i, display);
        dirs.push_back(in.direction);
        intensities.push_back(1.0 / (in.distance * in.distance));
    }
}

// Near-field Lambertian photometric stereo. For pattern m the effective light
// vector at a pixel is a_m = sum_i L_i(P_m) falloff(d_i) i_dir, with the full
// display model (backlight included) supplying L_i. Each channel solves
// I_m = b_c . a_m; the normal is the luminance-weighted sum of the b_c.
inline PsResult nearfield_ps(const std::vector<Image> &captures,
                             const std::vector<DisplayPattern> &patterns,
                             const DisplayModel &display, const CameraModel &camera,
                             const DepthMap &depth, const FalloffParams &fp, const Mask &mask,
                             PsThresholds thresholds = {}) {
    detail::check_captures(captures, mask);
    const size_t M = captures.size();
    if (patterns.size() != M) throw DataError("nearfield_ps: one pattern per capture required");
    if (M < 3) throw DataError("nearfield_ps: need at least 3 captures");
    if (!depth.same_shape(mask)) throw DataError("nearfield_ps: depth/mask shape mismatch");

    const size_t N = display.size();
    // Sparse radiance lists per pattern.
    std::vector<std::vector<std::pair<size_t, Rgb>>> radiance(M);
    for (size_t m = 0; m < M; ++m) {
        const auto L = pattern_radiance(patterns[m], display);
        for (size_t i = 0; i < N; ++i)
            if ((L[i] != 0.0).any()) radiance[m].emplace_back(i, L[i]);
    }

    Mask has_depth;
    const Grid<Vec3> points = backproject(camera, depth, &has_depth);
    const auto valid = shadow_saturation_mask(captures, thresholds);

    const int W = mask.width(), H = mask.height();
    PsResult out{NormalMap(W, H, Vec3::Zero()), Image(W, H, 3), Grid<double>(W, H, 0.0), mask, 0};
    std::vector<std::uint8_t> drop(mask.size(), 0);
    parallel_chunks(mask.size(), 256, [&](size_t b, size_t e, size_t) {
        std::vector<Vec3> lightvec(N);
        std::vector<std::array<Vec3, 3>> a(M);
        for (size_t p = b; p < e; ++p) {
            if (!mask[p]) continue;
            if (!has_depth[p]) {
                drop[p] = 1;
                continue;
            }
            for (size_t i = 0; i < N; ++i) {
                const IncidentSample in = incident_geometry(points[p], i, display);
                lightvec[i] = falloff(in.distance, fp) * in.direction;
            }
            for (size_t m = 0; m < M; ++m) {
                a[m] = {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
                for (const auto &[i, L] : radiance[m])
                    for (int c = 0; c < 3; ++c) a[m][c] += L[c] * lightvec[i];
            }
            std::array<Vec3, 3> bc;
            bool ok = true;
            int count = 0;
            for (int c = 0; c < 3 && ok; ++c) {
                Mat3 ata = Mat3::Zero();
                Vec3 aty = Vec3::Zero();
                count = 0;
                for (size_t m = 0; m < M; ++m) {
                    if (!valid[m][p]) continue;
                    ata += a[m][c] * a[m][c].transpose();
                    aty += a[m][c] * captures[m].rgb(p)[c];
                    ++count;
                }
                if (count < 3) {
                    ok = false;
                    break;
                }
                ok = detail::solve3(ata, aty, bc[c]);
            }
            const Vec3 g = 0.299 * bc[0] + 0.587 * bc[1] + 0.114 * bc[2];
            if (!ok || !(g.norm() > 0.0)) {
                drop[p] = 1;
                continue;
            }
            out.normal[p] = g / g.norm();
            out.pseudo_diffuse.set_rgb(p, Rgb(bc[0].norm(), bc[1].norm(), bc[2].norm()));
            double res = 0.0;
            for (size_t m = 0; m < M; ++m) {
                if (!valid[m][p]) continue;
                for (int c = 0; c < 3; ++c) {
                    const double r = captures[m].rgb(p)[c] - bc[c].dot(a[m][c]);
                    res += r * r;
                }
            }
            out.residual[p] = std::sqrt(res / (3.0 * count));
        }
    });
    for (size_t p = 0; p < drop.size(); ++p) {
        if (!drop[p]) continue;
        out.mask[p] = 0;
        ++out.dropped;
    }
    return out;
}

} // namespace dispir
