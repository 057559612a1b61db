#pragma once

#include "dispir/core.hpp"
#include "dispir/scene_model.hpp"

#include <limits>
#include <vector>

namespace dispir {

inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

// Mean angular error in degrees over the mask. atan2(|a x b|, a.b) stays
// accurate near 0 and is exactly 0 for identical vectors.
inline double normal_mae(const NormalMap &est, const NormalMap &gt, const Mask &mask) {
    if (!est.same_shape(gt) || !est.same_shape(mask)) throw DataError("normal_mae: shape mismatch");
    double sum = 0.0;
    size_t n = 0;
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        sum += std::atan2(est[p].cross(gt[p]).norm(), est[p].dot(gt[p]));
        ++n;
    }
    if (n == 0) throw DataError("normal_mae: empty mask");
    return rad_to_deg(sum / static_cast<double>(n));
}

struct PsnrOptions {
    bool saturation_exclude = false;
    double saturation = 0.98; // entries where gt exceeds this are dropped when excluding
};

// 10 log10(1 / MSE) with peak 1; identical inputs give +infinity.
inline double psnr(const Image &est, const Image &gt, const Mask *mask = nullptr,
                   PsnrOptions opt = {}) {
    if (!est.same_shape(gt)) throw DataError("psnr: shape mismatch");
    if (mask && (mask->width() != gt.width() || mask->height() != gt.height()))
        throw DataError("psnr: mask shape mismatch");
    const int C = gt.channels();
    double sse = 0.0;
    size_t n = 0;
    for (size_t p = 0; p < gt.pixel_count(); ++p) {
        if (mask && !(*mask)[p]) continue;
        for (int c = 0; c < C; ++c) {
            const size_t k = p * C + c;
            if (opt.saturation_exclude && gt[k] > opt.saturation) continue;
            const double d = est[k] - gt[k];
            sse += d * d;
            ++n;
        }
    }
    if (n == 0) throw DataError("psnr: empty selection");
    const double mse = sse / static_cast<double>(n);
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
    std::vector<double> w(size);
    const int r = size / 2;
    double sum = 0.0;
    for (int k = 0; k < size; ++k) {
        w[k] = std::exp(-0.5 * (k - r) * (k - r) / (sigma * sigma));
        sum += w[k];
    }
    for (double &v : w) v /= sum;
    return w;
}

// Separable 'valid' filtering of one channel.
inline std::vector<double> filter_valid(const std::vector<double> &src, int W, int H,
                                        const std::vector<double> &w) {
    const int K = static_cast<int>(w.size());
    const int Wo = W - K + 1, Ho = H - K + 1;
    std::vector<double> tmp(static_cast<size_t>(Wo) * H);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < Wo; ++x) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += w[k] * src[static_cast<size_t>(y) * W + x + k];
            tmp[static_cast<size_t>(y) * Wo + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(Wo) * Ho);
    for (int y = 0; y < Ho; ++y)
        for (int x = 0; x < Wo; ++x) {
            double acc = 0.0;
            for (int k = 0; k < K; ++k) acc += w[k] * tmp[static_cast<size_t>(y + k) * Wo + x];
            out[static_cast<size_t>(y) * Wo + x] = acc;
        }
    return out;
}

} // namespace detail

// Mean local SSIM: 11x11 Gaussian window (sigma 1.5), K1 0.01, K2 0.03,
// dynamic range 1, averaged over valid window positions and channels.
inline double ssim(const Image &est, const Image &gt) {
    constexpr int kWindow = 11;
    if (!est.same_shape(gt)) throw DataError("ssim: shape mismatch");
    const int W = gt.width(), H = gt.height(), C = gt.channels();
    if (W < kWindow || H < kWindow) throw DataError("ssim: image smaller than the 11x11 window");
    const auto w = detail::gaussian_window(kWindow, 1.5);
    constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    double total = 0.0;
    size_t count = 0;
    const size_t npix = gt.pixel_count();
    for (int c = 0; c < C; ++c) {
        std::vector<double> x(npix), y(npix), xx(npix), yy(npix), xy(npix);
        for (size_t p = 0; p < npix; ++p) {
            x[p] = est[p * C + c];
            y[p] = gt[p * C + c];
            xx[p] = x[p] * x[p];
            yy[p] = y[p] * y[p];
            xy[p] = x[p] * y[p];
        }
        const auto mx = detail::filter_valid(x, W, H, w);
        const auto my = detail::filter_valid(y, W, H, w);
        const auto sxx = detail::filter_valid(xx, W, H, w);
        const auto syy = detail::filter_valid(yy, W, H, w);
        const auto sxy = detail::filter_valid(xy, W, H, w);
        for (size_t k = 0; k < mx.size(); ++k) {
            const double vx = sxx[k] - mx[k] * mx[k];
            const double vy = syy[k] - my[k] * my[k];
            const double cov = sxy[k] - mx[k] * my[k];
            total += ((2 * mx[k] * my[k] + C1) * (2 * cov + C2)) /
                     ((mx[k] * mx[k] + my[k] * my[k] + C1) * (vx + vy + C2));
            ++count;
        }
    }
    return total / static_cast<double>(count);
}

struct AngularSample {
    double theta_h = 0.0;
    double theta_d = 0.0;
};

// Rusinkiewicz half/difference angles for one light-view pair.
inline AngularSample rusinkiewicz_angles(const Vec3 &i, const Vec3 &o, const Vec3 &n) {
    const Vec3 h = (i + o).normalized();
    return {std::acos(std::clamp(n.dot(h), -1.0, 1.0)), std::acos(std::clamp(h.dot(i), -1.0, 1.0))};
}

// (theta_h, theta_d) for every masked pixel and front-facing superpixel.
inline std::vector<AngularSample> angular_coverage(const SceneMaps &scene,
                                                   const DisplayModel &display,
                                                   const CameraModel &camera) {
    std::vector<AngularSample> out;
    const Vec3 eye = camera.center();
    for (size_t p = 0; p < scene.mask.size(); ++p) {
        if (!scene.mask[p]) continue;
        const Vec3 &x = scene.points[p];
        const Vec3 &n = scene.normal[p];
        const Vec3 o = (eye - x).normalized();
        if (n.dot(o) <= 0.0) continue;
        for (size_t k = 0; k < display.size(); ++k) {
            const Vec3 i = incident_geometry(x, k, display).direction;
            if (n.dot(i) <= 0.0) continue;
            out.push_back(rusinkiewicz_angles(i, o, n));
        }
    }
    return out;
}

// Row-major bins x bins histogram over [0, pi/2]^2; row = theta_d bin, col = theta_h bin.
inline std::vector<size_t> coverage_histogram(const std::vector<AngularSample> &samples, int bins) {
    if (bins < 1) throw DataError("coverage_histogram: bins must be >= 1");
    std::vector<size_t> h(static_cast<size_t>(bins) * bins, 0);
    auto bin_of = [bins](double a) {
        return std::clamp(static_cast<int>(a / (kPi / 2) * bins), 0, bins - 1);
    };
    for (const auto &s : samples) ++h[static_cast<size_t>(bin_of(s.theta_d)) * bins + bin_of(s.theta_h)];
    return h;
}

} // namespace dispir
