#pragma once

#include "dispir/core.hpp"

#include <array>
#include <span>
#include <vector>

namespace dispir {

inline constexpr double kMinRoughness = 1e-3;
inline constexpr double kFresnelF0 = 0.04;

// Cook-Torrance reflectance with GGX distribution (alpha = roughness^2),
// height-correlated Smith masking and Schlick Fresnel. All three terms are
// evaluated per RGB channel with that channel's roughness.
struct CookTorranceParams {
    Rgb diffuse = Rgb::Zero();
    Rgb specular = Rgb::Zero();
    Rgb roughness = Rgb::Constant(0.5);

    void validate() const {
        if ((diffuse < 0.0).any() || (diffuse > 1.0).any())
            throw DataError("CookTorranceParams: diffuse albedo outside [0,1]");
        if ((specular < 0.0).any() || (specular > 1.0).any())
            throw DataError("CookTorranceParams: specular albedo outside [0,1]");
        if ((roughness <= 0.0).any() || (roughness > 1.0).any())
            throw DataError("CookTorranceParams: roughness outside (0,1]");
    }

    // Projects every component back into its admissible range.
    void clamp() {
        diffuse = diffuse.max(0.0).min(1.0);
        specular = specular.max(0.0).min(1.0);
        roughness = roughness.max(kMinRoughness).min(1.0);
    }
};

struct BasisBrdfSet {
    std::vector<CookTorranceParams> bases;

    size_t size() const { return bases.size(); }

    void validate() const {
        if (bases.empty()) throw DataError("BasisBrdfSet: needs at least one basis");
        for (const auto &b : bases) b.validate();
    }
};

// Per-pixel convex weights, J values per pixel stored contiguously.
class WeightMaps {
  public:
    WeightMaps() = default;
    WeightMaps(int width, int height, int count, double fill = 0.0)
        : width_(width), height_(height), count_(count),
          data_(static_cast<size_t>(width) * height * count, fill) {
        if (count < 1) throw DataError("WeightMaps: J must be >= 1");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    int count() const { return count_; }

    std::span<double> at(size_t pixel) {
        return {data_.data() + pixel * count_, static_cast<size_t>(count_)};
    }
    std::span<const double> at(size_t pixel) const {
        return {data_.data() + pixel * count_, static_cast<size_t>(count_)};
    }

    void validate(const Mask &mask) const {
        if (!mask.same_shape(width_, height_)) throw DataError("WeightMaps: mask shape mismatch");
        for (size_t p = 0; p < mask.size(); ++p) {
            if (!mask[p]) continue;
            double sum = 0.0;
            for (double w : at(p)) {
                if (w < 0.0) throw DataError("WeightMaps: negative weight");
                sum += w;
            }
            if (std::abs(sum - 1.0) > 1e-5) throw DataError("WeightMaps: weights do not sum to 1");
        }
    }

    std::vector<double> &data() { return data_; }
    const std::vector<double> &data() const { return data_; }

  private:
    int width_ = 0;
    int height_ = 0;
    int count_ = 0;
    std::vector<double> data_;
};

// Shared cosines for one (i, o, n) configuration.
struct BrdfGeometry {
    Vec3 half;
    double cos_i = 0.0; // n.i
    double cos_o = 0.0; // n.o
    double cos_h = 0.0; // n.h
    double cos_d = 0.0; // o.h
    bool backfacing = false;
};

inline BrdfGeometry brdf_geometry(const Vec3 &i, const Vec3 &o, const Vec3 &n) {
    BrdfGeometry g;
    g.cos_i = n.dot(i);
    g.cos_o = n.dot(o);
    g.backfacing = !(g.cos_i > 0.0) || !(g.cos_o > 0.0);
    const Vec3 sum = i + o;
    const double len = sum.norm();
    g.half = len > 0.0 ? Vec3(sum / len) : n;
    g.cos_h = n.dot(g.half);
    g.cos_d = std::max(0.0, o.dot(g.half));
    return g;
}

inline double schlick_fresnel(double cos_d) {
    const double m = 1.0 - cos_d;
    const double m2 = m * m;
    return kFresnelF0 + (1.0 - kFresnelF0) * m2 * m2 * m;
}

// Specular lobe D F G / (4 (n.i)(n.o)) for one channel and its partials.
struct LobeTerms {
    double value = 0.0;
    double d_roughness = 0.0;
    double d_cos_i = 0.0;
    double d_cos_o = 0.0;
    double d_cos_h = 0.0;
};

template <bool WithDerivatives = true>
inline LobeTerms specular_lobe(double roughness, const BrdfGeometry &g, double fresnel) {
    LobeTerms out;
    if (g.backfacing) return out;
    const double sigma = std::max(roughness, kMinRoughness);
    const double alpha = sigma * sigma;
    const double a = alpha * alpha;
    const double ch2 = g.cos_h * g.cos_h;
    const double t = ch2 * (a - 1.0) + 1.0;
    const double D = a / (kPi * t * t);

    auto q_of = [a](double c) { return a * (1.0 - c * c) / (c * c); };
    const double qi = q_of(g.cos_i);
    const double qo = q_of(g.cos_o);
    const double ri = std::sqrt(1.0 + qi);
    const double ro = std::sqrt(1.0 + qo);
    const double G = 1.0 / (1.0 + 0.5 * (ri - 1.0) + 0.5 * (ro - 1.0));

    const double denom = 4.0 * g.cos_i * g.cos_o;
    out.value = D * fresnel * G / denom;
    if constexpr (!WithDerivatives) return out;

    const double t3 = t * t * t;
    const double dD_da = (t - 2.0 * a * ch2) / (kPi * t3);
    const double dD_dch = -4.0 * a * g.cos_h * (a - 1.0) / (kPi * t3);

    // dLambda/dq = 1 / (4 sqrt(1+q))
    const double dLi_dq = 0.25 / ri;
    const double dLo_dq = 0.25 / ro;
    const double ci2 = g.cos_i * g.cos_i;
    const double co2 = g.cos_o * g.cos_o;
    const double dqi_da = (1.0 - ci2) / ci2;
    const double dqo_da = (1.0 - co2) / co2;
    const double dqi_dci = -2.0 * a / (ci2 * g.cos_i);
    const double dqo_dco = -2.0 * a / (co2 * g.cos_o);
    const double G2 = G * G;
    const double dG_da = -G2 * (dLi_dq * dqi_da + dLo_dq * dqo_da);
    const double dG_dci = -G2 * dLi_dq * dqi_dci;
    const double dG_dco = -G2 * dLo_dq * dqo_dco;

    const double k = fresnel / denom;
    const double dS_da = k * (dD_da * G + D * dG_da);
    // a = sigma^4; the clamp makes the lobe flat below kMinRoughness.
    out.d_roughness = roughness > kMinRoughness ? dS_da * 4.0 * sigma * alpha : 0.0;
    out.d_cos_i = D * fresnel * (dG_dci / g.cos_i - G / ci2) / (4.0 * g.cos_o);
    out.d_cos_o = D * fresnel * (dG_dco / g.cos_o - G / co2) / (4.0 * g.cos_i);
    out.d_cos_h = k * G * dD_dch;
    return out;
}

// f = rho_d + rho_s * D F G / (4 (n.i)(n.o)); backfacing configurations
// return rho_d alone and set *backfacing.
inline Rgb eval_cook_torrance(const CookTorranceParams &p, const Vec3 &i, const Vec3 &o,
                              const Vec3 &n, bool *backfacing = nullptr) {
    const BrdfGeometry g = brdf_geometry(i, o, n);
    if (backfacing) *backfacing = g.backfacing;
    if (g.backfacing) return p.diffuse;
    const double F = schlick_fresnel(g.cos_d);
    Rgb f = p.diffuse;
    for (int c = 0; c < 3; ++c) f[c] += p.specular[c] * specular_lobe<false>(p.roughness[c], g, F).value;
    return f;
}

inline void check_simplex(std::span<const double> w, size_t expected) {
    if (w.size() != expected) throw DataError("basis weights: length does not match J");
    double sum = 0.0;
    for (double v : w) {
        if (v < 0.0) throw DataError("basis weights: negative weight");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-5) throw DataError("basis weights: not on the simplex");
}

inline Rgb eval_basis(const BasisBrdfSet &set, std::span<const double> w, const Vec3 &i,
                      const Vec3 &o, const Vec3 &n) {
    check_simplex(w, set.size());
    Rgb f = Rgb::Zero();
    for (size_t j = 0; j < set.size(); ++j)
        if (w[j] != 0.0) f += w[j] * eval_cook_torrance(set.bases[j], i, o, n);
    return f;
}

// Partials of the mixture f = sum_j w_j f_j. Channels are independent, so the
// per-basis parameter gradients are diagonal and stored as RGB triples
// (entry c is df_c / dparam_c). normal[c] is df_c/dn projected onto the
// tangent plane of n.
struct BrdfGradient {
    Rgb value = Rgb::Zero();
    std::vector<Rgb> diffuse;
    std::vector<Rgb> specular;
    std::vector<Rgb> roughness;
    std::vector<Rgb> weight;
    std::array<Vec3, 3> normal{Vec3::Zero(), Vec3::Zero(), Vec3::Zero()};
    bool backfacing = false;
};

inline BrdfGradient grad_brdf(const BasisBrdfSet &set, std::span<const double> w, const Vec3 &i,
                              const Vec3 &o, const Vec3 &n) {
    check_simplex(w, set.size());
    const size_t J = set.size();
    BrdfGradient out;
    out.diffuse.assign(J, Rgb::Zero());
    out.specular.assign(J, Rgb::Zero());
    out.roughness.assign(J, Rgb::Zero());
    out.weight.assign(J, Rgb::Zero());

    const BrdfGeometry g = brdf_geometry(i, o, n);
    out.backfacing = g.backfacing;
    const double F = schlick_fresnel(g.cos_d);
    for (size_t j = 0; j < J; ++j) {
        const CookTorranceParams &p = set.bases[j];
        Rgb fj = p.diffuse;
        out.diffuse[j] = Rgb::Constant(w[j]);
        for (int c = 0; c < 3; ++c) {
            const LobeTerms lobe = specular_lobe(p.roughness[c], g, F);
            fj[c] += p.specular[c] * lobe.value;
            out.specular[j][c] = w[j] * lobe.value;
            out.roughness[j][c] = w[j] * p.specular[c] * lobe.d_roughness;
            const double s = w[j] * p.specular[c];
            out.normal[c] += s * (lobe.d_cos_i * i + lobe.d_cos_o * o + lobe.d_cos_h * g.half);
        }
        out.weight[j] = fj;
        out.value += w[j] * fj;
    }
    for (auto &gn : out.normal) gn -= gn.dot(n) * n;
    return out;
}

// Normalized-exponential map from unconstrained logits onto the simplex.
inline void softmax(std::span<const double> logits, std::span<double> out) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double l : logits) mx = std::max(mx, l);
    double sum = 0.0;
    for (size_t k = 0; k < logits.size(); ++k) {
        out[k] = std::exp(logits[k] - mx);
        sum += out[k];
    }
    for (double &v : out) v /= sum;
}

} // namespace dispir
