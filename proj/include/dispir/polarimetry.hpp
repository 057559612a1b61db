#pragma once

#include "dispir/core.hpp"

namespace dispir {

// Four linear-polarizer orientations 0/45/90/135 degrees.
struct PolarizedCapture {
    Image i0, i45, i90, i135;

    void validate() const {
        if (!i0.same_shape(i45) || !i0.same_shape(i90) || !i0.same_shape(i135))
            throw DataError("PolarizedCapture: angle images differ in shape");
    }
};

struct StokesImage {
    Image s0, s1, s2;
};

struct Separation {
    Image diffuse;
    Image specular;
    // 1 where s0 - |s_lin| went negative and diffuse was clamped to 0.
    Mask clamped;
};

inline StokesImage stokes_decompose(const PolarizedCapture &cap) {
    cap.validate();
    StokesImage st{cap.i0, cap.i0, cap.i0};
    for (size_t k = 0; k < cap.i0.size(); ++k) {
        st.s0[k] = 0.5 * (cap.i0[k] + cap.i45[k] + cap.i90[k] + cap.i135[k]);
        st.s1[k] = cap.i0[k] - cap.i90[k];
        st.s2[k] = cap.i45[k] - cap.i135[k];
    }
    return st;
}

inline Separation separate(const StokesImage &st) {
    if (!st.s0.same_shape(st.s1) || !st.s0.same_shape(st.s2))
        throw DataError("separate: Stokes components differ in shape");
    Separation out{st.s0, st.s0, Mask(st.s0.width(), st.s0.height(), 0)};
    const int C = st.s0.channels();
    for (size_t k = 0; k < st.s0.size(); ++k) {
        const double spec = std::hypot(st.s1[k], st.s2[k]);
        const double diff = st.s0[k] - spec;
        out.specular[k] = spec;
        out.diffuse[k] = std::max(diff, 0.0);
        if (diff < 0.0) out.clamped[k / C] = 1;
    }
    return out;
}

// Degree of linear polarization; 0 where s0 == 0.
inline Image dolp(const StokesImage &st) {
    Image out = st.s0;
    for (size_t k = 0; k < out.size(); ++k) {
        const double lin = std::hypot(st.s1[k], st.s2[k]);
        out[k] = st.s0[k] > 0.0 ? lin / st.s0[k] : 0.0;
    }
    return out;
}

// Angle of linear polarization in radians, in (-pi/2, pi/2].
inline Image aolp(const StokesImage &st) {
    Image out = st.s0;
    for (size_t k = 0; k < out.size(); ++k) out[k] = 0.5 * std::atan2(st.s2[k], st.s1[k]);
    return out;
}

// |(I0 + I90) - (I45 + I135)|, zero for any ideal linear-polarization measurement.
inline Image consistency_residual(const PolarizedCapture &cap) {
    cap.validate();
    Image out = cap.i0;
    for (size_t k = 0; k < out.size(); ++k)
        out[k] = std::abs((cap.i0[k] + cap.i90[k]) - (cap.i45[k] + cap.i135[k]));
    return out;
}

// Malus-law capture of unpolarized diffuse plus linearly polarized specular
// light whose polarization angle is specular_aolp.
inline PolarizedCapture simulate_polarized_capture(const Image &diffuse, const Image &specular,
                                                   double specular_aolp) {
    if (!diffuse.same_shape(specular))
        throw DataError("simulate_polarized_capture: diffuse/specular shapes differ");
    for (size_t k = 0; k < diffuse.size(); ++k)
        if (diffuse[k] < 0.0 || specular[k] < 0.0)
            throw DataError("simulate_polarized_capture: negative input");
    PolarizedCapture cap{diffuse, diffuse, diffuse, diffuse};
    const double angles[4] = {0.0, kPi / 4, kPi / 2, 3 * kPi / 4};
    Image *planes[4] = {&cap.i0, &cap.i45, &cap.i90, &cap.i135};
    for (int a = 0; a < 4; ++a) {
        const double c = std::cos(angles[a] - specular_aolp);
        const double malus = c * c;
        Image &plane = *planes[a];
        for (size_t k = 0; k < plane.size(); ++k)
            plane[k] = 0.5 * diffuse[k] + specular[k] * malus;
    }
    return cap;
}

} // namespace dispir
