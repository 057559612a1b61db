#pragma once

#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/scene_model.hpp"

#include <string>

namespace dispir {

inline DisplayPattern onehot_pattern(size_t N, size_t k) {
    if (k >= N) throw DataError("onehot pattern index " + std::to_string(k) + " out of range");
    DisplayPattern p{std::vector<Rgb>(N, Rgb::Zero())};
    p.values[k] = Rgb::Ones();
    return p;
}

inline DisplayPattern uniform_pattern(size_t N, double v) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("uniform pattern value outside [0,1]");
    return {std::vector<Rgb>(N, Rgb::Constant(v))};
}

// Per-superpixel component of the unit direction from the scene reference
// point (0, 0, kSceneReferenceDepth), min-max normalized to [0,1].
inline DisplayPattern gradient_pattern(const DisplayModel &display, int axis) {
    const Vec3 ref(0.0, 0.0, kSceneReferenceDepth);
    std::vector<double> v(display.size());
    for (size_t i = 0; i < display.size(); ++i)
        v[i] = (display.superpixel_positions[i] - ref).normalized()[axis];
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = *hi - *lo;
    DisplayPattern p{std::vector<Rgb>(display.size(), Rgb::Zero())};
    for (size_t i = 0; i < v.size(); ++i)
        p.values[i] = Rgb::Constant(span > 0.0 ? (v[i] - *lo) / span : 0.5);
    return p;
}

inline DisplayPattern complement_pattern(DisplayPattern p) {
    for (Rgb &v : p.values) v = 1.0 - v;
    return p;
}

// Generator grammar: onehot:<k> | uniform:<v> | gradient-x | gradient-y |
// gradient-z | complement:<generator>.
inline DisplayPattern generate_pattern(const std::string &spec, const DisplayModel &display) {
    const size_t N = display.size();
    auto arg = [&](const std::string &prefix) { return spec.substr(prefix.size()); };
    try {
        if (spec.rfind("onehot:", 0) == 0) {
            const long k = std::stol(arg("onehot:"));
            if (k < 0 || static_cast<size_t>(k) >= N)
                throw UsageError("onehot index " + std::to_string(k) + " outside [0, " + std::to_string(N) + ")");
            return onehot_pattern(N, static_cast<size_t>(k));
        }
        if (spec.rfind("uniform:", 0) == 0) return uniform_pattern(N, std::stod(arg("uniform:")));
        if (spec.rfind("complement:", 0) == 0)
            return complement_pattern(generate_pattern(arg("complement:"), display));
    } catch (const std::logic_error &) {
        throw UsageError("malformed pattern generator '" + spec + "'");
    }
    if (spec == "gradient-x") return gradient_pattern(display, 0);
    if (spec == "gradient-y") return gradient_pattern(display, 1);
    if (spec == "gradient-z") return gradient_pattern(display, 2);
    throw UsageError("unknown pattern generator '" + spec + "'");
}

inline bool is_pattern_generator(const std::string &spec) {
    for (const char *p : {"onehot:", "uniform:", "complement:"})
        if (spec.rfind(p, 0) == 0) return true;
    return spec == "gradient-x" || spec == "gradient-y" || spec == "gradient-z";
}

} // namespace dispir
