#pragma once

#include "dispir/brdf.hpp"
#include "dispir/core.hpp"
#include "dispir/forward_render.hpp"
#include "dispir/scene_model.hpp"

#include <string>

namespace dispir {

enum class ScenePreset { Plane, Sphere, TwoMaterialSphere, StepNormal };

inline ScenePreset parse_scene_preset(const std::string &name) {
    if (name == "plane") return ScenePreset::Plane;
    if (name == "sphere") return ScenePreset::Sphere;
    if (name == "two_material_sphere") return ScenePreset::TwoMaterialSphere;
    if (name == "step_normal") return ScenePreset::StepNormal;
    throw UsageError("unknown scene preset '" + name + "'");
}

inline std::string preset_name(ScenePreset p) {
    switch (p) {
    case ScenePreset::Plane: return "plane";
    case ScenePreset::Sphere: return "sphere";
    case ScenePreset::TwoMaterialSphere: return "two_material_sphere";
    case ScenePreset::StepNormal: return "step_normal";
    }
    return "";
}

struct SynthScene {
    CameraModel camera;
    SceneMaps scene;
    Reflectance reflectance;
    DisplayModel display;
    FalloffParams falloff;
    std::uint64_t seed = 0;
};

inline constexpr double kSphereRadius = 0.1;
inline const Vec3 kSphereCenter{0.0, 0.0, 0.55};
inline constexpr double kStepTiltDeg = 20.0;

inline CookTorranceParams lambertian(const Rgb &albedo) {
    return {albedo, Rgb::Zero(), Rgb::Constant(0.5)};
}

// Analytic scenes seen by a camera at the origin looking down +z, lit by the
// 55-inch display in the z = 0 plane (identity radiometry: s = 1, gamma = 1,
// no backlight). The focal length frames the sphere silhouette at 0.45 W.
// Every preset is analytic; the seed is recorded for provenance only.
inline SynthScene synth_scene(ScenePreset preset, int width, int height, std::uint64_t seed = 0) {
    if (width < 16 || height < 16) throw DataError("synth_scene: resolution must be >= 16x16");
    const double half_angle = std::asin(kSphereRadius / kSphereCenter.z());
    const double focal = 0.45 * width / std::tan(half_angle);
    const CameraModel cam(focal, Eigen::Vector2d((width - 1) / 2.0, (height - 1) / 2.0), width, height);

    DepthMap depth(width, height, 0.0);
    NormalMap normal(width, height, Vec3(0, 0, -1));
    Mask mask(width, height, 0);
    WeightMaps weights;
    BasisBrdfSet bases;

    const bool sphere = preset == ScenePreset::Sphere || preset == ScenePreset::TwoMaterialSphere;
    if (sphere) {
        const Vec3 &c = kSphereCenter;
        const double r = kSphereRadius;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const Vec3 d((x - cam.principal().x()) / focal, (y - cam.principal().y()) / focal, 1.0);
                // |t d - c|^2 = r^2, nearest root
                const double A = d.squaredNorm(), B = -2.0 * d.dot(c), C = c.squaredNorm() - r * r;
                const double disc = B * B - 4 * A * C;
                if (disc <= 0.0) continue;
                const double t = (-B - std::sqrt(disc)) / (2 * A);
                const size_t p = mask.index(x, y);
                depth[p] = t;
                normal[p] = ((t * d - c) / r).normalized();
                mask[p] = 1;
            }
    } else {
        const double tilt = kStepTiltDeg * kPi / 180.0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                const size_t p = mask.index(x, y);
                depth[p] = kSceneReferenceDepth;
                mask[p] = 1;
                if (preset == ScenePreset::StepNormal && x >= width / 2)
                    normal[p] = Vec3(std::sin(tilt), 0.0, -std::cos(tilt));
            }
    }

    switch (preset) {
    case ScenePreset::Plane:
    case ScenePreset::StepNormal:
        bases.bases = {lambertian(Rgb(0.20, 0.14, 0.08))};
        break;
    case ScenePreset::Sphere:
        bases.bases = {{Rgb(0.15, 0.12, 0.09), Rgb::Constant(0.3), Rgb::Constant(0.4)}};
        break;
    case ScenePreset::TwoMaterialSphere:
        bases.bases = {{Rgb(0.18, 0.06, 0.04), Rgb::Constant(0.3), Rgb::Constant(0.3)},
                       {Rgb(0.04, 0.10, 0.18), Rgb::Constant(0.5), Rgb::Constant(0.45)}};
        break;
    }
    const int J = static_cast<int>(bases.size());
    weights = WeightMaps(width, height, J, 0.0);
    SceneMaps scene = make_scene(cam, depth, normal, mask);
    for (size_t p = 0; p < mask.size(); ++p) {
        if (!mask[p]) continue;
        const int j = (J == 2 && scene.points[p].x() >= kSphereCenter.x()) ? 1 : 0;
        weights.at(p)[j] = 1.0;
    }

    DisplayModel display = synth_display(DisplayPreset::Inch55, kSceneReferenceDepth);
    return {cam, std::move(scene), {std::move(bases), std::move(weights)}, std::move(display), {}, seed};
}

} // namespace dispir
