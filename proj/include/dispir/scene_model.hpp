#pragma once

#include "dispir/core.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace dispir {

// Pinhole camera without distortion. pose maps world points into the camera
// frame: x_cam = rotation * x_world + translation. The world frame is the
// reference camera frame, so the reference camera has identity pose.
class CameraModel {
  public:
    CameraModel() = default;
    CameraModel(double focal_px, Eigen::Vector2d principal, int width, int height,
                Mat3 rotation = Mat3::Identity(), Vec3 translation = Vec3::Zero())
        : focal_px_(focal_px), principal_(std::move(principal)), width_(width),
          height_(height), rotation_(std::move(rotation)), translation_(std::move(translation)) {
        if (!(focal_px_ > 0)) throw DataError("CameraModel: focal length must be positive");
        if (width_ < 1 || height_ < 1) throw DataError("CameraModel: resolution must be >= 1");
        const Mat3 rtr = rotation_.transpose() * rotation_;
        if ((rtr - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6 ||
            std::abs(rotation_.determinant() - 1.0) > 1e-6)
            throw DataError("CameraModel: rotation must be orthonormal with det +1");
    }

    double focal_px() const { return focal_px_; }
    const Eigen::Vector2d &principal() const { return principal_; }
    int width() const { return width_; }
    int height() const { return height_; }
    const Mat3 &rotation() const { return rotation_; }
    const Vec3 &translation() const { return translation_; }

    Vec3 center() const { return -rotation_.transpose() * translation_; }

    // Pixel (u, v) with z-depth along the optical axis -> world point.
    Vec3 unproject(double u, double v, double depth) const {
        const Vec3 cam((u - principal_.x()) / focal_px_ * depth,
                       (v - principal_.y()) / focal_px_ * depth, depth);
        return rotation_.transpose() * (cam - translation_);
    }

    // World point -> (u, v, depth).
    Vec3 project(const Vec3 &world) const {
        const Vec3 cam = rotation_ * world + translation_;
        return {focal_px_ * cam.x() / cam.z() + principal_.x(),
                focal_px_ * cam.y() / cam.z() + principal_.y(), cam.z()};
    }

  private:
    double focal_px_ = 1.0;
    Eigen::Vector2d principal_ = Eigen::Vector2d::Zero();
    int width_ = 1;
    int height_ = 1;
    Mat3 rotation_ = Mat3::Identity();
    Vec3 translation_ = Vec3::Zero();
};

// Display radiometric/geometric model: L_i = s * (P_i + B_i)^gamma per channel,
// emitted from superpixel i at superpixel_positions[i].
struct DisplayModel {
    std::vector<Vec3> superpixel_positions;
    double s = 1.0;
    double gamma = 1.0;
    std::vector<Rgb> backlight;
    int cols = 0;
    int rows = 0;

    size_t size() const { return superpixel_positions.size(); }

    void validate() const {
        if (cols < 1 || rows < 1) throw DataError("DisplayModel: grid dims must be >= 1");
        if (superpixel_positions.size() != static_cast<size_t>(cols) * rows)
            throw DataError("DisplayModel: N must equal cols * rows");
        if (backlight.size() != superpixel_positions.size())
            throw DataError("DisplayModel: backlight length must equal N");
        if (!(s > 0)) throw DataError("DisplayModel: s must be positive");
        if (!(gamma > 0)) throw DataError("DisplayModel: gamma must be positive");
        for (const Rgb &b : backlight)
            if ((b < 0.0).any() || (b > 1.0).any())
                throw DataError("DisplayModel: backlight outside [0,1]");
    }
};

struct SceneMaps {
    DepthMap depth;
    NormalMap normal;
    Mask mask;
    Grid<Vec3> points;
    Vec3 camera_center = Vec3::Zero();

    int width() const { return depth.width(); }
    int height() const { return depth.height(); }
};

struct IncidentSample {
    Vec3 direction;
    double distance = 0.0;
};

// Points for every pixel with depth > 0; invalid pixels get NaN and a cleared mask bit.
inline Grid<Vec3> backproject(const CameraModel &camera, const DepthMap &depth,
                              Mask *valid = nullptr) {
    if (!depth.same_shape(camera.width(), camera.height()))
        throw DataError("backproject: depth map " + std::to_string(depth.width()) + "x" +
                        std::to_string(depth.height()) + " does not match camera resolution " +
                        std::to_string(camera.width()) + "x" + std::to_string(camera.height()));
    const double nan = std::numeric_limits<double>::quiet_NaN();
    Grid<Vec3> points(depth.width(), depth.height(), Vec3::Constant(nan));
    if (valid) *valid = Mask(depth.width(), depth.height(), 0);
    for (int y = 0; y < depth.height(); ++y) {
        for (int x = 0; x < depth.width(); ++x) {
            const double d = depth(x, y);
            if (!(d > 0) || !std::isfinite(d)) continue;
            points(x, y) = camera.unproject(x, y, d);
            if (valid) (*valid)(x, y) = 1;
        }
    }
    return points;
}

// Assembles SceneMaps, dropping pixels with invalid depth from the mask.
inline SceneMaps make_scene(const CameraModel &camera, DepthMap depth, NormalMap normal,
                            Mask mask) {
    if (!depth.same_shape(normal) || !depth.same_shape(mask))
        throw DataError("make_scene: depth/normal/mask dimensions differ");
    SceneMaps scene;
    Mask valid;
    scene.points = backproject(camera, depth, &valid);
    scene.camera_center = camera.center();
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!valid[i]) mask[i] = 0;
        if (mask[i]) {
            const double n = normal[i].norm();
            if (std::abs(n - 1.0) > 1e-5)
                throw DataError("make_scene: masked normal is not unit length");
        }
    }
    scene.depth = std::move(depth);
    scene.normal = std::move(normal);
    scene.mask = std::move(mask);
    return scene;
}

inline IncidentSample incident_geometry(const Vec3 &point, const Vec3 &light_position) {
    const Vec3 delta = light_position - point;
    const double dist = delta.norm();
    if (!std::isfinite(dist)) throw DataError("incident_geometry: non-finite point");
    if (dist <= 0.0) throw NumericalError("incident_geometry: point coincides with superpixel");
    return {delta / dist, dist};
}

inline IncidentSample incident_geometry(const Vec3 &point, size_t superpixel_index,
                                        const DisplayModel &display) {
    if (superpixel_index >= display.size())
        throw DataError("incident_geometry: superpixel index out of range");
    return incident_geometry(point, display.superpixel_positions[superpixel_index]);
}

// Physical panel extents in meters (16:9 panels).
struct PanelExtent {
    double width_m;
    double height_m;
};

inline constexpr PanelExtent kPanel55Inch{1.21, 0.68};
inline constexpr PanelExtent kPanel32Inch{0.708, 0.398};

// Depth of the scene reference plane; objects sit 50 cm from the cameras.
inline constexpr double kSceneReferenceDepth = 0.5;

// Planar grid of superpixel centers facing +z. The panel plane sits at
// z = kSceneReferenceDepth - standoff and is centered on the optical axis.
inline DisplayModel synth_display(PanelExtent extent, int cols, int rows, double standoff) {
    if (cols < 1 || rows < 1) throw DataError("synth_display: grid dims must be >= 1");
    if (!(extent.width_m > 0) || !(extent.height_m > 0))
        throw DataError("synth_display: panel extent must be positive");
    DisplayModel d;
    d.cols = cols;
    d.rows = rows;
    const double z = kSceneReferenceDepth - standoff;
    d.superpixel_positions.reserve(static_cast<size_t>(cols) * rows);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double x = ((c + 0.5) / cols - 0.5) * extent.width_m;
            const double y = ((r + 0.5) / rows - 0.5) * extent.height_m;
            d.superpixel_positions.emplace_back(x, y, z);
        }
    }
    d.backlight.assign(d.superpixel_positions.size(), Rgb::Zero());
    return d;
}

enum class DisplayPreset { Inch55, Inch32 };

inline DisplayModel synth_display(DisplayPreset preset, double standoff = 0.5) {
    if (preset == DisplayPreset::Inch32) return synth_display(kPanel32Inch, 10, 5, standoff);
    return synth_display(kPanel55Inch, 16, 9, standoff);
}

// Largest angle between incident directions from `point` to any two superpixels.
inline double max_incident_spread(const DisplayModel &display, const Vec3 &point) {
    double best = 0.0;
    for (size_t a = 0; a < display.size(); ++a) {
        const Vec3 ia = incident_geometry(point, a, display).direction;
        for (size_t b = a + 1; b < display.size(); ++b) {
            const Vec3 ib = incident_geometry(point, b, display).direction;
            best = std::max(best, std::acos(std::clamp(ia.dot(ib), -1.0, 1.0)));
        }
    }
    return best;
}

} // namespace dispir
