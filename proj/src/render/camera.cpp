#include "voxdet/camera.hpp"

#include <cmath>
#include <numbers>
#include <string>

namespace voxdet {

namespace {

double radians(double deg) { return deg * std::numbers::pi / 180.0; }

}  // namespace

Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius, double fov_deg, int width,
                    int height) {
  if (!(radius > 0.0) || !std::isfinite(radius))
    throw RenderError("InvalidParam: radius must be > 0, got " + std::to_string(radius));
  if (!(fov_deg > 0.0 && fov_deg < 180.0))
    throw RenderError("InvalidParam: fov must lie in (0, 180), got " + std::to_string(fov_deg));
  if (width < 1 || height < 1) throw RenderError("InvalidParam: image size must be at least 1x1");
  if (!std::isfinite(azimuth_deg) || !std::isfinite(elevation_deg))
    throw RenderError("InvalidParam: non-finite angle");

  Camera cam;
  cam.azimuth_deg = azimuth_deg;
  cam.elevation_deg = elevation_deg;
  cam.radius = radius;
  cam.fov_deg = fov_deg;
  cam.width = width;
  cam.height = height;

  const double az = radians(azimuth_deg);
  const double el = radians(elevation_deg);
  cam.position = radius * Eigen::Vector3d(std::cos(el) * std::cos(az), std::sin(el), std::cos(el) * std::sin(az));
  cam.forward = (-cam.position).normalized();
  Eigen::Vector3d right = cam.forward.cross(Eigen::Vector3d::UnitY());
  if (right.norm() < 1e-9) right = cam.forward.cross(Eigen::Vector3d::UnitX());
  cam.right = right.normalized();
  cam.up = cam.right.cross(cam.forward).normalized();
  return cam;
}

Ray Camera::pixel_ray(int px, int py) const {
  const double half = std::tan(fov_deg * std::numbers::pi / 360.0);
  const double aspect = static_cast<double>(width) / height;
  const double sx = ((px + 0.5) / width * 2.0 - 1.0) * half * aspect;
  const double sy = (1.0 - (py + 0.5) / height * 2.0) * half;
  return {position, (forward + sx * right + sy * up).normalized()};
}

}  // namespace voxdet
