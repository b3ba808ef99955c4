#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <stdexcept>

namespace voxdet {

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Ray {
  Eigen::Vector3d origin;
  Eigen::Vector3d direction;  // unit length
};

// Orbit camera looking at the origin. Azimuth 0 lies on +x and azimuth 90 on
// +z; elevation 90 is the +y pole, where the up vector falls back to +x.
struct Camera {
  double azimuth_deg = 0.0;
  double elevation_deg = 0.0;
  double radius = 2.0;
  double fov_deg = 60.0;  // vertical
  int width = 64;
  int height = 64;

  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Vector3d forward = Eigen::Vector3d::UnitX();
  Eigen::Vector3d right = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d up = Eigen::Vector3d::UnitY();

  // Ray through the center of pixel (px, py); py = 0 is the top row.
  Ray pixel_ray(int px, int py) const;
};

// Throws RenderError("InvalidParam: ...") when radius <= 0, fov outside
// (0,180) or the image is empty.
Camera orbit_camera(double azimuth_deg, double elevation_deg, double radius, double fov_deg, int width,
                    int height);

}  // namespace voxdet
