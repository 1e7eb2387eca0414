#ifndef VESSELSEG_VOLUME_HPP_
#define VESSELSEG_VOLUME_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "vesselseg/errors.hpp"

namespace vesselseg {

// Axis order everywhere: (z, y, x), z-major (C order) in memory.
struct Shape3 {
  int z = 0;
  int y = 0;
  int x = 0;

  std::int64_t voxels() const {
    return static_cast<std::int64_t>(z) * y * x;
  }
  bool operator==(const Shape3&) const = default;
  std::string str() const {
    return "(" + std::to_string(z) + "," + std::to_string(y) + "," +
           std::to_string(x) + ")";
  }
};

using Spacing = std::array<double, 3>;  // mm per voxel, (z, y, x)

// Dense scalar field. Values are double in memory; the on-disk format is
// float32 (see volume_io).
struct Volume {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<double> v;

  Volume() = default;
  Volume(Shape3 s, double fill = 0.0, Spacing sp = {1.0, 1.0, 1.0})
      : shape(s), spacing(sp), v(static_cast<std::size_t>(s.voxels()), fill) {}

  std::int64_t index(int z, int y, int x) const {
    return (static_cast<std::int64_t>(z) * shape.y + y) * shape.x + x;
  }
  double& at(int z, int y, int x) { return v[index(z, y, x)]; }
  double at(int z, int y, int x) const { return v[index(z, y, x)]; }
  bool in_bounds(int z, int y, int x) const {
    return z >= 0 && z < shape.z && y >= 0 && y < shape.y && x >= 0 &&
           x < shape.x;
  }
};

// Per-voxel epistemic variance; same layout as Volume.
using VarianceMap = Volume;

// Binary field in {0,1}, stored as uint8.
struct Mask {
  Shape3 shape;
  Spacing spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(Shape3 s, std::uint8_t fill = 0, Spacing sp = {1.0, 1.0, 1.0})
      : shape(s), spacing(sp), v(static_cast<std::size_t>(s.voxels()), fill) {}

  std::int64_t index(int z, int y, int x) const {
    return (static_cast<std::int64_t>(z) * shape.y + y) * shape.x + x;
  }
  std::uint8_t& at(int z, int y, int x) { return v[index(z, y, x)]; }
  std::uint8_t at(int z, int y, int x) const { return v[index(z, y, x)]; }
  bool in_bounds(int z, int y, int x) const {
    return z >= 0 && z < shape.z && y >= 0 && y < shape.y && x >= 0 &&
           x < shape.x;
  }
  std::int64_t foreground_count() const {
    std::int64_t n = 0;
    for (auto b : v) n += (b != 0);
    return n;
  }
};

inline void require_same_shape(const Shape3& a, const Shape3& b,
                               const char* what) {
  if (!(a == b))
    throw ShapeError(std::string(what) + ": shape mismatch " + a.str() +
                     " vs " + b.str());
}

}  // namespace vesselseg

#endif  // VESSELSEG_VOLUME_HPP_
