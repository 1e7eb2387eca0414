#ifndef VESSELSEG_TENSOR_HPP_
#define VESSELSEG_TENSOR_HPP_

#include <cstdint>
#include <vector>

#include "vesselseg/volume.hpp"

namespace vesselseg {

// Dense (channels, depth, height, width) activation tensor, C order.
struct Tensor {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<double> v;

  Tensor() = default;
  Tensor(int c_, int d_, int h_, int w_, double fill = 0.0)
      : c(c_), d(d_), h(h_), w(w_),
        v(static_cast<std::size_t>(c_) * d_ * h_ * w_, fill) {}

  std::int64_t spatial() const { return static_cast<std::int64_t>(d) * h * w; }
  std::int64_t size() const { return static_cast<std::int64_t>(c) * spatial(); }

  std::int64_t index(int ci, int z, int y, int x) const {
    return ((static_cast<std::int64_t>(ci) * d + z) * h + y) * w + x;
  }
  double& at(int ci, int z, int y, int x) { return v[index(ci, z, y, x)]; }
  double at(int ci, int z, int y, int x) const { return v[index(ci, z, y, x)]; }

  double* channel(int ci) { return v.data() + ci * spatial(); }
  const double* channel(int ci) const { return v.data() + ci * spatial(); }

  bool same_dims(const Tensor& o) const {
    return c == o.c && d == o.d && h == o.h && w == o.w;
  }
};

inline Tensor tensor_from_volume(const Volume& vol) {
  Tensor t(1, vol.shape.z, vol.shape.y, vol.shape.x);
  t.v = vol.v;
  return t;
}

inline Volume volume_from_tensor(const Tensor& t, const Spacing& spacing = {
                                                       1.0, 1.0, 1.0}) {
  Volume vol({t.d, t.h, t.w}, 0.0, spacing);
  vol.v.assign(t.v.begin(), t.v.begin() + t.spatial());
  return vol;
}

}  // namespace vesselseg

#endif  // VESSELSEG_TENSOR_HPP_
