#ifndef VESSELSEG_NN_OPS_HPP_
#define VESSELSEG_NN_OPS_HPP_

#include <cstdint>
#include <vector>

#include "vesselseg/tensor.hpp"

// Low-level 3D network primitives with explicit forward/backward pairs.
// Weight layouts:
//   conv3d            w[co][ci][kz][ky][kx], b[co]; "same" zero padding
//                     (k-1)/2 for odd k, stride 1 or 2.
//   conv_transpose2x  w[co][ci][kz][ky][kx] with k=2, stride 2 (each output
//                     voxel receives exactly one kernel tap).
// All loops accumulate in a fixed order so results are bitwise reproducible
// for any thread count.

namespace vesselseg::nn {

struct ConvDims {
  int cin = 0, cout = 0, k = 3, stride = 1;
  std::int64_t weight_count() const {
    return static_cast<std::int64_t>(cout) * cin * k * k * k;
  }
};

Tensor conv3d_forward(const Tensor& in, const ConvDims& cd, const double* w,
                      const double* b);
// gin may be null (input gradient not needed); gw/gb are accumulated into.
void conv3d_backward(const Tensor& in, const ConvDims& cd, const double* w,
                     const Tensor& gout, Tensor* gin, double* gw, double* gb);

Tensor conv_transpose2x_forward(const Tensor& in, int cout, const double* w,
                                const double* b);
void conv_transpose2x_backward(const Tensor& in, int cout, const double* w,
                               const Tensor& gout, Tensor* gin, double* gw,
                               double* gb);

// Per-channel instance normalization (statistics over the spatial extent of
// each forward pass). Caches xhat and inv_std for backward.
struct InstanceNormCache {
  Tensor xhat;
  std::vector<double> inv_std;
};
Tensor instance_norm_forward(const Tensor& in, const double* gamma,
                             const double* beta, InstanceNormCache* cache,
                             double eps = 1e-5);
void instance_norm_backward(const InstanceNormCache& cache, const double* gamma,
                            const Tensor& gout, Tensor* gin, double* ggamma,
                            double* gbeta);

Tensor leaky_relu_forward(const Tensor& in, double slope);
void leaky_relu_backward(const Tensor& in, double slope, const Tensor& gout,
                         Tensor* gin);

Tensor relu_forward(const Tensor& in);
void relu_backward(const Tensor& in, const Tensor& gout, Tensor* gin);

Tensor sigmoid_forward(const Tensor& in);
void sigmoid_backward(const Tensor& out, const Tensor& gout, Tensor* gin);

// 2x2x2 max pooling, stride 2 (even input dims expected).
Tensor maxpool2_forward(const Tensor& in, std::vector<std::int32_t>* argmax);
void maxpool2_backward(const Tensor& in, const Tensor& gout,
                       const std::vector<std::int32_t>& argmax, Tensor* gin);

// Nearest-neighbor 2x upsampling.
Tensor upsample2_forward(const Tensor& in);
void upsample2_backward(const Tensor& in, const Tensor& gout, Tensor* gin);

// Channel concatenation [a; b].
Tensor concat_forward(const Tensor& a, const Tensor& b);
void concat_backward(const Tensor& gout, int ca, Tensor* ga, Tensor* gb);

}  // namespace vesselseg::nn

#endif  // VESSELSEG_NN_OPS_HPP_
