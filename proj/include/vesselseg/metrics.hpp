#ifndef VESSELSEG_METRICS_HPP_
#define VESSELSEG_METRICS_HPP_

#include <string>

#include "vesselseg/volume.hpp"

namespace vesselseg {

struct MetricRecord {
  std::string image_id;
  std::string dataset_id;
  double sensitivity = 0.0;
  double precision = 0.0;
  double dice = 0.0;
  double cldice = 0.0;
};

// 2|P.G| / (|P|+|G|); both empty -> 1.
double dice(const Mask& pred, const Mask& gt);
// TP/(TP+FP); empty denominator -> 1 when both masks empty, else 0.
double precision(const Mask& pred, const Mask& gt);
// TP/(TP+FN); empty denominator -> 1 when both masks empty, else 0.
double sensitivity(const Mask& pred, const Mask& gt);

// Topology-preserving thinning to an (approximate) medial axis: iterative
// deletion of simple border voxels (26-connected foreground / 6-connected
// background), with curve endpoints protected. Deterministic; the result is
// a subset of the input with the same 26-connected component count.
Mask skeletonize3d(const Mask& mask);

// Centerline Dice: harmonic mean of topology precision |S_p.gt|/|S_p| and
// topology sensitivity |S_g.pred|/|S_g| over the two skeletons. Both masks
// empty -> 1; exactly one empty -> 0.
double cl_dice(const Mask& pred, const Mask& gt);

// Keeps only the largest 26-connected foreground component (ties broken by
// the smallest lexicographic seed voxel in (z,y,x) raster order).
Mask largest_connected_component(const Mask& mask);

MetricRecord evaluate_pair(const Mask& pred, const Mask& gt,
                           const std::string& image_id,
                           const std::string& dataset_id);

}  // namespace vesselseg

#endif  // VESSELSEG_METRICS_HPP_
