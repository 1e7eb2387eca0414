#ifndef VESSELSEG_UNCERTAINTY_HPP_
#define VESSELSEG_UNCERTAINTY_HPP_

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vesselseg/ensemble.hpp"
#include "vesselseg/volume.hpp"

namespace vesselseg {

struct UQResult {
  Volume mean;
  VarianceMap variance;
  int s = 0;
  std::uint64_t seed = 0;
};

// Per-voxel arithmetic mean and population variance (divide by s) over the
// sample stack.
UQResult aggregate(const SampleStack& stack);

// Strictly-greater-than-threshold binarization: values <= threshold map to 0.
Mask binarize(const Volume& mean, double threshold = 0.5);

// Reassigns foreground voxels with variance > tau to background; background
// voxels are never promoted.
Mask threshold_correct(const Mask& mask, const VarianceMap& variance,
                       double tau);

double average_variance(const VarianceMap& variance);

struct SparsificationCurve {
  std::vector<double> thresholds;     // descending
  std::vector<double> metric_values;  // per threshold, after correction
  std::string metric_name;
};

using MetricFn = std::function<double(const Mask& pred, const Mask& gt)>;

// Evaluates metric_fn(threshold_correct(mask, variance, tau), gt) for each
// tau. Thresholds must be positive, finite and sorted (either direction);
// the curve is stored with descending tau.
SparsificationCurve sparsification_curve(const Mask& mask,
                                         const VarianceMap& variance,
                                         const Mask& gt,
                                         const std::vector<double>& taus,
                                         const MetricFn& metric_fn,
                                         const std::string& metric_name);

// Default sweep: 20 log-spaced thresholds from 1e-6 to 0.25, descending.
std::vector<double> default_tau_grid(int count = 20, double lo = 1e-6,
                                     double hi = 0.25);

}  // namespace vesselseg

#endif  // VESSELSEG_UNCERTAINTY_HPP_
