#include "vesselseg/uncertainty.hpp"

#include <algorithm>
#include <cmath>

#include "vesselseg/errors.hpp"

namespace vesselseg {

UQResult aggregate(const SampleStack& stack) {
  if (stack.samples.empty())
    throw InvalidConfigError("aggregate needs at least one sample");
  const Volume& first = stack.samples.front();
  for (const auto& s : stack.samples)
    require_same_shape(first.shape, s.shape, "aggregate");

  UQResult r;
  r.s = stack.sample_count();
  r.mean = Volume(first.shape, 0.0, first.spacing);
  r.variance = Volume(first.shape, 0.0, first.spacing);
  const std::int64_t n = first.shape.voxels();
  const double inv_s = 1.0 / static_cast<double>(r.s);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < n; ++i) {
    const double v0 = stack.samples[0].v[i];
    bool all_equal = true;
    double sum = 0.0;
    for (const auto& s : stack.samples) {
      sum += s.v[i];
      all_equal &= (s.v[i] == v0);
    }
    if (all_equal) {
      // identical samples collapse exactly (no rounding residue)
      r.mean.v[i] = v0;
      r.variance.v[i] = 0.0;
      continue;
    }
    const double mean = sum * inv_s;
    double var = 0.0;
    for (const auto& s : stack.samples) {
      const double d = s.v[i] - mean;
      var += d * d;
    }
    var *= inv_s;
    r.mean.v[i] = mean;
    r.variance.v[i] = var < 0.0 ? 0.0 : var;
  }
  return r;
}

Mask binarize(const Volume& mean, double threshold) {
  Mask m(mean.shape, 0, mean.spacing);
  const std::int64_t n = mean.shape.voxels();
  for (std::int64_t i = 0; i < n; ++i) m.v[i] = mean.v[i] > threshold ? 1 : 0;
  return m;
}

Mask threshold_correct(const Mask& mask, const VarianceMap& variance,
                       double tau) {
  require_same_shape(mask.shape, variance.shape, "threshold_correct");
  if (tau < 0.0) throw DomainError("variance threshold must be >= 0");
  Mask out = mask;
  const std::int64_t n = mask.shape.voxels();
  for (std::int64_t i = 0; i < n; ++i)
    if (out.v[i] && variance.v[i] > tau) out.v[i] = 0;
  return out;
}

double average_variance(const VarianceMap& variance) {
  if (variance.v.empty()) throw InvalidConfigError("empty variance map");
  double acc = 0.0;
  for (double x : variance.v) acc += x;
  return acc / static_cast<double>(variance.v.size());
}

SparsificationCurve sparsification_curve(const Mask& mask,
                                         const VarianceMap& variance,
                                         const Mask& gt,
                                         const std::vector<double>& taus,
                                         const MetricFn& metric_fn,
                                         const std::string& metric_name) {
  if (taus.empty()) throw InvalidConfigError("empty threshold sweep");
  for (double t : taus)
    if (!(t > 0.0) || !std::isfinite(t))
      throw DomainError("thresholds must be positive and finite");
  const bool ascending = taus.size() > 1 && taus.front() < taus.back();
  for (std::size_t i = 1; i < taus.size(); ++i) {
    const bool ok = ascending ? taus[i - 1] <= taus[i] : taus[i - 1] >= taus[i];
    if (!ok) throw DomainError("threshold sweep must be sorted");
  }
  SparsificationCurve curve;
  curve.metric_name = metric_name;
  curve.thresholds = taus;
  if (ascending)
    std::reverse(curve.thresholds.begin(), curve.thresholds.end());
  curve.metric_values.reserve(curve.thresholds.size());
  for (double tau : curve.thresholds)
    curve.metric_values.push_back(
        metric_fn(threshold_correct(mask, variance, tau), gt));
  return curve;
}

std::vector<double> default_tau_grid(int count, double lo, double hi) {
  std::vector<double> taus(count);
  const double llo = std::log(lo), lhi = std::log(hi);
  for (int i = 0; i < count; ++i)
    taus[i] = std::exp(lhi + (llo - lhi) * i / (count - 1));
  taus.front() = hi;  // exact endpoint so tau >= max variance holds
  return taus;
}

}  // namespace vesselseg
