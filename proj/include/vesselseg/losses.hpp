#ifndef VESSELSEG_LOSSES_HPP_
#define VESSELSEG_LOSSES_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "vesselseg/ensemble.hpp"
#include "vesselseg/tensor.hpp"
#include "vesselseg/volume.hpp"

namespace vesselseg {

struct LossConfig {
  double w_bg = 0.1;
  double w_fg = 0.9;
  double lambda = 10.0;
  double epsilon = 1e-7;  // log-clamp floor
  int s_prep = 20;        // samples for uncertainty-map preparation

  // kHadamardLog is the published form -(U*y) log(U*yhat); kWeightedCeByU is
  // the ablation alternative -(U*y) log(yhat).
  enum class UncertaintyMode { kHadamardLog, kWeightedCeByU };
  UncertaintyMode mode = UncertaintyMode::kHadamardLog;

  void validate() const;
};

// Mean over voxels of -[w_fg*y*log(yhat) + w_bg*(1-y)*log(1-yhat)], log
// arguments clamped to [eps, 1-eps].
double weighted_cross_entropy(const Volume& pred, const Mask& target,
                              const LossConfig& cfg);
Volume weighted_cross_entropy_grad(const Volume& pred, const Mask& target,
                                   const LossConfig& cfg);

// Mean over voxels of -(U.y)*log(clamp(U.yhat, eps, 1)) — the elementwise
// (Hadamard) products of the uncertainty-weighted objective.
double uncertainty_loss(const Volume& pred, const Mask& target,
                        const Volume& umap, const LossConfig& cfg);
Volume uncertainty_loss_grad(const Volume& pred, const Mask& target,
                             const Volume& umap, const LossConfig& cfg);

// weighted_cross_entropy + lambda * uncertainty_loss.
double total_loss(const Volume& pred, const Mask& target, const Volume& umap,
                  const LossConfig& cfg);
Volume total_loss_grad(const Volume& pred, const Mask& target,
                       const Volume& umap, const LossConfig& cfg);

// Fused path for the training loop: evaluates the stage loss on a network
// output tensor and accumulates scale * dL/dpred into grad_accum. umap may be
// null (stage 1: plain weighted cross-entropy).
double stage_loss_with_grad(const Tensor& pred, const Mask& target,
                            const Volume* umap, const LossConfig& cfg,
                            double scale, Tensor* grad_accum);

// Frozen per-training-image variance maps for stage 2.
struct UncertaintyMapSet {
  std::map<std::string, VarianceMap> maps;  // keyed by training-image id
  std::string checkpoint_id;
  int s_prep = 0;
  std::uint64_t seed = 0;
};

struct TrainImage {
  std::string id;
  Volume image;
  Mask mask;
};

// Runs sample_forward(s_prep) on every training image (padded as needed) and
// stores the per-voxel population variance of the foreground probability.
// The registry must hold a trained stage-1 checkpoint.
UncertaintyMapSet prepare_uncertainty_maps(SubModelRegistry& registry,
                                           const std::vector<TrainImage>& train,
                                           const LossConfig& cfg,
                                           std::uint64_t seed);

void save_uncertainty_maps(const UncertaintyMapSet& set,
                           const std::filesystem::path& dir);
UncertaintyMapSet load_uncertainty_maps(const std::filesystem::path& dir);

}  // namespace vesselseg

#endif  // VESSELSEG_LOSSES_HPP_
