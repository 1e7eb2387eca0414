#ifndef VESSELSEG_DATA_HPP_
#define VESSELSEG_DATA_HPP_

#include <cstdint>
#include <utility>

#include "vesselseg/volume.hpp"

namespace vesselseg {

// Synthetic branching-tube phantom: stand-in for angiography volumes.
struct PhantomConfig {
  Shape3 shape{64, 64, 64};
  Spacing spacing{1.0, 1.0, 1.0};
  int tree_count = 3;
  double branching_probability = 0.08;  // per growth step
  double radius_min = 1.3;              // voxels
  double radius_max = 2.4;
  double radius_decay = 0.8;  // child radius multiplier at branches
  double vessel_intensity_min = 0.75;
  double vessel_intensity_max = 0.95;
  double background_noise_sigma = 0.05;
  bool skull_shell = true;  // bright spherical shell near the boundary
  double skull_intensity = 0.8;
  double bias_field_amplitude = 0.0;

  void validate() const;
};

// Rasterizes stochastic branching tubular trees; the mask marks tube voxels.
// Deterministic given the seed. Rejects and resamples until the foreground
// fraction lands in [0.1%, 5%] (up to 100 attempts), except when
// tree_count == 0, which yields an empty mask over pure background.
std::pair<Volume, Mask> generate_phantom(const PhantomConfig& cfg,
                                         std::uint64_t seed);

// (v - min) / (max - min); a constant volume maps to all zeros.
Volume minmax_normalize(const Volume& v);

struct PatchOrigin {
  int z = 0, y = 0, x = 0;
};

// Uniformly picks a foreground voxel and returns the origin of the patch
// centered on it, clamped to the volume bounds (the chosen voxel always
// remains inside the patch).
PatchOrigin sample_patch_origin(const Mask& mask, Shape3 patch_shape,
                                std::uint64_t seed);
Volume extract_patch(const Volume& v, PatchOrigin origin, Shape3 patch_shape);
Mask extract_patch(const Mask& m, PatchOrigin origin, Shape3 patch_shape);

std::pair<Volume, Mask> sample_patch(const Volume& v, const Mask& m,
                                     Shape3 patch_shape, std::uint64_t seed);

// Augmentation: random axis flips applied to image and mask identically,
// random gamma contrast on the image only.
struct AugmentOps {
  bool flip[3] = {false, false, false};  // (z, y, x)
  double gamma = 1.0;
};

AugmentOps draw_augment_ops(std::uint64_t seed);
void flip_axes(Volume* v, const bool flip[3]);
void flip_axes(Mask* m, const bool flip[3]);
// aux (e.g. an aligned uncertainty map) follows the geometric ops only.
void apply_augment(Volume* image, Mask* mask, Volume* aux,
                   const AugmentOps& ops);
std::pair<Volume, Mask> augment(const Volume& v, const Mask& m,
                                std::uint64_t seed);

// Out-of-distribution perturbation of an intensity volume.
struct OODConfig {
  double spacing_factor[3] = {1.0, 1.0, 1.0};  // per axis (z, y, x)
  double gamma = 1.0;
  double noise_sigma = 0.0;
  double bias_amplitude = 0.0;
  int lesion_count = 0;  // bright blob count

  void validate() const;
};

// Stages in order: trilinear resample by the spacing factors and back to the
// original grid, gamma shift, additive Gaussian noise, multiplicative
// low-frequency bias, bright lesion blobs. No renormalization.
Volume apply_ood_stages(const Volume& v, const OODConfig& cfg,
                        std::uint64_t seed);
// apply_ood_stages followed by min-max renormalization to [0, 1].
Volume perturb_ood(const Volume& v, const OODConfig& cfg, std::uint64_t seed);

}  // namespace vesselseg

#endif  // VESSELSEG_DATA_HPP_
