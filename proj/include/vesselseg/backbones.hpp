#ifndef VESSELSEG_BACKBONES_HPP_
#define VESSELSEG_BACKBONES_HPP_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "vesselseg/nn_ops.hpp"
#include "vesselseg/tensor.hpp"
#include "vesselseg/volume.hpp"

namespace vesselseg {

enum class BackboneKind { kOursUnet, kDvn, kHalfUnet };

std::string backbone_kind_name(BackboneKind k);
BackboneKind backbone_kind_from_name(const std::string& name);

struct BackboneConfig {
  BackboneKind kind = BackboneKind::kOursUnet;
  int in_channels = 1;
  int base_features = 0;                // 0 = kind default (32 / 20 / 55)
  int depth = 4;                        // down-sampling stages (U-Nets)
  std::vector<int> feature_schedule;    // empty = doubling from base
  double scale_factor = 1.0;            // width multiplier for desk-scale runs
};

// One network unit inside a slot. A slot (= one partition layer) is a short
// sequence of units; parametric units index into the slot's tensor list.
enum class UnitKind {
  kConv,        // conv3d (+ optional instance norm) + activation
  kTConv2,      // 2x transposed conv, no norm/activation
  kMaxPool2,
  kUpsample2,
  kSaveSkip,    // stash current tensor under skip_id
  kConcatSkip,  // concat stashed skip onto current tensor
};

enum class Act { kNone, kLeakyRelu, kRelu, kSigmoid };

struct Unit {
  UnitKind kind = UnitKind::kConv;
  int cin = 0, cout = 0, k = 3, stride = 1;
  bool inorm = false;
  Act act = Act::kNone;
  int skip_id = -1;
  int tensor_base = -1;  // index of first param tensor within the slot
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::int64_t count() const;
};

struct SlotSpec {
  std::string name;
  std::vector<Unit> units;
  std::vector<TensorSpec> tensors;
};

struct BackboneSpec {
  BackboneKind kind = BackboneKind::kOursUnet;
  BackboneConfig config;
  std::vector<SlotSpec> slots;
  int stride_product = 1;
  int skip_count = 0;

  int layer_count() const { return static_cast<int>(slots.size()); }
  std::int64_t param_count() const;
  // Deterministic fingerprint of the slot/tensor layout; checked when
  // loading checkpoints.
  std::string signature() const;
};

// Builders. Defaults reproduce the documented layer counts: 7 slots for
// ours-unet, 15 for dvn, 23 for half-unet.
BackboneSpec build_ours_unet(const BackboneConfig& config);
BackboneSpec build_dvn(const BackboneConfig& config);
BackboneSpec build_half_unet(const BackboneConfig& config);
BackboneSpec build_backbone(const BackboneConfig& config);

// Parameter storage for one slot of one sub-model.
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;
};

struct SlotParams {
  std::vector<ParamTensor> tensors;
};

// Layer-to-parameter binding used to execute one ensemble member: slot l runs
// with the weights of whichever sub-model owns it.
struct MemberView {
  const BackboneSpec* spec = nullptr;
  std::vector<SlotParams*> slots;
};

// Per-forward activation cache for backward.
struct ForwardCache {
  struct UnitCache {
    Tensor in;       // unit input
    Tensor pre_act;  // pre-activation (post-norm) tensor
    Tensor out;      // only kept where backward needs it (sigmoid)
    nn::InstanceNormCache inorm;
    std::vector<std::int32_t> argmax;
    int concat_ca = 0;  // channel count of the non-skip side
  };
  std::vector<std::vector<UnitCache>> slots;  // [slot][unit]
  std::map<int, Tensor> skips;
  Tensor input;
};

// Runs the network with the bound weights. cache == nullptr skips all
// bookkeeping (inference mode).
Tensor backbone_forward(const MemberView& member, const Tensor& input,
                        ForwardCache* cache);
// Accumulates parameter gradients into the bound slots; returns the gradient
// with respect to the input.
Tensor backbone_backward(const MemberView& member, const ForwardCache& cache,
                         const Tensor& grad_out);

// Padding protocol for full-volume inference.
struct PadRecord {
  Shape3 original_shape;
  int pad_low[3] = {0, 0, 0};
  int pad_high[3] = {0, 0, 0};
};

std::pair<Volume, PadRecord> pad_to_stride(const Volume& v, int stride_product);
Volume crop(const Volume& padded, const PadRecord& rec);
VarianceMap crop_variance(const VarianceMap& padded, const PadRecord& rec);
Mask crop_mask(const Mask& padded, const PadRecord& rec);

}  // namespace vesselseg

#endif  // VESSELSEG_BACKBONES_HPP_
