#ifndef VESSELSEG_ENSEMBLE_HPP_
#define VESSELSEG_ENSEMBLE_HPP_

#include <cstdint>
#include <vector>

#include "vesselseg/backbones.hpp"
#include "vesselseg/volume.hpp"

namespace vesselseg {

// A partition of layer slots among sub-models: owners[l] names the sub-model
// whose weights run slot l, so each slot has exactly one owner.
struct LayerAssignment {
  std::vector<std::int32_t> owners;
  std::uint64_t seed = 0;

  int layer_count() const { return static_cast<int>(owners.size()); }
};

// Each slot is assigned independently and uniformly over the M sub-models;
// deterministic given the seed.
LayerAssignment sample_partition(int m_count, int layer_count,
                                 std::uint64_t seed);

// Number of distinct members, M^L. Throws OverflowError if it exceeds the
// 64-bit count representation.
std::uint64_t member_count(int m_count, int layer_count);

// M complete weight sets sharing one backbone topology.
struct SubModelWeights {
  std::vector<SlotParams> slots;
};

struct SubModelRegistry {
  BackboneSpec topology;
  std::vector<SubModelWeights> submodels;
  // Provenance: 0 = freshly initialized, 1/2 = trained through that stage.
  int trained_stage = 0;
  int trained_epochs = 0;
  std::string checkpoint_id;

  int m_count() const { return static_cast<int>(submodels.size()); }
  int layer_count() const { return topology.layer_count(); }
  void zero_grads();
};

// Allocates M weight sets with the spec's tensor shapes, all zero.
SubModelRegistry make_registry(const BackboneSpec& spec, int m_count);

// Binds slot l to the owning sub-model's parameters; a read-through view, no
// weights are copied.
MemberView assemble_member(SubModelRegistry& registry,
                           const LayerAssignment& assignment);

struct SampleStack {
  std::vector<Volume> samples;  // foreground probability per voxel
  std::vector<LayerAssignment> assignments;

  int sample_count() const { return static_cast<int>(samples.size()); }
};

// Draws s independent assignments from a seeded stream and runs each member
// on the input. Input dims must already be multiples of the backbone stride
// product (the caller pads).
SampleStack sample_forward(SubModelRegistry& registry, const Volume& input,
                           int s, std::uint64_t seed);

// Serialization order of a sub-model's parameters (slot-major, tensor-minor);
// used by checkpoints.
std::vector<double> flatten_submodel(const SubModelWeights& sm);
void unflatten_submodel(const std::vector<double>& flat, SubModelWeights* sm);
std::int64_t submodel_value_count(const SubModelWeights& sm);

}  // namespace vesselseg

#endif  // VESSELSEG_ENSEMBLE_HPP_
