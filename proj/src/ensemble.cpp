#include "vesselseg/ensemble.hpp"

#include "vesselseg/errors.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

namespace vesselseg {

LayerAssignment sample_partition(int m_count, int layer_count,
                                 std::uint64_t seed) {
  if (m_count < 1 || layer_count < 1)
    throw InvalidConfigError("sample_partition needs M >= 1 and L >= 1, got M=" +
                             std::to_string(m_count) + " L=" +
                             std::to_string(layer_count));
  LayerAssignment a;
  a.seed = seed;
  a.owners.resize(layer_count);
  Rng rng(seed);
  for (int l = 0; l < layer_count; ++l)
    a.owners[l] =
        static_cast<std::int32_t>(rng.uniform_int(static_cast<std::uint64_t>(m_count)));
  return a;
}

std::uint64_t member_count(int m_count, int layer_count) {
  if (m_count < 1 || layer_count < 1)
    throw InvalidConfigError("member_count needs M >= 1 and L >= 1");
  std::uint64_t result = 1;
  const std::uint64_t m = static_cast<std::uint64_t>(m_count);
  for (int i = 0; i < layer_count; ++i) {
    std::uint64_t next;
    if (__builtin_mul_overflow(result, m, &next))
      throw OverflowError("member count " + std::to_string(m_count) + "^" +
                          std::to_string(layer_count) +
                          " overflows the 64-bit count");
    result = next;
  }
  return result;
}

void SubModelRegistry::zero_grads() {
  for (auto& sm : submodels)
    for (auto& slot : sm.slots)
      for (auto& t : slot.tensors) std::fill(t.grad.begin(), t.grad.end(), 0.0);
}

SubModelRegistry make_registry(const BackboneSpec& spec, int m_count) {
  if (m_count < 1) throw InvalidConfigError("registry needs M >= 1");
  SubModelRegistry reg;
  reg.topology = spec;
  reg.submodels.resize(m_count);
  for (auto& sm : reg.submodels) {
    sm.slots.resize(spec.slots.size());
    for (std::size_t si = 0; si < spec.slots.size(); ++si) {
      auto& slot = sm.slots[si];
      for (const auto& ts : spec.slots[si].tensors) {
        ParamTensor t;
        t.name = ts.name;
        t.shape = ts.shape;
        t.value.assign(static_cast<std::size_t>(ts.count()), 0.0);
        t.grad.assign(static_cast<std::size_t>(ts.count()), 0.0);
        slot.tensors.push_back(std::move(t));
      }
    }
  }
  return reg;
}

MemberView assemble_member(SubModelRegistry& registry,
                           const LayerAssignment& assignment) {
  if (assignment.layer_count() != registry.layer_count())
    throw AssignmentMismatchError(
        "assignment length " + std::to_string(assignment.layer_count()) +
        " does not match registry L=" + std::to_string(registry.layer_count()));
  MemberView member;
  member.spec = &registry.topology;
  member.slots.resize(assignment.owners.size());
  for (std::size_t l = 0; l < assignment.owners.size(); ++l) {
    const std::int32_t owner = assignment.owners[l];
    if (owner < 0 || owner >= registry.m_count())
      throw AssignmentMismatchError("assignment owner " + std::to_string(owner) +
                                    " out of range for M=" +
                                    std::to_string(registry.m_count()));
    member.slots[l] = &registry.submodels[owner].slots[l];
  }
  return member;
}

SampleStack sample_forward(SubModelRegistry& registry, const Volume& input,
                           int s, std::uint64_t seed) {
  if (s < 1) throw InvalidConfigError("sample_forward needs s >= 1");
  const int sp = registry.topology.stride_product;
  if (input.shape.z % sp || input.shape.y % sp || input.shape.x % sp)
    throw ShapeError("input shape " + input.shape.str() +
                     " must be a multiple of the backbone stride product " +
                     std::to_string(sp) + " on every axis (pad first)");
  SampleStack stack;
  stack.samples.reserve(s);
  stack.assignments.reserve(s);
  const Tensor in = tensor_from_volume(input);
  for (int i = 0; i < s; ++i) {
    LayerAssignment a =
        sample_partition(registry.m_count(), registry.layer_count(),
                         derive_seed(seed, static_cast<std::uint64_t>(i)));
    MemberView member = assemble_member(registry, a);
    Tensor out = backbone_forward(member, in, nullptr);
    stack.samples.push_back(volume_from_tensor(out, input.spacing));
    stack.assignments.push_back(std::move(a));
  }
  return stack;
}

std::int64_t submodel_value_count(const SubModelWeights& sm) {
  std::int64_t n = 0;
  for (const auto& slot : sm.slots)
    for (const auto& t : slot.tensors)
      n += static_cast<std::int64_t>(t.value.size());
  return n;
}

std::vector<double> flatten_submodel(const SubModelWeights& sm) {
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(submodel_value_count(sm)));
  for (const auto& slot : sm.slots)
    for (const auto& t : slot.tensors)
      flat.insert(flat.end(), t.value.begin(), t.value.end());
  return flat;
}

void unflatten_submodel(const std::vector<double>& flat, SubModelWeights* sm) {
  if (static_cast<std::int64_t>(flat.size()) != submodel_value_count(*sm))
    throw BlobSizeMismatchError("weight blob has " +
                                std::to_string(flat.size()) +
                                " values, topology expects " +
                                std::to_string(submodel_value_count(*sm)));
  std::size_t off = 0;
  for (auto& slot : sm->slots)
    for (auto& t : slot.tensors) {
      std::copy(flat.begin() + off, flat.begin() + off + t.value.size(),
                t.value.begin());
      off += t.value.size();
    }
}

}  // namespace vesselseg
