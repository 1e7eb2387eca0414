#include "vesselseg/backbones.hpp"

#include <algorithm>
#include <cmath>

#include "vesselseg/errors.hpp"

namespace vesselseg {

namespace {

constexpr double kLeakySlope = 0.01;

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int scaled(int features, double scale) {
  return std::max(1, static_cast<int>(std::lround(features * scale)));
}

// Appends a conv (+ optional instance norm) + activation unit to the slot,
// registering its parameter tensors.
void add_conv(SlotSpec& slot, int cin, int cout, int k, int stride, bool inorm,
              Act act) {
  Unit u;
  u.kind = UnitKind::kConv;
  u.cin = cin;
  u.cout = cout;
  u.k = k;
  u.stride = stride;
  u.inorm = inorm;
  u.act = act;
  u.tensor_base = static_cast<int>(slot.tensors.size());
  const std::string p = slot.name + "." + std::to_string(slot.units.size());
  slot.tensors.push_back({p + ".w", {cout, cin, k, k, k}});
  slot.tensors.push_back({p + ".b", {cout}});
  if (inorm) {
    slot.tensors.push_back({p + ".gamma", {cout}});
    slot.tensors.push_back({p + ".beta", {cout}});
  }
  slot.units.push_back(u);
}

void add_tconv(SlotSpec& slot, int cin, int cout) {
  Unit u;
  u.kind = UnitKind::kTConv2;
  u.cin = cin;
  u.cout = cout;
  u.k = 2;
  u.stride = 2;
  u.tensor_base = static_cast<int>(slot.tensors.size());
  const std::string p = slot.name + "." + std::to_string(slot.units.size());
  slot.tensors.push_back({p + ".w", {cout, cin, 2, 2, 2}});
  slot.tensors.push_back({p + ".b", {cout}});
  slot.units.push_back(u);
}

void add_simple(SlotSpec& slot, UnitKind kind, int skip_id = -1) {
  Unit u;
  u.kind = kind;
  u.skip_id = skip_id;
  slot.units.push_back(u);
}

std::vector<int> resolve_schedule(const BackboneConfig& cfg, int default_base) {
  const int base = cfg.base_features > 0 ? cfg.base_features : default_base;
  std::vector<int> sched = cfg.feature_schedule;
  if (sched.empty()) {
    for (int i = 0; i < cfg.depth; ++i) sched.push_back(base << i);
  }
  if (static_cast<int>(sched.size()) != cfg.depth)
    throw InvalidConfigError("feature schedule length " +
                             std::to_string(sched.size()) +
                             " does not match depth " +
                             std::to_string(cfg.depth));
  for (int& f : sched) {
    if (f < 1) throw InvalidConfigError("feature counts must be >= 1");
    f = scaled(f, cfg.scale_factor);
  }
  return sched;
}

}  // namespace

std::string backbone_kind_name(BackboneKind k) {
  switch (k) {
    case BackboneKind::kOursUnet: return "ours-unet";
    case BackboneKind::kDvn: return "dvn";
    case BackboneKind::kHalfUnet: return "half-unet";
  }
  return "?";
}

BackboneKind backbone_kind_from_name(const std::string& name) {
  if (name == "ours-unet") return BackboneKind::kOursUnet;
  if (name == "dvn") return BackboneKind::kDvn;
  if (name == "half-unet") return BackboneKind::kHalfUnet;
  throw InvalidConfigError("unknown backbone kind: " + name);
}

std::int64_t TensorSpec::count() const {
  std::int64_t n = 1;
  for (int e : shape) n *= e;
  return n;
}

std::int64_t BackboneSpec::param_count() const {
  std::int64_t n = 0;
  for (const auto& slot : slots)
    for (const auto& t : slot.tensors) n += t.count();
  return n;
}

std::string BackboneSpec::signature() const {
  std::string desc = backbone_kind_name(kind) + ";sp=" +
                     std::to_string(stride_product) + ";";
  for (const auto& slot : slots) {
    desc += slot.name + "{";
    for (const auto& t : slot.tensors) {
      desc += t.name + ":";
      for (int e : t.shape) desc += std::to_string(e) + ",";
      desc += ";";
    }
    desc += "}";
  }
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a(desc)));
  return backbone_kind_name(kind) + ":L=" + std::to_string(layer_count()) +
         ":" + hex;
}

// Encoder of `depth` strided-conv stages, decoder with nearest-neighbor
// upsampling + skip concatenation. The final decoder stage carries the
// full-resolution upsample and the probability head, so slot count is
// 2*depth - 1 (7 at the default depth 4).
BackboneSpec build_ours_unet(const BackboneConfig& cfg) {
  if (cfg.kind != BackboneKind::kOursUnet)
    throw InvalidConfigError("build_ours_unet called with wrong kind");
  if (cfg.depth < 2) throw InvalidConfigError("ours-unet needs depth >= 2");
  const std::vector<int> f = resolve_schedule(cfg, 32);

  BackboneSpec spec;
  spec.kind = cfg.kind;
  spec.config = cfg;
  spec.stride_product = 1 << cfg.depth;

  for (int i = 0; i < cfg.depth; ++i) {
    SlotSpec slot;
    slot.name = "enc" + std::to_string(i);
    const int cin = i == 0 ? cfg.in_channels : f[i - 1];
    add_conv(slot, cin, f[i], 3, 2, true, Act::kLeakyRelu);
    add_conv(slot, f[i], f[i], 3, 1, true, Act::kLeakyRelu);
    if (i + 1 < cfg.depth) add_simple(slot, UnitKind::kSaveSkip, i);
    spec.slots.push_back(std::move(slot));
  }
  for (int i = cfg.depth - 2; i >= 0; --i) {
    SlotSpec slot;
    slot.name = "dec" + std::to_string(i);
    add_simple(slot, UnitKind::kUpsample2);
    add_simple(slot, UnitKind::kConcatSkip, i);
    add_conv(slot, f[i + 1] + f[i], f[i], 3, 1, true, Act::kLeakyRelu);
    add_conv(slot, f[i], f[i], 3, 1, true, Act::kLeakyRelu);
    if (i == 0) {
      add_simple(slot, UnitKind::kUpsample2);
      add_conv(slot, f[0], 1, 1, 1, false, Act::kSigmoid);
    }
    spec.slots.push_back(std::move(slot));
  }
  spec.skip_count = cfg.depth - 1;
  return spec;
}

// Plain fully-convolutional stack without down-sampling: 14 conv blocks plus
// a 1x1 head, 15 slots. Default width 20 lands on the documented parameter
// budget (~139.8K).
BackboneSpec build_dvn(const BackboneConfig& cfg) {
  if (cfg.kind != BackboneKind::kDvn)
    throw InvalidConfigError("build_dvn called with wrong kind");
  const int width = scaled(cfg.base_features > 0 ? cfg.base_features : 20,
                           cfg.scale_factor);

  BackboneSpec spec;
  spec.kind = cfg.kind;
  spec.config = cfg;
  spec.stride_product = 1;
  for (int i = 0; i < 14; ++i) {
    SlotSpec slot;
    slot.name = "conv" + std::to_string(i);
    add_conv(slot, i == 0 ? cfg.in_channels : width, width, 3, 1, true,
             Act::kLeakyRelu);
    spec.slots.push_back(std::move(slot));
  }
  SlotSpec head;
  head.name = "head";
  add_conv(head, width, 1, 1, 1, false, Act::kSigmoid);
  spec.slots.push_back(std::move(head));
  return spec;
}

// Classic double-conv U-Net with max-pool down-sampling and transposed-conv
// upsampling; instance norm substituted for batch norm, ReLU activations.
// Every conv layer is its own slot: 23 in total. Default width 55 lands on
// the documented ~67.7M parameter budget.
BackboneSpec build_half_unet(const BackboneConfig& cfg) {
  if (cfg.kind != BackboneKind::kHalfUnet)
    throw InvalidConfigError("build_half_unet called with wrong kind");
  const int f = scaled(cfg.base_features > 0 ? cfg.base_features : 55,
                       cfg.scale_factor);

  BackboneSpec spec;
  spec.kind = cfg.kind;
  spec.config = cfg;
  spec.stride_product = 16;
  spec.skip_count = 4;

  auto conv_slot = [&spec](const std::string& name, int cin, int cout,
                           bool pool_before, int save_skip) {
    SlotSpec slot;
    slot.name = name;
    if (pool_before) add_simple(slot, UnitKind::kMaxPool2);
    add_conv(slot, cin, cout, 3, 1, true, Act::kRelu);
    if (save_skip >= 0) add_simple(slot, UnitKind::kSaveSkip, save_skip);
    spec.slots.push_back(std::move(slot));
  };

  conv_slot("enc1a", cfg.in_channels, f, false, -1);
  conv_slot("enc1b", f, f, false, 0);
  conv_slot("enc2a", f, 2 * f, true, -1);
  conv_slot("enc2b", 2 * f, 2 * f, false, 1);
  conv_slot("enc3a", 2 * f, 4 * f, true, -1);
  conv_slot("enc3b", 4 * f, 4 * f, false, 2);
  conv_slot("enc4a", 4 * f, 8 * f, true, -1);
  conv_slot("enc4b", 8 * f, 8 * f, false, 3);
  conv_slot("bot_a", 8 * f, 16 * f, true, -1);
  conv_slot("bot_b", 16 * f, 16 * f, false, -1);

  for (int lvl = 4; lvl >= 1; --lvl) {
    const int fu = f << (lvl - 1);  // features at this decoder level
    SlotSpec up;
    up.name = "up" + std::to_string(lvl);
    add_tconv(up, 2 * fu, fu);
    spec.slots.push_back(std::move(up));

    SlotSpec da;
    da.name = "dec" + std::to_string(lvl) + "a";
    add_simple(da, UnitKind::kConcatSkip, lvl - 1);
    add_conv(da, 2 * fu, fu, 3, 1, true, Act::kRelu);
    spec.slots.push_back(std::move(da));

    SlotSpec db;
    db.name = "dec" + std::to_string(lvl) + "b";
    add_conv(db, fu, fu, 3, 1, true, Act::kRelu);
    spec.slots.push_back(std::move(db));
  }

  SlotSpec head;
  head.name = "head";
  add_conv(head, f, 1, 1, 1, false, Act::kSigmoid);
  spec.slots.push_back(std::move(head));
  return spec;
}

BackboneSpec build_backbone(const BackboneConfig& cfg) {
  switch (cfg.kind) {
    case BackboneKind::kOursUnet: return build_ours_unet(cfg);
    case BackboneKind::kDvn: return build_dvn(cfg);
    case BackboneKind::kHalfUnet: return build_half_unet(cfg);
  }
  throw InvalidConfigError("unknown backbone kind");
}

namespace {

const ParamTensor& tensor_at(const MemberView& member, int slot, int idx) {
  return member.slots[slot]->tensors[idx];
}

ParamTensor& mutable_tensor_at(const MemberView& member, int slot, int idx) {
  return member.slots[slot]->tensors[idx];
}

}  // namespace

Tensor backbone_forward(const MemberView& member, const Tensor& input,
                        ForwardCache* cache) {
  const BackboneSpec& spec = *member.spec;
  if (cache) {
    cache->slots.assign(spec.slots.size(), {});
    cache->skips.clear();
    cache->input = input;
  }
  std::map<int, Tensor> skips;
  Tensor cur = input;
  for (std::size_t si = 0; si < spec.slots.size(); ++si) {
    const SlotSpec& slot = spec.slots[si];
    if (cache) cache->slots[si].resize(slot.units.size());
    for (std::size_t ui = 0; ui < slot.units.size(); ++ui) {
      const Unit& u = slot.units[ui];
      ForwardCache::UnitCache* uc = cache ? &cache->slots[si][ui] : nullptr;
      switch (u.kind) {
        case UnitKind::kConv: {
          const auto& w = tensor_at(member, si, u.tensor_base);
          const auto& b = tensor_at(member, si, u.tensor_base + 1);
          nn::ConvDims cd{u.cin, u.cout, u.k, u.stride};
          if (uc) uc->in = cur;
          Tensor t = nn::conv3d_forward(cur, cd, w.value.data(), b.value.data());
          if (u.inorm) {
            const auto& gamma = tensor_at(member, si, u.tensor_base + 2);
            const auto& beta = tensor_at(member, si, u.tensor_base + 3);
            t = nn::instance_norm_forward(t, gamma.value.data(),
                                          beta.value.data(),
                                          uc ? &uc->inorm : nullptr);
          }
          switch (u.act) {
            case Act::kLeakyRelu:
              if (uc) uc->pre_act = t;
              cur = nn::leaky_relu_forward(t, kLeakySlope);
              break;
            case Act::kRelu:
              if (uc) uc->pre_act = t;
              cur = nn::relu_forward(t);
              break;
            case Act::kSigmoid:
              cur = nn::sigmoid_forward(t);
              if (uc) uc->out = cur;
              break;
            case Act::kNone:
              cur = std::move(t);
              break;
          }
          break;
        }
        case UnitKind::kTConv2: {
          const auto& w = tensor_at(member, si, u.tensor_base);
          const auto& b = tensor_at(member, si, u.tensor_base + 1);
          if (uc) uc->in = cur;
          cur = nn::conv_transpose2x_forward(cur, u.cout, w.value.data(),
                                             b.value.data());
          break;
        }
        case UnitKind::kMaxPool2: {
          if (cur.d % 2 || cur.h % 2 || cur.w % 2)
            throw ShapeError("maxpool2 needs even spatial dims");
          if (uc) {
            uc->in = cur;
            cur = nn::maxpool2_forward(cur, &uc->argmax);
          } else {
            std::vector<std::int32_t> scratch;
            cur = nn::maxpool2_forward(cur, &scratch);
          }
          break;
        }
        case UnitKind::kUpsample2: {
          if (uc) uc->in = cur;
          cur = nn::upsample2_forward(cur);
          break;
        }
        case UnitKind::kSaveSkip: {
          skips[u.skip_id] = cur;
          if (cache) cache->skips[u.skip_id] = cur;
          break;
        }
        case UnitKind::kConcatSkip: {
          auto it = skips.find(u.skip_id);
          if (it == skips.end())
            throw ShapeError("skip " + std::to_string(u.skip_id) +
                             " not available");
          if (uc) uc->concat_ca = cur.c;
          cur = nn::concat_forward(cur, it->second);
          break;
        }
      }
    }
  }
  return cur;
}

Tensor backbone_backward(const MemberView& member, const ForwardCache& cache,
                         const Tensor& grad_out) {
  const BackboneSpec& spec = *member.spec;
  std::map<int, Tensor> skip_grads;
  Tensor g = grad_out;
  for (int si = static_cast<int>(spec.slots.size()) - 1; si >= 0; --si) {
    const SlotSpec& slot = spec.slots[si];
    for (int ui = static_cast<int>(slot.units.size()) - 1; ui >= 0; --ui) {
      const Unit& u = slot.units[ui];
      const ForwardCache::UnitCache& uc = cache.slots[si][ui];
      switch (u.kind) {
        case UnitKind::kConv: {
          auto& w = mutable_tensor_at(member, si, u.tensor_base);
          auto& b = mutable_tensor_at(member, si, u.tensor_base + 1);
          Tensor g_pre;
          switch (u.act) {
            case Act::kLeakyRelu: {
              g_pre = Tensor(uc.pre_act.c, uc.pre_act.d, uc.pre_act.h,
                             uc.pre_act.w);
              nn::leaky_relu_backward(uc.pre_act, kLeakySlope, g, &g_pre);
              break;
            }
            case Act::kRelu: {
              g_pre = Tensor(uc.pre_act.c, uc.pre_act.d, uc.pre_act.h,
                             uc.pre_act.w);
              nn::relu_backward(uc.pre_act, g, &g_pre);
              break;
            }
            case Act::kSigmoid: {
              g_pre = Tensor(uc.out.c, uc.out.d, uc.out.h, uc.out.w);
              nn::sigmoid_backward(uc.out, g, &g_pre);
              break;
            }
            case Act::kNone:
              g_pre = std::move(g);
              break;
          }
          Tensor g_conv_out;
          if (u.inorm) {
            auto& gamma = mutable_tensor_at(member, si, u.tensor_base + 2);
            auto& beta = mutable_tensor_at(member, si, u.tensor_base + 3);
            g_conv_out = Tensor(g_pre.c, g_pre.d, g_pre.h, g_pre.w);
            nn::instance_norm_backward(uc.inorm, gamma.value.data(), g_pre,
                                       &g_conv_out, gamma.grad.data(),
                                       beta.grad.data());
          } else {
            g_conv_out = std::move(g_pre);
          }
          nn::ConvDims cd{u.cin, u.cout, u.k, u.stride};
          Tensor gin(uc.in.c, uc.in.d, uc.in.h, uc.in.w);
          nn::conv3d_backward(uc.in, cd, w.value.data(), g_conv_out, &gin,
                              w.grad.data(), b.grad.data());
          g = std::move(gin);
          break;
        }
        case UnitKind::kTConv2: {
          auto& w = mutable_tensor_at(member, si, u.tensor_base);
          auto& b = mutable_tensor_at(member, si, u.tensor_base + 1);
          Tensor gin(uc.in.c, uc.in.d, uc.in.h, uc.in.w);
          nn::conv_transpose2x_backward(uc.in, u.cout, w.value.data(), g, &gin,
                                        w.grad.data(), b.grad.data());
          g = std::move(gin);
          break;
        }
        case UnitKind::kMaxPool2: {
          Tensor gin(uc.in.c, uc.in.d, uc.in.h, uc.in.w);
          nn::maxpool2_backward(uc.in, g, uc.argmax, &gin);
          g = std::move(gin);
          break;
        }
        case UnitKind::kUpsample2: {
          Tensor gin(uc.in.c, uc.in.d, uc.in.h, uc.in.w);
          nn::upsample2_backward(uc.in, g, &gin);
          g = std::move(gin);
          break;
        }
        case UnitKind::kSaveSkip: {
          auto it = skip_grads.find(u.skip_id);
          if (it != skip_grads.end()) {
            for (std::int64_t i = 0; i < g.size(); ++i)
              g.v[i] += it->second.v[i];
            skip_grads.erase(it);
          }
          break;
        }
        case UnitKind::kConcatSkip: {
          const Tensor& skip = cache.skips.at(u.skip_id);
          Tensor ga(uc.concat_ca, g.d, g.h, g.w);
          Tensor gb(skip.c, skip.d, skip.h, skip.w);
          nn::concat_backward(g, uc.concat_ca, &ga, &gb);
          auto it = skip_grads.find(u.skip_id);
          if (it == skip_grads.end()) {
            skip_grads[u.skip_id] = std::move(gb);
          } else {
            for (std::int64_t i = 0; i < gb.size(); ++i)
              it->second.v[i] += gb.v[i];
          }
          g = std::move(ga);
          break;
        }
      }
    }
  }
  return g;
}

std::pair<Volume, PadRecord> pad_to_stride(const Volume& v, int stride_product) {
  if (stride_product < 1)
    throw InvalidConfigError("stride product must be >= 1");
  PadRecord rec;
  rec.original_shape = v.shape;
  const int dims[3] = {v.shape.z, v.shape.y, v.shape.x};
  int padded[3];
  for (int a = 0; a < 3; ++a) {
    const int target =
        ((dims[a] + stride_product - 1) / stride_product) * stride_product;
    const int pad = target - dims[a];
    rec.pad_low[a] = pad / 2;
    rec.pad_high[a] = pad - pad / 2;
    padded[a] = target;
  }
  Volume out({padded[0], padded[1], padded[2]}, 0.0, v.spacing);
  for (int z = 0; z < v.shape.z; ++z)
    for (int y = 0; y < v.shape.y; ++y) {
      const double* src = v.v.data() + v.index(z, y, 0);
      double* dst = out.v.data() +
                    out.index(z + rec.pad_low[0], y + rec.pad_low[1],
                              rec.pad_low[2]);
      std::copy(src, src + v.shape.x, dst);
    }
  return {std::move(out), rec};
}

namespace {

template <typename Field>
Field crop_field(const Field& padded, const PadRecord& rec) {
  const Shape3& os = rec.original_shape;
  const Shape3 expect{os.z + rec.pad_low[0] + rec.pad_high[0],
                      os.y + rec.pad_low[1] + rec.pad_high[1],
                      os.x + rec.pad_low[2] + rec.pad_high[2]};
  if (!(padded.shape == expect))
    throw PadRecordMismatchError("padded shape " + padded.shape.str() +
                                 " inconsistent with pad record (expected " +
                                 expect.str() + ")");
  Field out(os, {}, padded.spacing);
  for (int z = 0; z < os.z; ++z)
    for (int y = 0; y < os.y; ++y) {
      const auto* src = padded.v.data() +
                        padded.index(z + rec.pad_low[0], y + rec.pad_low[1],
                                     rec.pad_low[2]);
      auto* dst = out.v.data() + out.index(z, y, 0);
      std::copy(src, src + os.x, dst);
    }
  return out;
}

}  // namespace

Volume crop(const Volume& padded, const PadRecord& rec) {
  return crop_field<Volume>(padded, rec);
}

VarianceMap crop_variance(const VarianceMap& padded, const PadRecord& rec) {
  return crop_field<Volume>(padded, rec);
}

Mask crop_mask(const Mask& padded, const PadRecord& rec) {
  return crop_field<Mask>(padded, rec);
}

}  // namespace vesselseg
