#include "vesselseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "vesselseg/config.hpp"
#include "vesselseg/data.hpp"
#include "vesselseg/errors.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/volume_io.hpp"

namespace vesselseg {

namespace fs = std::filesystem;
using nlohmann::json;

void TrainingConfig::validate() const {
  if (stage != 1 && stage != 2) throw InvalidConfigError("stage must be 1 or 2");
  if (epochs < 1) throw InvalidConfigError("epochs must be >= 1");
  if (batch_size < 1) throw InvalidConfigError("batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw InvalidConfigError("learning rate must be > 0");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0))
    throw InvalidConfigError("plateau factor must lie in (0, 1)");
  if (plateau_patience < 1) throw InvalidConfigError("plateau patience must be >= 1");
  if (patches_per_image < 1) throw InvalidConfigError("patches per image must be >= 1");
  if (submodels < 1) throw InvalidConfigError("sub-model count must be >= 1");
  if (seeds.model_init.empty())
    throw InvalidConfigError("at least one model-init seed is required");
  if (seeds.model_init.size() != 1 &&
      static_cast<int>(seeds.model_init.size()) != submodels)
    throw InvalidConfigError("model-init seeds: give one base seed or one per sub-model");
  loss.validate();
}

std::vector<std::uint64_t> TrainingConfig::resolved_init_seeds() const {
  if (static_cast<int>(seeds.model_init.size()) == submodels)
    return seeds.model_init;
  std::vector<std::uint64_t> out(submodels);
  for (int m = 0; m < submodels; ++m)
    out[m] = derive_seed(seeds.model_init[0], static_cast<std::uint64_t>(m));
  return out;
}

namespace {

// He-style fan-in scaling; the logistic head uses the smaller Xavier gain.
void init_submodel(const BackboneSpec& spec, SubModelWeights* sm,
                   std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t si = 0; si < spec.slots.size(); ++si) {
    const SlotSpec& slot = spec.slots[si];
    for (const Unit& u : slot.units) {
      if (u.kind != UnitKind::kConv && u.kind != UnitKind::kTConv2) continue;
      auto& tensors = sm->slots[si].tensors;
      ParamTensor& w = tensors[u.tensor_base];
      ParamTensor& b = tensors[u.tensor_base + 1];
      const double fan_in = static_cast<double>(u.cin) * u.k * u.k * u.k;
      const double gain = u.act == Act::kSigmoid ? 1.0 : 2.0;
      const double std_dev = std::sqrt(gain / fan_in);
      for (auto& x : w.value) x = std_dev * rng.normal();
      std::fill(b.value.begin(), b.value.end(), 0.0);
      if (u.inorm) {
        std::fill(tensors[u.tensor_base + 2].value.begin(),
                  tensors[u.tensor_base + 2].value.end(), 1.0);
        std::fill(tensors[u.tensor_base + 3].value.begin(),
                  tensors[u.tensor_base + 3].value.end(), 0.0);
      }
    }
  }
}

void adam_step(ParamTensor& p, AdamTensorState& st, double lr) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  if (st.m.empty()) {
    st.m.assign(p.value.size(), 0.0);
    st.v.assign(p.value.size(), 0.0);
  }
  ++st.t;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(st.t));
  const std::size_t n = p.value.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = p.grad[i];
    st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * g;
    st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * g * g;
    const double mhat = st.m[i] / bc1;
    const double vhat = st.v[i] / bc2;
    p.value[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
  }
}

}  // namespace

SubModelRegistry init_registry(const BackboneConfig& backbone, int m_count,
                               const std::vector<std::uint64_t>& init_seeds) {
  if (static_cast<int>(init_seeds.size()) != m_count)
    throw InvalidConfigError("need exactly one init seed per sub-model");
  const BackboneSpec spec = build_backbone(backbone);
  SubModelRegistry reg = make_registry(spec, m_count);
  for (int m = 0; m < m_count; ++m)
    init_submodel(spec, &reg.submodels[m], init_seeds[m]);
  reg.trained_stage = 0;
  reg.checkpoint_id = spec.signature() + ":init";
  return reg;
}

Trainer::Trainer(SubModelRegistry& registry, const TrainingConfig& cfg)
    : registry_(registry),
      cfg_(cfg),
      scheduler_(cfg.learning_rate, cfg.plateau_patience, cfg.plateau_factor,
                 cfg.plateau_tol) {
  cfg_.validate();
  adam_.resize(registry.m_count());
  for (int m = 0; m < registry.m_count(); ++m) {
    adam_[m].resize(registry.topology.slots.size());
    for (std::size_t si = 0; si < registry.topology.slots.size(); ++si)
      adam_[m][si].resize(registry.topology.slots[si].tensors.size());
  }
}

double Trainer::step(const std::vector<StepItem>& batch,
                     const LayerAssignment& assignment) {
  if (batch.empty()) throw InvalidConfigError("empty training batch");
  MemberView member = assemble_member(registry_, assignment);

  for (std::size_t l = 0; l < member.slots.size(); ++l)
    for (auto& t : member.slots[l]->tensors)
      std::fill(t.grad.begin(), t.grad.end(), 0.0);

  const double item_weight = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  ForwardCache cache;
  for (const StepItem& item : batch) {
    const PatchOrigin origin =
        sample_patch_origin(item.image->mask, cfg_.patch_shape, item.patch_seed);
    Volume img = extract_patch(item.image->image, origin, cfg_.patch_shape);
    Mask mask = extract_patch(item.image->mask, origin, cfg_.patch_shape);
    Volume upatch;
    const AugmentOps ops = draw_augment_ops(item.augment_seed);
    if (item.umap) {
      upatch = extract_patch(*item.umap, origin, cfg_.patch_shape);
      apply_augment(&img, &mask, &upatch, ops);
    } else {
      apply_augment(&img, &mask, nullptr, ops);
    }

    const Tensor input = tensor_from_volume(img);
    const Tensor pred = backbone_forward(member, input, &cache);
    Tensor gpred(pred.c, pred.d, pred.h, pred.w);
    loss_sum += stage_loss_with_grad(pred, mask, item.umap ? &upatch : nullptr,
                                     cfg_.loss, item_weight, &gpred);
    backbone_backward(member, cache, gpred);
  }
  const double loss = loss_sum * item_weight;
  if (!std::isfinite(loss))
    throw DivergenceError("non-finite training loss; aborting");

  const double lr = scheduler_.lr();
  for (std::size_t l = 0; l < member.slots.size(); ++l) {
    const int owner = assignment.owners[l];
    auto& slot = *member.slots[l];
    for (std::size_t k = 0; k < slot.tensors.size(); ++k)
      adam_step(slot.tensors[k], adam_[owner][l][k], lr);
  }
  return loss;
}

TrainResult Trainer::run(const std::vector<TrainImage>& train,
                         const std::vector<TrainImage>* val,
                         const UncertaintyMapSet* umaps) {
  if (train.empty()) throw InvalidConfigError("no training images");
  if (cfg_.stage == 2) {
    if (!umaps)
      throw InvalidConfigError("stage 2 requires prepared uncertainty maps");
    for (const auto& img : train)
      if (!umaps->maps.count(img.id))
        throw InvalidConfigError("missing uncertainty map for image " + img.id);
  }

  struct Descriptor {
    int image = 0;
    std::uint64_t patch_seed = 0, augment_seed = 0;
  };

  TrainResult result;
  const int n_img = static_cast<int>(train.size());
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    const std::uint64_t epoch_seed =
        derive_seed(cfg_.seeds.data, 0xE9, static_cast<std::uint64_t>(epoch));
    std::vector<Descriptor> descs;
    descs.reserve(static_cast<std::size_t>(n_img) * cfg_.patches_per_image);
    for (int i = 0; i < n_img; ++i)
      for (int p = 0; p < cfg_.patches_per_image; ++p) {
        Descriptor d;
        d.image = i;
        const std::uint64_t tag =
            static_cast<std::uint64_t>(i) * cfg_.patches_per_image + p;
        d.patch_seed = derive_seed(epoch_seed, 0xA1, tag);
        d.augment_seed = derive_seed(epoch_seed, 0xA2, tag);
        descs.push_back(d);
      }
    Rng shuffle_rng(derive_seed(epoch_seed, 0xA3));
    for (std::size_t i = descs.size(); i > 1; --i)
      std::swap(descs[i - 1], descs[shuffle_rng.uniform_int(i)]);

    double loss_acc = 0.0;
    std::int64_t item_acc = 0;
    int step_idx = 0;
    for (std::size_t off = 0; off < descs.size();
         off += static_cast<std::size_t>(cfg_.batch_size), ++step_idx) {
      const std::size_t end =
          std::min(descs.size(), off + static_cast<std::size_t>(cfg_.batch_size));
      std::vector<StepItem> batch;
      batch.reserve(end - off);
      for (std::size_t j = off; j < end; ++j) {
        StepItem item;
        item.image = &train[descs[j].image];
        item.patch_seed = descs[j].patch_seed;
        item.augment_seed = descs[j].augment_seed;
        if (cfg_.stage == 2) item.umap = &umaps->maps.at(item.image->id);
        batch.push_back(item);
      }
      const LayerAssignment assignment = sample_partition(
          registry_.m_count(), registry_.layer_count(),
          derive_seed(cfg_.seeds.sampling, static_cast<std::uint64_t>(epoch),
                      static_cast<std::uint64_t>(step_idx)));
      const double loss = step(batch, assignment);
      loss_acc += loss * static_cast<double>(batch.size());
      item_acc += static_cast<std::int64_t>(batch.size());
    }
    const double train_loss = loss_acc / static_cast<double>(item_acc);

    double val_loss = 0.0;
    if (val && !val->empty() && cfg_.val_patches_per_image > 0) {
      const LayerAssignment va = sample_partition(
          registry_.m_count(), registry_.layer_count(),
          derive_seed(cfg_.seeds.sampling, 0xC1, static_cast<std::uint64_t>(epoch)));
      MemberView member = assemble_member(registry_, va);
      double acc = 0.0;
      std::int64_t n = 0;
      for (std::size_t i = 0; i < val->size(); ++i) {
        for (int p = 0; p < cfg_.val_patches_per_image; ++p) {
          const std::uint64_t ps = derive_seed(
              epoch_seed, 0xB1, static_cast<std::uint64_t>(i) * 97 + p);
          const PatchOrigin origin =
              sample_patch_origin((*val)[i].mask, cfg_.patch_shape, ps);
          const Volume img =
              extract_patch((*val)[i].image, origin, cfg_.patch_shape);
          const Mask mask =
              extract_patch((*val)[i].mask, origin, cfg_.patch_shape);
          const Tensor pred =
              backbone_forward(member, tensor_from_volume(img), nullptr);
          acc += stage_loss_with_grad(pred, mask, nullptr, cfg_.loss, 0.0,
                                      nullptr);
          ++n;
        }
      }
      val_loss = acc / static_cast<double>(n);
    }

    scheduler_.observe(train_loss);
    result.log.push_back({epoch, scheduler_.lr(), train_loss, val_loss});
    result.final_train_loss = train_loss;
  }
  result.final_lr = scheduler_.lr();
  registry_.trained_stage = std::max(registry_.trained_stage, cfg_.stage);
  registry_.trained_epochs += cfg_.epochs;
  return result;
}

TrainResult train_stage1(SubModelRegistry& registry,
                         const std::vector<TrainImage>& train,
                         const std::vector<TrainImage>* val,
                         const TrainingConfig& cfg) {
  if (cfg.stage != 1) throw InvalidConfigError("train_stage1 needs stage=1");
  Trainer trainer(registry, cfg);
  return trainer.run(train, val, nullptr);
}

TrainResult train_stage2(SubModelRegistry& registry,
                         const std::vector<TrainImage>& train,
                         const std::vector<TrainImage>* val,
                         const UncertaintyMapSet& umaps,
                         const TrainingConfig& cfg) {
  if (cfg.stage != 2) throw InvalidConfigError("train_stage2 needs stage=2");
  if (registry.trained_stage < 1)
    throw NotTrainedError("stage 2 requires a stage-1 checkpoint");
  Trainer trainer(registry, cfg);
  return trainer.run(train, val, &umaps);
}

void save_checkpoint(const fs::path& dir, const SubModelRegistry& registry,
                     const CheckpointMeta& meta) {
  fs::create_directories(dir);
  json j;
  j["format"] = "vesselseg-checkpoint";
  j["version"] = 1;
  j["stage"] = meta.stage;
  j["epoch"] = meta.epoch;
  j["m_count"] = registry.m_count();
  j["layer_count"] = registry.layer_count();
  j["topology_signature"] = registry.topology.signature();
  j["backbone"] = backbone_config_to_json(meta.backbone);
  j["seeds"] = seeds_to_json(meta.seeds);
  j["loss"] = loss_config_to_json(meta.loss);
  j["final_lr"] = meta.final_lr;
  j["final_train_loss"] = meta.final_train_loss;
  j["dtype"] = "float64";
  if (!meta.umap_provenance.empty())
    j["umap_provenance"] = meta.umap_provenance;
  std::vector<json> blobs;
  for (int m = 0; m < registry.m_count(); ++m) {
    const std::string name = "submodel_" + std::to_string(m) + ".bin";
    const std::vector<double> flat = flatten_submodel(registry.submodels[m]);
    write_f64_blob(flat, dir / name);
    json b;
    b["file"] = name;
    b["value_count"] = flat.size();
    blobs.push_back(b);
  }
  j["blobs"] = blobs;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

SubModelRegistry load_checkpoint(const fs::path& dir, CheckpointMeta* meta_out) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath))
    throw SidecarMissingError("missing checkpoint manifest: " + mpath.string());
  std::ifstream in(mpath);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SidecarCorruptError("unparseable checkpoint manifest: " +
                              std::string(e.what()));
  }
  CheckpointMeta meta;
  try {
    if (j.at("format").get<std::string>() != "vesselseg-checkpoint")
      throw SidecarCorruptError("not a checkpoint manifest: " + mpath.string());
    meta.stage = j.at("stage").get<int>();
    meta.epoch = j.at("epoch").get<int>();
    meta.m_count = j.at("m_count").get<int>();
    meta.layer_count = j.at("layer_count").get<int>();
    meta.signature = j.at("topology_signature").get<std::string>();
    meta.backbone = backbone_config_from_json(j.at("backbone"));
    meta.seeds = seeds_from_json(j.at("seeds"));
    meta.loss = loss_config_from_json(j.at("loss"));
    meta.final_lr = j.at("final_lr").get<double>();
    meta.final_train_loss = j.at("final_train_loss").get<double>();
    if (j.contains("umap_provenance"))
      meta.umap_provenance = j.at("umap_provenance").get<std::string>();

    const BackboneSpec spec = build_backbone(meta.backbone);
    if (spec.signature() != meta.signature)
      throw InvalidConfigError(
          "checkpoint/topology mismatch: manifest says " + meta.signature +
          " but the backbone config builds " + spec.signature());
    SubModelRegistry reg = make_registry(spec, meta.m_count);
    const auto& blobs = j.at("blobs");
    if (static_cast<int>(blobs.size()) != meta.m_count)
      throw SidecarCorruptError("checkpoint blob list does not match M");
    for (int m = 0; m < meta.m_count; ++m) {
      const std::string file = blobs[m].at("file").get<std::string>();
      const std::size_t count = blobs[m].at("value_count").get<std::size_t>();
      const std::vector<double> flat = read_f64_blob(dir / file, count);
      unflatten_submodel(flat, &reg.submodels[m]);
    }
    reg.trained_stage = meta.stage;
    reg.trained_epochs = meta.epoch;
    reg.checkpoint_id = meta.signature + ":stage" + std::to_string(meta.stage) +
                        ":epoch" + std::to_string(meta.epoch);
    if (meta_out) *meta_out = meta;
    return reg;
  } catch (const json::exception& e) {
    throw SidecarCorruptError("bad checkpoint manifest fields: " +
                              std::string(e.what()));
  }
}

}  // namespace vesselseg
