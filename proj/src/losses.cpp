#include "vesselseg/losses.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "vesselseg/errors.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/uncertainty.hpp"
#include "vesselseg/volume_io.hpp"

namespace vesselseg {

namespace fs = std::filesystem;
using nlohmann::json;

void LossConfig::validate() const {
  if (w_bg <= 0.0 || w_fg <= 0.0)
    throw InvalidConfigError("class weights must be > 0");
  if (lambda < 0.0) throw InvalidConfigError("lambda must be >= 0");
  if (!(epsilon > 0.0 && epsilon < 1.0))
    throw InvalidConfigError("epsilon must lie in (0, 1)");
  if (s_prep < 1) throw InvalidConfigError("s_prep must be >= 1");
}

namespace {

inline double clamp(double x, double lo, double hi) {
  return x < lo ? lo : (x > hi ? hi : x);
}

double wce_core(const double* p, const std::uint8_t* y, std::int64_t n,
                const LossConfig& cfg) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    if (y[i]) {
      acc -= cfg.w_fg * std::log(clamp(p[i], cfg.epsilon, 1.0 - cfg.epsilon));
    } else {
      acc -= cfg.w_bg *
             std::log(clamp(1.0 - p[i], cfg.epsilon, 1.0 - cfg.epsilon));
    }
  }
  return acc / static_cast<double>(n);
}

// Accumulates scale * dL/dp; gradient is zero where the log argument clamps.
void wce_grad_core(const double* p, const std::uint8_t* y, std::int64_t n,
                   const LossConfig& cfg, double scale, double* g) {
  const double inv_n = scale / static_cast<double>(n);
  for (std::int64_t i = 0; i < n; ++i) {
    if (y[i]) {
      if (p[i] > cfg.epsilon && p[i] < 1.0 - cfg.epsilon)
        g[i] += -cfg.w_fg / p[i] * inv_n;
    } else {
      const double q = 1.0 - p[i];
      if (q > cfg.epsilon && q < 1.0 - cfg.epsilon)
        g[i] += cfg.w_bg / q * inv_n;
    }
  }
}

double lu_core(const double* p, const std::uint8_t* y, const double* u,
               std::int64_t n, const LossConfig& cfg) {
  double acc = 0.0;
  if (cfg.mode == LossConfig::UncertaintyMode::kHadamardLog) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!y[i] || u[i] == 0.0) continue;
      acc -= u[i] * std::log(clamp(u[i] * p[i], cfg.epsilon, 1.0));
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!y[i] || u[i] == 0.0) continue;
      acc -= u[i] * std::log(clamp(p[i], cfg.epsilon, 1.0));
    }
  }
  return acc / static_cast<double>(n);
}

void lu_grad_core(const double* p, const std::uint8_t* y, const double* u,
                  std::int64_t n, const LossConfig& cfg, double scale,
                  double* g) {
  const double inv_n = scale / static_cast<double>(n);
  if (cfg.mode == LossConfig::UncertaintyMode::kHadamardLog) {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!y[i] || u[i] == 0.0) continue;
      const double arg = u[i] * p[i];
      if (arg > cfg.epsilon && arg < 1.0) g[i] += -u[i] / p[i] * inv_n;
    }
  } else {
    for (std::int64_t i = 0; i < n; ++i) {
      if (!y[i] || u[i] == 0.0) continue;
      if (p[i] > cfg.epsilon && p[i] < 1.0) g[i] += -u[i] / p[i] * inv_n;
    }
  }
}

void check_umap(const double* u, std::int64_t n) {
  for (std::int64_t i = 0; i < n; ++i)
    if (u[i] < 0.0)
      throw DomainError("uncertainty map has a negative entry");
}

}  // namespace

double weighted_cross_entropy(const Volume& pred, const Mask& target,
                              const LossConfig& cfg) {
  require_same_shape(pred.shape, target.shape, "weighted_cross_entropy");
  return wce_core(pred.v.data(), target.v.data(), pred.shape.voxels(), cfg);
}

Volume weighted_cross_entropy_grad(const Volume& pred, const Mask& target,
                                   const LossConfig& cfg) {
  require_same_shape(pred.shape, target.shape, "weighted_cross_entropy_grad");
  Volume g(pred.shape, 0.0, pred.spacing);
  wce_grad_core(pred.v.data(), target.v.data(), pred.shape.voxels(), cfg, 1.0,
                g.v.data());
  return g;
}

double uncertainty_loss(const Volume& pred, const Mask& target,
                        const Volume& umap, const LossConfig& cfg) {
  require_same_shape(pred.shape, target.shape, "uncertainty_loss");
  require_same_shape(pred.shape, umap.shape, "uncertainty_loss");
  check_umap(umap.v.data(), umap.shape.voxels());
  return lu_core(pred.v.data(), target.v.data(), umap.v.data(),
                 pred.shape.voxels(), cfg);
}

Volume uncertainty_loss_grad(const Volume& pred, const Mask& target,
                             const Volume& umap, const LossConfig& cfg) {
  require_same_shape(pred.shape, target.shape, "uncertainty_loss_grad");
  require_same_shape(pred.shape, umap.shape, "uncertainty_loss_grad");
  check_umap(umap.v.data(), umap.shape.voxels());
  Volume g(pred.shape, 0.0, pred.spacing);
  lu_grad_core(pred.v.data(), target.v.data(), umap.v.data(),
               pred.shape.voxels(), cfg, 1.0, g.v.data());
  return g;
}

double total_loss(const Volume& pred, const Mask& target, const Volume& umap,
                  const LossConfig& cfg) {
  return weighted_cross_entropy(pred, target, cfg) +
         cfg.lambda * uncertainty_loss(pred, target, umap, cfg);
}

Volume total_loss_grad(const Volume& pred, const Mask& target,
                       const Volume& umap, const LossConfig& cfg) {
  Volume g = weighted_cross_entropy_grad(pred, target, cfg);
  lu_grad_core(pred.v.data(), target.v.data(), umap.v.data(),
               pred.shape.voxels(), cfg, cfg.lambda, g.v.data());
  return g;
}

double stage_loss_with_grad(const Tensor& pred, const Mask& target,
                            const Volume* umap, const LossConfig& cfg,
                            double scale, Tensor* grad_accum) {
  if (pred.c != 1 || pred.d != target.shape.z || pred.h != target.shape.y ||
      pred.w != target.shape.x)
    throw ShapeError("prediction tensor does not match target shape");
  const std::int64_t n = pred.spatial();
  double loss = wce_core(pred.v.data(), target.v.data(), n, cfg);
  if (grad_accum)
    wce_grad_core(pred.v.data(), target.v.data(), n, cfg, scale,
                  grad_accum->v.data());
  if (umap) {
    check_umap(umap->v.data(), n);
    loss += cfg.lambda *
            lu_core(pred.v.data(), target.v.data(), umap->v.data(), n, cfg);
    if (grad_accum)
      lu_grad_core(pred.v.data(), target.v.data(), umap->v.data(), n, cfg,
                   scale * cfg.lambda, grad_accum->v.data());
  }
  return loss;
}

UncertaintyMapSet prepare_uncertainty_maps(SubModelRegistry& registry,
                                           const std::vector<TrainImage>& train,
                                           const LossConfig& cfg,
                                           std::uint64_t seed) {
  cfg.validate();
  if (registry.trained_stage < 1)
    throw NotTrainedError(
        "uncertainty maps need a trained stage-1 checkpoint; registry is "
        "untrained");
  UncertaintyMapSet set;
  set.checkpoint_id = registry.checkpoint_id;
  set.s_prep = cfg.s_prep;
  set.seed = seed;
  for (const auto& img : train) {
    auto [padded, rec] =
        pad_to_stride(img.image, registry.topology.stride_product);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : img.id) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    SampleStack stack =
        sample_forward(registry, padded, cfg.s_prep, derive_seed(seed, h));
    UQResult uq = aggregate(stack);
    set.maps[img.id] = crop_variance(uq.variance, rec);
  }
  return set;
}

void save_uncertainty_maps(const UncertaintyMapSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "vesselseg-umaps";
  manifest["version"] = 1;
  manifest["checkpoint_id"] = set.checkpoint_id;
  manifest["s_prep"] = set.s_prep;
  manifest["seed"] = set.seed;
  std::vector<std::string> ids;
  for (const auto& [id, map] : set.maps) {
    write_volume(map, dir / ("umap_" + id));
    ids.push_back(id);
  }
  manifest["images"] = ids;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
}

UncertaintyMapSet load_uncertainty_maps(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath))
    throw SidecarMissingError("missing uncertainty-map manifest: " +
                              mpath.string());
  std::ifstream in(mpath);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw SidecarCorruptError("unparseable manifest " + mpath.string() + ": " +
                              e.what());
  }
  UncertaintyMapSet set;
  try {
    if (manifest.at("format").get<std::string>() != "vesselseg-umaps")
      throw SidecarCorruptError("not an uncertainty-map manifest: " +
                                mpath.string());
    set.checkpoint_id = manifest.at("checkpoint_id").get<std::string>();
    set.s_prep = manifest.at("s_prep").get<int>();
    set.seed = manifest.at("seed").get<std::uint64_t>();
    for (const auto& id : manifest.at("images"))
      set.maps[id.get<std::string>()] =
          read_volume(dir / ("umap_" + id.get<std::string>()));
  } catch (const json::exception& e) {
    throw SidecarCorruptError("bad manifest fields in " + mpath.string() +
                              ": " + e.what());
  }
  return set;
}

}  // namespace vesselseg
