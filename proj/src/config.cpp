#include "vesselseg/config.hpp"

#include <fstream>

#include "vesselseg/errors.hpp"
#include "vesselseg/volume_io.hpp"

namespace vesselseg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename T>
void maybe(const json& j, const char* key, T* out) {
  if (j.contains(key)) *out = j.at(key).get<T>();
}

Shape3 shape_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3)
    throw InvalidConfigError("shape must be a 3-element array [z,y,x]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

json shape_to_json(const Shape3& s) { return json::array({s.z, s.y, s.x}); }

}  // namespace

json backbone_config_to_json(const BackboneConfig& cfg) {
  json j;
  j["kind"] = backbone_kind_name(cfg.kind);
  j["in_channels"] = cfg.in_channels;
  j["base_features"] = cfg.base_features;
  j["depth"] = cfg.depth;
  j["feature_schedule"] = cfg.feature_schedule;
  j["scale_factor"] = cfg.scale_factor;
  return j;
}

BackboneConfig backbone_config_from_json(const json& j) {
  BackboneConfig cfg;
  if (j.contains("kind"))
    cfg.kind = backbone_kind_from_name(j.at("kind").get<std::string>());
  maybe(j, "in_channels", &cfg.in_channels);
  maybe(j, "base_features", &cfg.base_features);
  maybe(j, "depth", &cfg.depth);
  maybe(j, "feature_schedule", &cfg.feature_schedule);
  maybe(j, "scale_factor", &cfg.scale_factor);
  return cfg;
}

json loss_config_to_json(const LossConfig& cfg) {
  json j;
  j["w_bg"] = cfg.w_bg;
  j["w_fg"] = cfg.w_fg;
  j["lambda"] = cfg.lambda;
  j["epsilon"] = cfg.epsilon;
  j["s_prep"] = cfg.s_prep;
  j["mode"] = cfg.mode == LossConfig::UncertaintyMode::kHadamardLog
                  ? "hadamard-log"
                  : "weighted-ce-by-U";
  return j;
}

LossConfig loss_config_from_json(const json& j) {
  LossConfig cfg;
  maybe(j, "w_bg", &cfg.w_bg);
  maybe(j, "w_fg", &cfg.w_fg);
  maybe(j, "lambda", &cfg.lambda);
  maybe(j, "epsilon", &cfg.epsilon);
  maybe(j, "s_prep", &cfg.s_prep);
  if (j.contains("mode")) {
    const std::string mode = j.at("mode").get<std::string>();
    if (mode == "hadamard-log")
      cfg.mode = LossConfig::UncertaintyMode::kHadamardLog;
    else if (mode == "weighted-ce-by-U")
      cfg.mode = LossConfig::UncertaintyMode::kWeightedCeByU;
    else
      throw InvalidConfigError("unknown loss mode: " + mode);
  }
  return cfg;
}

json seeds_to_json(const TrainSeeds& seeds) {
  json j;
  j["model_init"] = seeds.model_init;
  j["sampling"] = seeds.sampling;
  j["data"] = seeds.data;
  j["umap"] = seeds.umap;
  return j;
}

TrainSeeds seeds_from_json(const json& j) {
  TrainSeeds s;
  maybe(j, "model_init", &s.model_init);
  maybe(j, "sampling", &s.sampling);
  maybe(j, "data", &s.data);
  maybe(j, "umap", &s.umap);
  return s;
}

json phantom_config_to_json(const PhantomConfig& cfg) {
  json j;
  j["shape"] = shape_to_json(cfg.shape);
  j["spacing_mm"] = {cfg.spacing[0], cfg.spacing[1], cfg.spacing[2]};
  j["tree_count"] = cfg.tree_count;
  j["branching_probability"] = cfg.branching_probability;
  j["radius_range"] = {cfg.radius_min, cfg.radius_max};
  j["radius_decay"] = cfg.radius_decay;
  j["vessel_intensity_range"] = {cfg.vessel_intensity_min,
                                 cfg.vessel_intensity_max};
  j["background_noise_sigma"] = cfg.background_noise_sigma;
  j["skull_shell"] = cfg.skull_shell;
  j["skull_intensity"] = cfg.skull_intensity;
  j["bias_field_amplitude"] = cfg.bias_field_amplitude;
  return j;
}

PhantomConfig phantom_config_from_json(const json& j) {
  PhantomConfig cfg;
  if (j.contains("shape")) cfg.shape = shape_from_json(j.at("shape"));
  if (j.contains("spacing_mm")) {
    const auto& s = j.at("spacing_mm");
    cfg.spacing = {s[0].get<double>(), s[1].get<double>(), s[2].get<double>()};
  }
  maybe(j, "tree_count", &cfg.tree_count);
  maybe(j, "branching_probability", &cfg.branching_probability);
  if (j.contains("radius_range")) {
    cfg.radius_min = j.at("radius_range")[0].get<double>();
    cfg.radius_max = j.at("radius_range")[1].get<double>();
  }
  maybe(j, "radius_decay", &cfg.radius_decay);
  if (j.contains("vessel_intensity_range")) {
    cfg.vessel_intensity_min = j.at("vessel_intensity_range")[0].get<double>();
    cfg.vessel_intensity_max = j.at("vessel_intensity_range")[1].get<double>();
  }
  maybe(j, "background_noise_sigma", &cfg.background_noise_sigma);
  maybe(j, "skull_shell", &cfg.skull_shell);
  maybe(j, "skull_intensity", &cfg.skull_intensity);
  maybe(j, "bias_field_amplitude", &cfg.bias_field_amplitude);
  return cfg;
}

json ood_config_to_json(const OODConfig& cfg) {
  json j;
  j["spacing_factor"] = {cfg.spacing_factor[0], cfg.spacing_factor[1],
                         cfg.spacing_factor[2]};
  j["gamma"] = cfg.gamma;
  j["noise_sigma"] = cfg.noise_sigma;
  j["bias_amplitude"] = cfg.bias_amplitude;
  j["lesion_count"] = cfg.lesion_count;
  return j;
}

OODConfig ood_config_from_json(const json& j) {
  OODConfig cfg;
  if (j.contains("spacing_factor")) {
    const auto& f = j.at("spacing_factor");
    for (int a = 0; a < 3; ++a) cfg.spacing_factor[a] = f[a].get<double>();
  }
  maybe(j, "gamma", &cfg.gamma);
  maybe(j, "noise_sigma", &cfg.noise_sigma);
  maybe(j, "bias_amplitude", &cfg.bias_amplitude);
  maybe(j, "lesion_count", &cfg.lesion_count);
  return cfg;
}

void DataGenConfig::validate() const {
  phantom.validate();
  if (train_count < 1 || val_count < 0 || test_count < 1)
    throw InvalidConfigError("dataset split counts out of range");
  if (ood_count < 0) throw InvalidConfigError("ood_count must be >= 0");
  for (const auto& [name, cfg] : ood_variants) {
    if (name.empty()) throw InvalidConfigError("OOD variant needs a name");
    cfg.validate();
  }
}

RunConfig default_desk_config() {
  RunConfig cfg;
  cfg.data.seed = 1234;
  cfg.data.phantom = PhantomConfig{};
  cfg.data.train_count = 40;
  cfg.data.val_count = 8;
  cfg.data.test_count = 8;
  cfg.data.ood_count = 8;
  OODConfig spacing;
  spacing.spacing_factor[0] = 1.8;
  spacing.spacing_factor[1] = 1.5;
  spacing.spacing_factor[2] = 1.5;
  spacing.noise_sigma = 0.02;
  OODConfig noise;
  noise.noise_sigma = 0.10;
  noise.gamma = 1.25;
  OODConfig bias;
  bias.bias_amplitude = 0.5;
  bias.gamma = 0.75;
  OODConfig lesion;
  lesion.lesion_count = 6;
  lesion.noise_sigma = 0.04;
  cfg.data.ood_variants = {{"spacing", spacing},
                           {"noise", noise},
                           {"bias", bias},
                           {"lesion", lesion}};

  cfg.training.backbone.kind = BackboneKind::kOursUnet;
  cfg.training.backbone.scale_factor = 0.25;
  cfg.training.epochs = 30;
  cfg.training.batch_size = 4;
  cfg.training.submodels = 3;
  cfg.training.patch_shape = {32, 32, 32};
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfigError("cannot open config file: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw InvalidConfigError("unparseable config " + path.string() + ": " +
                             e.what());
  }
  RunConfig cfg = default_desk_config();
  try {
    if (j.contains("data")) {
      const json& d = j.at("data");
      maybe(d, "seed", &cfg.data.seed);
      if (d.contains("phantom"))
        cfg.data.phantom = phantom_config_from_json(d.at("phantom"));
      if (d.contains("splits")) {
        const json& s = d.at("splits");
        maybe(s, "train", &cfg.data.train_count);
        maybe(s, "val", &cfg.data.val_count);
        maybe(s, "test", &cfg.data.test_count);
      }
      maybe(d, "ood_count", &cfg.data.ood_count);
      if (d.contains("ood_variants")) {
        cfg.data.ood_variants.clear();
        for (const auto& [name, v] : d.at("ood_variants").items())
          cfg.data.ood_variants.emplace_back(name, ood_config_from_json(v));
      }
    }
    if (j.contains("backbone"))
      cfg.training.backbone = backbone_config_from_json(j.at("backbone"));
    if (j.contains("ensemble")) {
      const json& e = j.at("ensemble");
      maybe(e, "submodels", &cfg.training.submodels);
      maybe(e, "samples", &cfg.eval.samples);
    }
    if (j.contains("loss"))
      cfg.training.loss = loss_config_from_json(j.at("loss"));
    if (j.contains("training")) {
      const json& t = j.at("training");
      maybe(t, "epochs", &cfg.training.epochs);
      maybe(t, "batch_size", &cfg.training.batch_size);
      maybe(t, "learning_rate", &cfg.training.learning_rate);
      maybe(t, "plateau_patience", &cfg.training.plateau_patience);
      maybe(t, "plateau_factor", &cfg.training.plateau_factor);
      maybe(t, "plateau_tol", &cfg.training.plateau_tol);
      maybe(t, "patches_per_image", &cfg.training.patches_per_image);
      maybe(t, "val_patches_per_image", &cfg.training.val_patches_per_image);
      if (t.contains("patch_shape"))
        cfg.training.patch_shape = shape_from_json(t.at("patch_shape"));
      if (t.contains("seeds")) cfg.training.seeds = seeds_from_json(t.at("seeds"));
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      maybe(e, "threshold", &cfg.eval.threshold);
      maybe(e, "samples", &cfg.eval.samples);
      maybe(e, "infer_seed", &cfg.eval.infer_seed);
      if (e.contains("tau_grid")) {
        const json& t = e.at("tau_grid");
        maybe(t, "count", &cfg.eval.tau_count);
        maybe(t, "min", &cfg.eval.tau_min);
        maybe(t, "max", &cfg.eval.tau_max);
      }
    }
  } catch (const json::exception& e) {
    throw InvalidConfigError("bad config fields in " + path.string() + ": " +
                             e.what());
  }
  cfg.data.validate();
  return cfg;
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  json d;
  d["seed"] = cfg.data.seed;
  d["phantom"] = phantom_config_to_json(cfg.data.phantom);
  d["splits"] = {{"train", cfg.data.train_count},
                 {"val", cfg.data.val_count},
                 {"test", cfg.data.test_count}};
  d["ood_count"] = cfg.data.ood_count;
  json ov;
  for (const auto& [name, v] : cfg.data.ood_variants)
    ov[name] = ood_config_to_json(v);
  d["ood_variants"] = ov;
  j["data"] = d;
  j["backbone"] = backbone_config_to_json(cfg.training.backbone);
  j["ensemble"] = {{"submodels", cfg.training.submodels},
                   {"samples", cfg.eval.samples}};
  j["loss"] = loss_config_to_json(cfg.training.loss);
  json t;
  t["epochs"] = cfg.training.epochs;
  t["batch_size"] = cfg.training.batch_size;
  t["learning_rate"] = cfg.training.learning_rate;
  t["plateau_patience"] = cfg.training.plateau_patience;
  t["plateau_factor"] = cfg.training.plateau_factor;
  t["patches_per_image"] = cfg.training.patches_per_image;
  t["val_patches_per_image"] = cfg.training.val_patches_per_image;
  t["patch_shape"] = shape_to_json(cfg.training.patch_shape);
  t["seeds"] = seeds_to_json(cfg.training.seeds);
  j["training"] = t;
  j["eval"] = {{"threshold", cfg.eval.threshold},
               {"samples", cfg.eval.samples},
               {"infer_seed", cfg.eval.infer_seed},
               {"tau_grid",
                {{"count", cfg.eval.tau_count},
                 {"min", cfg.eval.tau_min},
                 {"max", cfg.eval.tau_max}}}};
  return j;
}

void save_dataset_manifest(const DatasetManifest& m, const fs::path& dir) {
  json j;
  j["format"] = "vesselseg-dataset";
  j["version"] = 1;
  j["shape"] = shape_to_json(m.shape);
  j["seed"] = m.seed;
  j["splits"] = {{"train", m.train_ids}, {"val", m.val_ids}, {"test", m.test_ids}};
  json ood;
  for (const auto& [name, ids] : m.ood) ood[name] = ids;
  j["ood"] = ood;
  j["per_image_seeds"] = m.per_image_seeds;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << j.dump(2) << "\n";
}

DatasetManifest load_dataset_manifest(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath))
    throw SidecarMissingError("missing dataset manifest: " + mpath.string());
  std::ifstream in(mpath);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SidecarCorruptError("unparseable dataset manifest: " +
                              std::string(e.what()));
  }
  DatasetManifest m;
  try {
    if (j.at("format").get<std::string>() != "vesselseg-dataset")
      throw SidecarCorruptError("not a dataset manifest: " + mpath.string());
    m.shape = shape_from_json(j.at("shape"));
    m.seed = j.at("seed").get<std::uint64_t>();
    m.train_ids = j.at("splits").at("train").get<std::vector<std::string>>();
    m.val_ids = j.at("splits").at("val").get<std::vector<std::string>>();
    m.test_ids = j.at("splits").at("test").get<std::vector<std::string>>();
    for (const auto& [name, ids] : j.at("ood").items())
      m.ood.emplace_back(name, ids.get<std::vector<std::string>>());
    if (j.contains("per_image_seeds")) m.per_image_seeds = j.at("per_image_seeds");
  } catch (const json::exception& e) {
    throw SidecarCorruptError("bad dataset manifest fields: " +
                              std::string(e.what()));
  }
  return m;
}

std::vector<TrainImage> load_images(const fs::path& split_dir,
                                    const std::vector<std::string>& ids) {
  std::vector<TrainImage> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    TrainImage img;
    img.id = id;
    img.image = read_volume(split_dir / id);
    img.mask = read_mask(split_dir / (id + "_mask"));
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace vesselseg
