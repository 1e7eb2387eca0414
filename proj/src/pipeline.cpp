#include "vesselseg/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "vesselseg/data.hpp"
#include "vesselseg/errors.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/volume_io.hpp"

namespace vesselseg {

namespace fs = std::filesystem;

namespace {

std::uint64_t fnv1a_str(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string image_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "img_%03d", index);
  return buf;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", x);
  return buf;
}

void write_split(const fs::path& dir, const std::string& split_name,
                 const PhantomConfig& phantom, int count, std::uint64_t seed,
                 const OODConfig* ood, std::vector<std::string>* ids,
                 nlohmann::json* seed_map) {
  fs::create_directories(dir);
  for (int i = 0; i < count; ++i) {
    const std::string id = image_id(i);
    const std::uint64_t img_seed =
        derive_seed(seed, fnv1a_str(split_name), static_cast<std::uint64_t>(i));
    auto [vol, mask] = generate_phantom(phantom, img_seed);
    Volume normalized = minmax_normalize(vol);
    if (ood)
      normalized = perturb_ood(normalized, *ood, derive_seed(img_seed, 0x0D));
    write_volume(normalized, dir / id);
    write_volume(mask, dir / (id + "_mask"));
    ids->push_back(id);
    (*seed_map)[split_name + "/" + id] = img_seed;
  }
}

}  // namespace

void run_gen_data(const RunConfig& cfg, const fs::path& out_dir) {
  cfg.data.validate();
  fs::create_directories(out_dir);
  DatasetManifest manifest;
  manifest.shape = cfg.data.phantom.shape;
  manifest.seed = cfg.data.seed;
  nlohmann::json seed_map = nlohmann::json::object();

  write_split(out_dir / "train", "train", cfg.data.phantom,
              cfg.data.train_count, cfg.data.seed, nullptr,
              &manifest.train_ids, &seed_map);
  write_split(out_dir / "val", "val", cfg.data.phantom, cfg.data.val_count,
              cfg.data.seed, nullptr, &manifest.val_ids, &seed_map);
  write_split(out_dir / "test", "test", cfg.data.phantom, cfg.data.test_count,
              cfg.data.seed, nullptr, &manifest.test_ids, &seed_map);
  for (const auto& [name, ood] : cfg.data.ood_variants) {
    std::vector<std::string> ids;
    write_split(out_dir / ("ood_" + name), "ood_" + name, cfg.data.phantom,
                cfg.data.ood_count, cfg.data.seed, &ood, &ids, &seed_map);
    manifest.ood.emplace_back(name, std::move(ids));
  }
  manifest.per_image_seeds = seed_map;
  save_dataset_manifest(manifest, out_dir);
}

TrainCommandResult run_train(const RunConfig& cfg, const fs::path& data_dir,
                             int stage, const fs::path& resume_checkpoint,
                             const fs::path& out_dir) {
  TrainingConfig tcfg = cfg.training;
  tcfg.stage = stage;
  tcfg.validate();

  const DatasetManifest manifest = load_dataset_manifest(data_dir);
  const std::vector<TrainImage> train =
      load_images(data_dir / "train", manifest.train_ids);
  const std::vector<TrainImage> val =
      load_images(data_dir / "val", manifest.val_ids);

  SubModelRegistry registry;
  CheckpointMeta source_meta;
  if (stage == 2 || !resume_checkpoint.empty()) {
    const fs::path src = resume_checkpoint;
    if (src.empty())
      throw NotTrainedError(
          "--stage 2 requires a stage-1 checkpoint (--resume)");
    registry = load_checkpoint(src, &source_meta);
    if (stage == 2 && registry.trained_stage < 1)
      throw NotTrainedError("stage 2 requires a trained stage-1 checkpoint");
  } else {
    registry =
        init_registry(tcfg.backbone, tcfg.submodels, tcfg.resolved_init_seeds());
  }

  TrainResult result;
  std::string umap_provenance;
  if (stage == 1) {
    result = train_stage1(registry, train, &val, tcfg);
  } else {
    const fs::path umap_dir = out_dir / "umaps";
    UncertaintyMapSet umaps;
    bool reuse = false;
    if (fs::exists(umap_dir / "manifest.json")) {
      umaps = load_uncertainty_maps(umap_dir);
      reuse = umaps.checkpoint_id == registry.checkpoint_id &&
              umaps.s_prep == tcfg.loss.s_prep &&
              umaps.seed == tcfg.seeds.umap;
    }
    if (!reuse) {
      umaps = prepare_uncertainty_maps(registry, train, tcfg.loss,
                                       tcfg.seeds.umap);
      save_uncertainty_maps(umaps, umap_dir);
    }
    umap_provenance = umaps.checkpoint_id;
    result = train_stage2(registry, train, &val, umaps, tcfg);
  }

  CheckpointMeta meta;
  meta.stage = stage;
  meta.epoch = registry.trained_epochs;
  meta.m_count = registry.m_count();
  meta.layer_count = registry.layer_count();
  meta.signature = registry.topology.signature();
  meta.backbone = tcfg.backbone;
  meta.seeds = tcfg.seeds;
  meta.loss = tcfg.loss;
  meta.final_lr = result.final_lr;
  meta.final_train_loss = result.final_train_loss;
  meta.umap_provenance = umap_provenance;

  registry.checkpoint_id = meta.signature + ":stage" + std::to_string(stage) +
                           ":epoch" + std::to_string(meta.epoch);
  const fs::path ckpt_dir = out_dir / ("checkpoint_stage" + std::to_string(stage));
  save_checkpoint(ckpt_dir, registry, meta);

  std::ofstream log(out_dir / ("train_log_stage" + std::to_string(stage) + ".tsv"));
  log << "epoch\tlr\ttrain_loss\tval_loss\n";
  for (const auto& row : result.log)
    log << row.epoch << "\t" << fmt(row.lr) << "\t" << fmt(row.train_loss)
        << "\t" << fmt(row.val_loss) << "\n";

  return {ckpt_dir, result};
}

InferOutputs infer_one(SubModelRegistry& registry, const Volume& input,
                       int samples, std::uint64_t seed, double threshold) {
  auto [padded, rec] = pad_to_stride(input, registry.topology.stride_product);
  const SampleStack stack = sample_forward(registry, padded, samples, seed);
  const UQResult uq = aggregate(stack);
  const Mask mask_padded = binarize(uq.mean, threshold);
  InferOutputs out;
  out.mean = crop(uq.mean, rec);
  out.variance = crop_variance(uq.variance, rec);
  out.mask = largest_connected_component(crop_mask(mask_padded, rec));
  return out;
}

std::vector<std::string> list_image_ids(const fs::path& dir,
                                        const std::string& suffix) {
  std::vector<std::string> ids;
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const fs::path p = entry.path();
    if (p.extension() != ".json") continue;
    std::string stem = p.stem().string();
    if (stem == "manifest") continue;
    if (suffix.empty()) {
      // plain volumes only: skip derived outputs
      for (const char* s : {"_mask", "_mean", "_var"})
        if (stem.size() > std::strlen(s) &&
            stem.compare(stem.size() - std::strlen(s), std::strlen(s), s) == 0) {
          stem.clear();
          break;
        }
      if (!stem.empty()) ids.push_back(stem);
    } else {
      if (stem.size() > suffix.size() &&
          stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
        ids.push_back(stem.substr(0, stem.size() - suffix.size()));
    }
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void run_infer(const fs::path& checkpoint_dir, const fs::path& input,
               const fs::path& out_dir, int samples, std::uint64_t seed,
               double threshold) {
  SubModelRegistry registry = load_checkpoint(checkpoint_dir);
  fs::create_directories(out_dir);
  std::vector<std::pair<std::string, fs::path>> items;
  if (fs::is_directory(input)) {
    for (const auto& id : list_image_ids(input, ""))
      items.emplace_back(id, input / id);
  } else {
    items.emplace_back(input.stem().string(), input);
  }
  if (items.empty()) throw DataError("no input volumes found in " + input.string());
  for (const auto& [id, base] : items) {
    const Volume vol = minmax_normalize(read_volume(base));
    const InferOutputs out =
        infer_one(registry, vol, samples, derive_seed(seed, fnv1a_str(id)),
                  threshold);
    write_volume(out.mask, out_dir / (id + "_mask"));
    write_volume(out.mean, out_dir / (id + "_mean"));
    write_volume(out.variance, out_dir / (id + "_var"));
  }
}

EvalResult run_eval(const fs::path& pred_dir, const fs::path& gt_dir,
                    const fs::path& out_table, const std::string& dataset_id) {
  const std::vector<std::string> pred_ids = list_image_ids(pred_dir, "_mask");
  const std::vector<std::string> gt_ids = list_image_ids(gt_dir, "_mask");
  std::vector<std::string> missing_pred, missing_gt;
  std::set_difference(gt_ids.begin(), gt_ids.end(), pred_ids.begin(),
                      pred_ids.end(), std::back_inserter(missing_pred));
  std::set_difference(pred_ids.begin(), pred_ids.end(), gt_ids.begin(),
                      gt_ids.end(), std::back_inserter(missing_gt));
  if (!missing_pred.empty() || !missing_gt.empty()) {
    std::string msg = "image id mismatch between prediction and ground truth;";
    if (!missing_pred.empty()) {
      msg += " missing predictions for:";
      for (const auto& id : missing_pred) msg += " " + id;
      msg += ";";
    }
    if (!missing_gt.empty()) {
      msg += " missing ground truth for:";
      for (const auto& id : missing_gt) msg += " " + id;
    }
    throw IdMismatchError(msg);
  }
  if (pred_ids.empty()) throw DataError("no mask pairs to evaluate");

  EvalResult result;
  double s_acc = 0, p_acc = 0, d_acc = 0, c_acc = 0;
  for (const auto& id : pred_ids) {
    const Mask pred = read_mask(pred_dir / (id + "_mask"));
    const Mask gt = read_mask(gt_dir / (id + "_mask"));
    result.records.push_back(evaluate_pair(pred, gt, id, dataset_id));
    const MetricRecord& r = result.records.back();
    s_acc += r.sensitivity;
    p_acc += r.precision;
    d_acc += r.dice;
    c_acc += r.cldice;
  }
  const double n = static_cast<double>(result.records.size());
  result.mean.image_id = "mean";
  result.mean.dataset_id = dataset_id;
  result.mean.sensitivity = s_acc / n;
  result.mean.precision = p_acc / n;
  result.mean.dice = d_acc / n;
  result.mean.cldice = c_acc / n;

  if (!out_table.empty()) {
    if (out_table.has_parent_path())
      fs::create_directories(out_table.parent_path());
    std::ofstream out(out_table);
    if (!out) throw DataError("cannot write " + out_table.string());
    out << "dataset\timage\tsensitivity\tprecision\tdice\tcldice\n";
    for (const auto& r : result.records)
      out << r.dataset_id << "\t" << r.image_id << "\t" << fmt(r.sensitivity)
          << "\t" << fmt(r.precision) << "\t" << fmt(r.dice) << "\t"
          << fmt(r.cldice) << "\n";
    const MetricRecord& m = result.mean;
    out << m.dataset_id << "\tmean\t" << fmt(m.sensitivity) << "\t"
        << fmt(m.precision) << "\t" << fmt(m.dice) << "\t" << fmt(m.cldice)
        << "\n";
  }
  return result;
}

namespace {

// Minimal deterministic SVG line/bar plots; the numbers live in the TSV
// tables next to them.
void write_svg_curve(const fs::path& path, const std::string& title,
                     const std::vector<double>& xs,
                     const std::vector<double>& ys) {
  const int w = 640, h = 400, ml = 70, mr = 20, mt = 40, mb = 50;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  double xmin = 1e300, xmax = -1e300;
  for (double x : xs) {
    xmin = std::min(xmin, std::log10(x));
    xmax = std::max(xmax, std::log10(x));
  }
  if (xmax <= xmin) xmax = xmin + 1.0;
  auto px = [&](double x) {
    return ml + (std::log10(x) - xmin) / (xmax - xmin) * (w - ml - mr);
  };
  auto py = [&](double y) { return h - mb - y * (h - mt - mb); };
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-size=\"16\">" << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  for (int g = 0; g <= 4; ++g) {
    const double y = 0.25 * g;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.2f", y);
    out << "<text x=\"" << ml - 8 << "\" y=\"" << py(y) + 4
        << "\" text-anchor=\"end\" font-size=\"11\">" << buf << "</text>\n";
  }
  out << "<text x=\"" << (w + ml - mr) / 2 << "\" y=\"" << h - 12
      << "\" text-anchor=\"middle\" font-size=\"12\">variance threshold "
         "(log scale)</text>\n";
  out << "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.2f,%.2f ", px(xs[i]), py(ys[i]));
    out << buf;
  }
  out << "\"/>\n</svg>\n";
}

void write_svg_bars(const fs::path& path, const std::string& title,
                    const std::vector<std::string>& labels,
                    const std::vector<double>& values) {
  const int w = 640, h = 400, ml = 90, mr = 20, mt = 40, mb = 60;
  double vmax = 0.0;
  for (double v : values) vmax = std::max(vmax, v);
  if (vmax <= 0.0) vmax = 1.0;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
      << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  out << "<text x=\"" << w / 2 << "\" y=\"24\" text-anchor=\"middle\" "
         "font-size=\"16\">" << title << "</text>\n";
  out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
      << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  const int n = static_cast<int>(values.size());
  const double band = static_cast<double>(w - ml - mr) / n;
  for (int i = 0; i < n; ++i) {
    const double bh = values[i] / vmax * (h - mt - mb);
    const double x0 = ml + i * band + 0.15 * band;
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                  "fill=\"#b25a1f\"/>\n",
                  x0, h - mb - bh, 0.7 * band, bh);
    out << buf;
    out << "<text x=\"" << ml + (i + 0.5) * band << "\" y=\"" << h - mb + 16
        << "\" text-anchor=\"middle\" font-size=\"11\">" << labels[i]
        << "</text>\n";
    std::snprintf(buf, sizeof buf, "%.3g", values[i]);
    out << "<text x=\"" << ml + (i + 0.5) * band << "\" y=\""
        << h - mb - bh - 6 << "\" text-anchor=\"middle\" font-size=\"10\">"
        << buf << "</text>\n";
  }
  out << "</svg>\n";
}

struct EvalTableMeans {
  std::map<std::string, MetricRecord> by_dataset;  // dataset -> mean row
};

EvalTableMeans parse_eval_means(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open eval table: " + path.string());
  EvalTableMeans means;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    MetricRecord r;
    std::string sens, prec, dice_s, cl;
    std::getline(ss, r.dataset_id, '\t');
    std::getline(ss, r.image_id, '\t');
    std::getline(ss, sens, '\t');
    std::getline(ss, prec, '\t');
    std::getline(ss, dice_s, '\t');
    std::getline(ss, cl, '\t');
    if (r.image_id != "mean") continue;
    r.sensitivity = std::stod(sens);
    r.precision = std::stod(prec);
    r.dice = std::stod(dice_s);
    r.cldice = std::stod(cl);
    means.by_dataset[r.dataset_id] = r;
  }
  return means;
}

}  // namespace

void run_report(const std::vector<ReportDataset>& datasets,
                const ReportOptions& options, const fs::path& out_dir) {
  if (datasets.empty()) throw InvalidConfigError("report needs >= 1 dataset");
  fs::create_directories(out_dir);
  const std::vector<double> taus =
      options.tau_grid.empty() ? default_tau_grid() : options.tau_grid;

  std::vector<std::string> names;
  std::vector<double> avg_vars;
  for (const auto& ds : datasets) {
    const std::vector<std::string> ids = list_image_ids(ds.infer_dir, "_mask");
    if (ids.empty())
      throw DataError("no inference outputs in " + ds.infer_dir.string());
    std::vector<double> mean_curve(taus.size(), 0.0);
    double var_acc = 0.0;
    std::vector<double> sorted_taus;
    for (const auto& id : ids) {
      const Mask mask = read_mask(ds.infer_dir / (id + "_mask"));
      const VarianceMap var = read_volume(ds.infer_dir / (id + "_var"));
      const Mask gt = read_mask(ds.gt_dir / (id + "_mask"));
      const SparsificationCurve curve = sparsification_curve(
          mask, var, gt, taus,
          [](const Mask& p, const Mask& g) { return cl_dice(p, g); },
          "clDice");
      sorted_taus = curve.thresholds;
      for (std::size_t i = 0; i < curve.metric_values.size(); ++i)
        mean_curve[i] += curve.metric_values[i];
      var_acc += average_variance(var);
    }
    for (auto& v : mean_curve) v /= static_cast<double>(ids.size());

    std::ofstream tsv(out_dir / ("sparsification_" + ds.name + ".tsv"));
    if (!tsv) throw DataError("cannot write sparsification table");
    tsv << "tau\tmean_cldice\n";
    for (std::size_t i = 0; i < sorted_taus.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", sorted_taus[i]);
      tsv << buf << "\t" << fmt(mean_curve[i]) << "\n";
    }
    write_svg_curve(out_dir / ("sparsification_" + ds.name + ".svg"),
                    "mean clDice vs variance threshold: " + ds.name,
                    sorted_taus, mean_curve);
    names.push_back(ds.name);
    avg_vars.push_back(var_acc / static_cast<double>(ids.size()));
  }

  {
    std::ofstream tsv(out_dir / "average_variance.tsv");
    if (!tsv) throw DataError("cannot write average variance table");
    tsv << "dataset\taverage_variance\n";
    for (std::size_t i = 0; i < names.size(); ++i) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.9g", avg_vars[i]);
      tsv << names[i] << "\t" << buf << "\n";
    }
    write_svg_bars(out_dir / "average_variance.svg",
                   "average variance per dataset", names, avg_vars);
  }

  if (options.compare_ensemble_eval && options.compare_baseline_eval) {
    const EvalTableMeans ens = parse_eval_means(*options.compare_ensemble_eval);
    const EvalTableMeans base = parse_eval_means(*options.compare_baseline_eval);
    std::ofstream tsv(out_dir / "compare_summary.tsv");
    if (!tsv) throw DataError("cannot write comparison table");
    tsv << "dataset\tmetric\tensemble\tbaseline\tdelta\n";
    for (const auto& [dsname, e] : ens.by_dataset) {
      auto it = base.by_dataset.find(dsname);
      if (it == base.by_dataset.end()) continue;
      const MetricRecord& b = it->second;
      const struct {
        const char* name;
        double e, b;
      } rows[] = {{"sensitivity", e.sensitivity, b.sensitivity},
                  {"precision", e.precision, b.precision},
                  {"dice", e.dice, b.dice},
                  {"cldice", e.cldice, b.cldice}};
      for (const auto& r : rows)
        tsv << dsname << "\t" << r.name << "\t" << fmt(r.e) << "\t" << fmt(r.b)
            << "\t" << fmt(r.e - r.b) << "\n";
    }
  }
}

}  // namespace vesselseg
