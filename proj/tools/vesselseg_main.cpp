// vesselseg: dataset generation, two-stage ensemble training, sampling
// inference with voxelwise variance, evaluation, and report emission.
//
// Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
// divergence.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vesselseg/errors.hpp"
#include "vesselseg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace vesselseg;

namespace {

// VESSELSEG_OUT_ROOT prefixes relative output paths.
fs::path resolve_out(const std::string& path) {
  fs::path p(path);
  const char* root = std::getenv("VESSELSEG_OUT_ROOT");
  if (root && *root && p.is_relative()) return fs::path(root) / p;
  return p;
}

void print_seeds(const RunConfig& cfg) {
  std::cout << "seeds: data=" << cfg.data.seed << " model_init=[";
  for (std::size_t i = 0; i < cfg.training.seeds.model_init.size(); ++i)
    std::cout << (i ? "," : "") << cfg.training.seeds.model_init[i];
  std::cout << "] sampling=" << cfg.training.seeds.sampling
            << " data_stream=" << cfg.training.seeds.data
            << " umap=" << cfg.training.seeds.umap
            << " infer=" << cfg.eval.infer_seed << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"efficient layer-partition ensembles for 3D vessel segmentation"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, checkpoint, input_path;
  std::string resume, pred_dir, gt_dir, dataset_name = "dataset";
  std::vector<std::string> dataset_args;
  std::string compare_ensemble, compare_baseline;
  int stage = 1;
  int samples = -1;
  std::uint64_t seed_flag = 0;
  bool seed_given = false;

  auto* gen = app.add_subcommand("gen-data", "generate phantom datasets");
  gen->add_option("--config", config_path, "run config (JSON)");
  gen->add_option("--out", out_path, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train one stage");
  train->add_option("--config", config_path, "run config (JSON)");
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--stage", stage, "training stage (1 or 2)")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->add_option("--out", out_path, "run output directory")->required();

  auto* infer = app.add_subcommand("infer", "sampling inference");
  infer->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  infer->add_option("--input", input_path, "rawvol base path or directory")->required();
  infer->add_option("--out", out_path, "output directory")->required();
  infer->add_option("--samples", samples, "ensemble samples per image (default 20)");
  auto* seed_opt = infer->add_option("--seed", seed_flag, "inference seed");
  infer->add_option("--config", config_path, "run config (JSON)");

  auto* eval = app.add_subcommand("eval", "segmentation metrics");
  eval->add_option("--pred", pred_dir, "directory with <id>_mask predictions")->required();
  eval->add_option("--gt", gt_dir, "directory with <id>_mask ground truth")->required();
  eval->add_option("--out", out_path, "output TSV table")->required();
  eval->add_option("--dataset-name", dataset_name, "dataset id for the table");

  auto* report = app.add_subcommand("report", "sparsification + variance report");
  report
      ->add_option("--dataset", dataset_args,
                   "NAME:INFER_DIR:GT_DIR (repeatable)")
      ->required();
  report->add_option("--out", out_path, "output directory")->required();
  report->add_option("--compare-ensemble", compare_ensemble,
                     "ensemble eval table for the summary");
  report->add_option("--compare-baseline", compare_baseline,
                     "baseline eval table for the summary");
  report->add_option("--config", config_path, "run config (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = config_path.empty() ? default_desk_config()
                                        : load_run_config(config_path);
    if (gen->parsed()) {
      print_seeds(cfg);
      run_gen_data(cfg, resolve_out(out_path));
      std::cout << "dataset written to " << resolve_out(out_path).string() << "\n";
    } else if (train->parsed()) {
      print_seeds(cfg);
      const auto result = run_train(cfg, data_dir, stage, fs::path(resume),
                                    resolve_out(out_path));
      std::cout << "stage " << stage << " done; final train loss "
                << result.train.final_train_loss << "; checkpoint at "
                << result.checkpoint_dir.string() << "\n";
    } else if (infer->parsed()) {
      if (samples < 0) samples = cfg.eval.samples;
      if (seed_opt->count()) seed_given = true;
      const std::uint64_t seed = seed_given ? seed_flag : cfg.eval.infer_seed;
      std::cout << "seeds: infer=" << seed << " samples=" << samples << "\n";
      run_infer(checkpoint, input_path, resolve_out(out_path), samples, seed,
                cfg.eval.threshold);
      std::cout << "inference outputs written to "
                << resolve_out(out_path).string() << "\n";
    } else if (eval->parsed()) {
      const EvalResult r =
          run_eval(pred_dir, gt_dir, resolve_out(out_path), dataset_name);
      std::printf("%s mean: sensitivity=%.4f precision=%.4f dice=%.4f cldice=%.4f\n",
                  dataset_name.c_str(), r.mean.sensitivity, r.mean.precision,
                  r.mean.dice, r.mean.cldice);
    } else if (report->parsed()) {
      std::vector<ReportDataset> datasets;
      for (const auto& arg : dataset_args) {
        const auto c1 = arg.find(':');
        const auto c2 = arg.find(':', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos)
          throw InvalidConfigError("--dataset expects NAME:INFER_DIR:GT_DIR, got " + arg);
        datasets.push_back({arg.substr(0, c1), arg.substr(c1 + 1, c2 - c1 - 1),
                            arg.substr(c2 + 1)});
      }
      ReportOptions options;
      options.tau_grid =
          default_tau_grid(cfg.eval.tau_count, cfg.eval.tau_min, cfg.eval.tau_max);
      if (!compare_ensemble.empty())
        options.compare_ensemble_eval = fs::path(compare_ensemble);
      if (!compare_baseline.empty())
        options.compare_baseline_eval = fs::path(compare_baseline);
      run_report(datasets, options, resolve_out(out_path));
      std::cout << "report written to " << resolve_out(out_path).string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
