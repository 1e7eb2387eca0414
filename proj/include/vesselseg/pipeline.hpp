#ifndef VESSELSEG_PIPELINE_HPP_
#define VESSELSEG_PIPELINE_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vesselseg/config.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/training.hpp"
#include "vesselseg/uncertainty.hpp"

// Command-level entry points. The CLI binary is a thin wrapper over these so
// the acceptance suite can drive the same code paths.

namespace vesselseg {

// Writes train/val/test ID splits plus one directory per OOD variant, each
// volume min-max normalized in rawvol v1, and a dataset manifest with seeds.
void run_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct TrainCommandResult {
  std::filesystem::path checkpoint_dir;
  TrainResult train;
};

// Stage 1 trains from a fresh registry (or --resume); stage 2 resumes from a
// stage-1 checkpoint and prepares (or reuses) frozen uncertainty maps under
// <out_dir>/umaps.
TrainCommandResult run_train(const RunConfig& cfg,
                             const std::filesystem::path& data_dir, int stage,
                             const std::filesystem::path& resume_checkpoint,
                             const std::filesystem::path& out_dir);

struct InferOutputs {
  Mask mask;
  Volume mean;
  VarianceMap variance;
};

// pad -> sample_forward(s) -> aggregate -> binarize -> crop -> largest
// connected component.
InferOutputs infer_one(SubModelRegistry& registry, const Volume& input,
                       int samples, std::uint64_t seed, double threshold = 0.5);

// Runs infer_one over a rawvol file or directory; writes <id>_mask,
// <id>_mean, <id>_var per image.
void run_infer(const std::filesystem::path& checkpoint_dir,
               const std::filesystem::path& input,
               const std::filesystem::path& out_dir, int samples,
               std::uint64_t seed, double threshold = 0.5);

struct EvalResult {
  std::vector<MetricRecord> records;
  MetricRecord mean;  // image_id = "mean"
};

EvalResult run_eval(const std::filesystem::path& pred_dir,
                    const std::filesystem::path& gt_dir,
                    const std::filesystem::path& out_table,
                    const std::string& dataset_id);

struct ReportDataset {
  std::string name;
  std::filesystem::path infer_dir;  // <id>_mask + <id>_var from run_infer
  std::filesystem::path gt_dir;     // <id>_mask ground truth
};

struct ReportOptions {
  std::vector<double> tau_grid;  // empty = default grid
  std::optional<std::filesystem::path> compare_ensemble_eval;
  std::optional<std::filesystem::path> compare_baseline_eval;
};

// Emits per dataset a sparsification table + SVG plot, an average-variance
// table + bar chart across datasets, and (when both eval tables are given) an
// ensemble-vs-baseline summary table.
void run_report(const std::vector<ReportDataset>& datasets,
                const ReportOptions& options,
                const std::filesystem::path& out_dir);

// Sorted image ids found in a directory (bases of "<id>_mask" pairs or plain
// "<id>" rawvols, depending on the suffix argument).
std::vector<std::string> list_image_ids(const std::filesystem::path& dir,
                                        const std::string& suffix);

}  // namespace vesselseg

#endif  // VESSELSEG_PIPELINE_HPP_
