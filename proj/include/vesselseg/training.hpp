#ifndef VESSELSEG_TRAINING_HPP_
#define VESSELSEG_TRAINING_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vesselseg/backbones.hpp"
#include "vesselseg/ensemble.hpp"
#include "vesselseg/losses.hpp"

namespace vesselseg {

struct TrainSeeds {
  // One entry per sub-model, or a single base entry from which per-sub-model
  // seeds are derived.
  std::vector<std::uint64_t> model_init{1000};
  std::uint64_t sampling = 2000;  // layer-assignment stream
  std::uint64_t data = 3000;      // patch/augment/shuffle stream
  std::uint64_t umap = 4000;      // uncertainty-map preparation stream
};

struct TrainingConfig {
  int stage = 1;
  int epochs = 30;
  int batch_size = 4;
  double learning_rate = 1e-4;
  int plateau_patience = 30;
  double plateau_factor = 0.2;
  double plateau_tol = 1e-5;
  int patches_per_image = 4;
  int val_patches_per_image = 2;
  Shape3 patch_shape{32, 32, 32};
  int submodels = 3;
  TrainSeeds seeds;
  LossConfig loss;
  BackboneConfig backbone;

  void validate() const;
  std::vector<std::uint64_t> resolved_init_seeds() const;
};

// Training-loss plateau schedule: after `patience` epochs without improvement
// greater than `tol`, the learning rate is multiplied by `factor`.
class PlateauScheduler {
 public:
  PlateauScheduler(double lr, int patience, double factor, double tol)
      : lr_(lr), patience_(patience), factor_(factor), tol_(tol) {}

  double lr() const { return lr_; }

  void observe(double loss) {
    if (loss < best_ - tol_) {
      best_ = loss;
      stale_ = 0;
    } else if (++stale_ >= patience_) {
      lr_ *= factor_;
      stale_ = 0;
    }
  }

 private:
  double lr_;
  int patience_;
  double factor_;
  double tol_;
  double best_ = 1e300;
  int stale_ = 0;
};

// M weight sets drawn from the same initializer with the given seeds.
SubModelRegistry init_registry(const BackboneConfig& backbone, int m_count,
                               const std::vector<std::uint64_t>& init_seeds);

struct EpochLogRow {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  std::vector<EpochLogRow> log;
  double final_train_loss = 0.0;
  double final_lr = 0.0;
};

// Adam state, kept per (sub-model, slot, tensor) so that only the sub-models
// selected by a step's assignment are ever touched.
struct AdamTensorState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

class Trainer {
 public:
  Trainer(SubModelRegistry& registry, const TrainingConfig& cfg);

  struct StepItem {
    const TrainImage* image = nullptr;
    const Volume* umap = nullptr;  // null in stage 1
    std::uint64_t patch_seed = 0;
    std::uint64_t augment_seed = 0;
  };

  // One optimization step with a fixed layer assignment: patch extraction,
  // augmentation, forward, loss, backward, Adam update of the selected
  // sub-model weights only. Returns the mean batch loss.
  double step(const std::vector<StepItem>& batch,
              const LayerAssignment& assignment);

  // Full stage loop; umaps required for stage 2 (one per training image).
  TrainResult run(const std::vector<TrainImage>& train,
                  const std::vector<TrainImage>* val,
                  const UncertaintyMapSet* umaps);

  double current_lr() const { return scheduler_.lr(); }

 private:
  SubModelRegistry& registry_;
  TrainingConfig cfg_;
  PlateauScheduler scheduler_;
  std::vector<std::vector<std::vector<AdamTensorState>>> adam_;  // [m][slot][k]
};

TrainResult train_stage1(SubModelRegistry& registry,
                         const std::vector<TrainImage>& train,
                         const std::vector<TrainImage>* val,
                         const TrainingConfig& cfg);
TrainResult train_stage2(SubModelRegistry& registry,
                         const std::vector<TrainImage>& train,
                         const std::vector<TrainImage>* val,
                         const UncertaintyMapSet& umaps,
                         const TrainingConfig& cfg);

// Checkpoint directory: manifest.json + one float64 weight blob per
// sub-model in flatten_submodel order.
struct CheckpointMeta {
  int stage = 0;
  int epoch = 0;
  int m_count = 0;
  int layer_count = 0;
  std::string signature;
  BackboneConfig backbone;
  TrainSeeds seeds;
  LossConfig loss;
  double final_lr = 0.0;
  double final_train_loss = 0.0;
  std::string umap_provenance;  // checkpoint id of the stage-1 source maps
};

void save_checkpoint(const std::filesystem::path& dir,
                     const SubModelRegistry& registry,
                     const CheckpointMeta& meta);
SubModelRegistry load_checkpoint(const std::filesystem::path& dir,
                                 CheckpointMeta* meta_out = nullptr);

}  // namespace vesselseg

#endif  // VESSELSEG_TRAINING_HPP_
