#ifndef VESSELSEG_CONFIG_HPP_
#define VESSELSEG_CONFIG_HPP_

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vesselseg/data.hpp"
#include "vesselseg/losses.hpp"
#include "vesselseg/training.hpp"

namespace vesselseg {

// Section-level JSON helpers, shared by the run-config file and checkpoint
// manifests. Missing fields keep their defaults.
nlohmann::json backbone_config_to_json(const BackboneConfig& cfg);
BackboneConfig backbone_config_from_json(const nlohmann::json& j);
nlohmann::json loss_config_to_json(const LossConfig& cfg);
LossConfig loss_config_from_json(const nlohmann::json& j);
nlohmann::json seeds_to_json(const TrainSeeds& seeds);
TrainSeeds seeds_from_json(const nlohmann::json& j);
nlohmann::json phantom_config_to_json(const PhantomConfig& cfg);
PhantomConfig phantom_config_from_json(const nlohmann::json& j);
nlohmann::json ood_config_to_json(const OODConfig& cfg);
OODConfig ood_config_from_json(const nlohmann::json& j);

struct DataGenConfig {
  std::uint64_t seed = 1234;
  PhantomConfig phantom;
  int train_count = 40;
  int val_count = 8;
  int test_count = 8;
  int ood_count = 8;  // images per OOD variant
  std::vector<std::pair<std::string, OODConfig>> ood_variants;

  void validate() const;
};

struct EvalConfig {
  double threshold = 0.5;
  int samples = 20;
  std::uint64_t infer_seed = 777;
  int tau_count = 20;
  double tau_min = 1e-6;
  double tau_max = 0.25;
};

// The single structured config document with sections data / backbone /
// ensemble / loss / training / eval.
struct RunConfig {
  DataGenConfig data;
  TrainingConfig training;
  EvalConfig eval;
};

// Desk-scale defaults: 64 cubed phantoms, 40/8/8 split plus four OOD variants
// of 8, quarter-width ours-unet, M=3, 30 epochs per stage.
RunConfig default_desk_config();

RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json run_config_to_json(const RunConfig& cfg);

// Dataset directory manifest written by gen-data.
struct DatasetManifest {
  Shape3 shape;
  std::uint64_t seed = 0;
  std::vector<std::string> train_ids, val_ids, test_ids;
  std::vector<std::pair<std::string, std::vector<std::string>>> ood;
  nlohmann::json per_image_seeds;  // id -> seed, per split directory
};

void save_dataset_manifest(const DatasetManifest& m,
                           const std::filesystem::path& dir);
DatasetManifest load_dataset_manifest(const std::filesystem::path& dir);

// Loads <id> / <id>_mask rawvol pairs from a split directory.
std::vector<TrainImage> load_images(const std::filesystem::path& split_dir,
                                    const std::vector<std::string>& ids);

}  // namespace vesselseg

#endif  // VESSELSEG_CONFIG_HPP_
