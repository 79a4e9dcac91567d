#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cpgan/evalkit.hpp"
#include "cpgan/gan_losses.hpp"
#include "cpgan/nets.hpp"
#include "cpgan/seedpolicy.hpp"
#include "cpgan/synthdata.hpp"

namespace cpgan {

enum class GeneratorKind { direct, instance_colouring };

std::string to_string(GeneratorKind kind);
GeneratorKind generator_kind_from_string(const std::string& name);

struct NetShape {
  int levels = 4;
  int base_channels = 32;
  int encoder_dim = 512;
};

struct TrainConfig {
  int batch_size = 256;
  double lr_initial = 3e-4;
  int lr_drop_step = 30000;
  double lr_drop_factor = 3.0;
  int disc_only_steps = 1000;
  int total_steps = 300000;
  double aux_weight = kDefaultAuxWeight;
  bool blur_enabled = true;
  bool border_zero_enabled = true;
  bool anti_shortcut_enabled = true;
  bool grounded_fakes_enabled = true;
  bool mask_pred_enabled = true;
  GeneratorKind generator_kind = GeneratorKind::instance_colouring;
  std::uint64_t rng_seed = 0;

  bool non_saturating = false;
  int border_width = 1;
  double blur_sigma = 1.0;
  int blur_kernel = 3;
  double entropy_weight = kEntropyWeight;
  double critic_weight = 1.0;
  bool seed_dropout = true;
  NetShape generator_net;
  NetShape discriminator_net;

  void validate() const;
  LossOptions loss_options() const;
  UNetConfig generator_unet(int image_size) const;
  UNetConfig discriminator_unet(int image_size) const;
};

struct Batch {
  torch::Tensor sources, destinations, irrelevants, reals;  // N x 3 x H x W
  std::vector<std::size_t> source_ids, destination_ids, irrelevant_ids, real_ids;
};

/// Draws sources, destinations and reals independently without replacement;
/// irrelevants are the sources under a uniformly random derangement.
Batch build_batch(const SceneDataset& dataset, int batch_size, std::uint64_t rng_seed);

enum class StepPhase { discriminator, generator };
std::string to_string(StepPhase phase);

/// Per-sample discriminator outputs behind a StepRecord's losses.
struct StepScores {
  std::vector<double> real, fake, anti_shortcut, grounded_fake;
  std::vector<double> mask_real, mask_fake, mask_anti_shortcut, mask_grounded_fake;
};

struct PolicyStats {
  double mean_reward = 0.0;
  double mean_entropy = 0.0;
  double policy_term = 0.0;
  double critic_term = 0.0;
};

struct StepRecord {
  int step = 0;
  StepPhase phase = StepPhase::discriminator;
  LossBundle losses;
  std::optional<double> odp_eval;
  double lr = 0.0;
  double wallclock = 0.0;  // seconds since the trainer was constructed
  std::optional<PolicyStats> policy;
  StepScores scores;
};

/// Owns both networks and their optimizers. Steps below disc_only_steps
/// update only the discriminator; afterwards even offsets update the
/// generator and odd offsets the discriminator.
class Trainer {
 public:
  Trainer(TrainConfig config, std::shared_ptr<const SceneDataset> dataset);

  const TrainConfig& config() const noexcept { return config_; }
  int step() const noexcept { return step_; }
  int image_size() const noexcept { return image_size_; }

  StepPhase phase_of(int step) const;
  double learning_rate(int step) const;

  /// Builds the batch for the current step and trains on it.
  StepRecord train_step();
  /// Trains on an explicit batch; randomness still comes from the step index.
  StepRecord train_step(const Batch& batch);

  /// Test-time copy-masks (argmax seed for Instance Colouring), N x 1 x H x W.
  torch::Tensor predict_masks(const torch::Tensor& images);
  /// Seediness probabilities (N x H x W); undefined for the Direct generator.
  torch::Tensor predict_seediness(const torch::Tensor& images);

  void save_checkpoint(const std::filesystem::path& dir) const;
  void load_checkpoint(const std::filesystem::path& dir);

  std::uint64_t generator_hash() const;
  std::uint64_t discriminator_hash() const;

  torch::nn::Module& generator_module();
  DiscriminatorImpl& discriminator() { return *discriminator_; }

  /// Where non-finite losses dump their batch; empty disables dumping.
  void set_diagnostic_dir(std::filesystem::path dir) { diagnostic_dir_ = std::move(dir); }

  Batch batch_for_step(int step) const;

 private:
  struct Forward;
  Forward run_branches(const Batch& batch, bool generator_grad, std::uint64_t step_seed);
  void dump_divergence(const Batch& batch, const LossBundle& bundle) const;

  TrainConfig config_;
  std::shared_ptr<const SceneDataset> dataset_;
  int image_size_;
  int step_ = 0;
  DirectGenerator direct_{nullptr};
  InstColourGenerator instcolour_{nullptr};
  Discriminator discriminator_{nullptr};
  std::unique_ptr<torch::optim::Adam> gen_opt_;
  std::unique_ptr<torch::optim::Adam> disc_opt_;
  std::filesystem::path diagnostic_dir_;
  std::chrono::steady_clock::time_point started_;
};

/// Hash of every named parameter's bytes.
std::uint64_t parameter_hash(const torch::nn::Module& module);

/// ODP of a trainer's test-time masks over a labelled dataset.
EvalSummary evaluate_odp(Trainer& trainer, const SceneDataset& dataset, int batch_size = 64);

/// One PNG strip per validation image: source | copy-mask | composite onto
/// another validation image | seediness heatmap (Instance Colouring only).
void write_sample_strips(Trainer& trainer, const SceneDataset& validation, const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Experiments

struct ExperimentSpec {
  std::string dataset_name = "squares";  // preset name
  DatasetConfig dataset = *dataset_preset("squares");
  std::size_t train_size = 10000;
  std::uint64_t dataset_seed = 1;
  std::filesystem::path cifar_dir;

  TrainConfig train;

  int eval_interval = 500;
  int validation_size = 512;
  int checkpoint_interval = 5000;
  int sample_interval = 0;  // 0 disables sample strips
  int runs = 1;
  std::filesystem::path output_dir = "runs";

  void validate() const;
};

/// Validation scenes use seeds starting here, disjoint from the training range.
inline constexpr std::uint64_t kValidationSeedOffset = 1'000'000'000ULL;

struct RunSummary {
  double max_odp = 0.0;
  double final_odp = 0.0;
  int best_step = -1;
  bool stable = true;
  int steps = 0;
  double wallclock = 0.0;
};

struct DatasetPair {
  std::shared_ptr<const SceneDataset> train;
  std::shared_ptr<const SceneDataset> validation;
};

DatasetPair make_datasets(const ExperimentSpec& spec);

/// Trains spec.train.total_steps steps into run_dir (config.json,
/// records.jsonl, checkpoints/step_N, summary.json, samples/). When
/// `resume` is set and checkpoints exist, continues from the latest one.
RunSummary run_experiment(const ExperimentSpec& spec, const std::filesystem::path& run_dir, bool resume = false);

std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

}  // namespace cpgan
