#pragma once

#include <filesystem>

#include <json.hpp>

#include "cpgan/trainer.hpp"

namespace cpgan {

/// Loads an experiment from an INI-style file:
///
///   [dataset]  name, image_size, square_side, min_count, max_count,
///              noise_prob, background, train_size, seed, cifar_dir
///   [train]    every TrainConfig field by name
///   [generator] / [discriminator]  levels, base_channels, encoder_dim
///   [eval]     eval_interval, validation_size
///   [run]      runs, output_dir, checkpoint_interval, sample_interval
///
/// Unknown keys are rejected. Missing keys keep their defaults; the dataset
/// section's `name` selects the preset that other dataset keys override.
ExperimentSpec load_experiment(const std::filesystem::path& path);

nlohmann::json to_json(const DatasetConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const UNetConfig& c);
nlohmann::json to_json(const ExperimentSpec& s);
nlohmann::json to_json(const LossBundle& b);
nlohmann::json to_json(const StepRecord& r, bool with_scores = false);
nlohmann::json to_json(const RunSummary& s);

DatasetConfig dataset_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
ExperimentSpec experiment_from_json(const nlohmann::json& j);
LossBundle loss_bundle_from_json(const nlohmann::json& j);

}  // namespace cpgan
