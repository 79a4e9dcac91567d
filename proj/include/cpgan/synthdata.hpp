#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "cpgan/imaging.hpp"

namespace cpgan {

using Rgb = std::array<std::uint8_t, 3>;

/// The fixed 16-colour square palette: the eight {0,255}^3 corners followed by
/// eight mid-tones.
const std::array<Rgb, 16>& default_palette();

enum class BackgroundSource { cifar10, procedural, solid };

std::string to_string(BackgroundSource source);
BackgroundSource background_source_from_string(const std::string& name);

struct DatasetConfig {
  int image_size = 32;
  int square_side = 9;
  int min_count = 1;
  int max_count = 5;
  std::array<Rgb, 16> palette = default_palette();
  double noise_prob = 0.0;
  BackgroundSource background = BackgroundSource::procedural;

  void validate() const;
};

/// Named presets: "squares", "noisysquares", "easysquares".
std::optional<DatasetConfig> dataset_preset(const std::string& name);

struct PlacedSquare {
  int top = 0;
  int left = 0;
  int colour_index = 0;
};

struct Scene {
  Image image;
  Image background;
  std::vector<CopyMask> object_masks;  // visible region, placement order
  std::vector<PlacedSquare> squares;
  std::string background_id;
  std::uint64_t seed = 0;
};

/// Pool of 32x32 CIFAR-10 pictures used as backgrounds.
using BackgroundPool = std::vector<Image>;

/// Parses one CIFAR-10 binary batch (3073-byte records). Labels are dropped.
BackgroundPool load_cifar10_batch(const std::filesystem::path& file);

/// Loads every `data_batch_*.bin` in a directory (or a single batch file).
BackgroundPool load_cifar10_backgrounds(const std::filesystem::path& path);

Image procedural_background(int image_size, std::uint64_t rng_seed);

/// `cifar` is required when config.background is cifar10; the pool must hold
/// images of config.image_size.
Scene sample_scene(const DatasetConfig& config, std::uint64_t rng_seed, const BackgroundPool* cifar = nullptr);

/// Replaces each visible object pixel with pure black or white with
/// probability noise_prob. Masks are left as they are.
Scene apply_salt_pepper(Scene scene, double noise_prob, std::uint64_t rng_seed);

/// Indexed collection of labelled scenes.
class SceneDataset {
 public:
  virtual ~SceneDataset() = default;
  virtual std::size_t size() const = 0;
  virtual Scene scene(std::size_t index) const = 0;
  virtual int image_size() const = 0;
  /// Just the picture of scene `index`; datasets may serve it from a cache.
  virtual Image image(std::size_t index) const { return scene(index).image; }
};

/// Scenes generated on demand: scene i uses seed base_seed + i. With
/// `cache_images`, generated pictures are kept for later image() calls.
class SyntheticDataset final : public SceneDataset {
 public:
  SyntheticDataset(DatasetConfig config, std::uint64_t base_seed, std::size_t size,
                   std::shared_ptr<const BackgroundPool> cifar = nullptr, bool cache_images = false);

  std::size_t size() const override { return size_; }
  Scene scene(std::size_t index) const override;
  Image image(std::size_t index) const override;
  int image_size() const override { return config_.image_size; }
  const DatasetConfig& config() const noexcept { return config_; }
  std::uint64_t base_seed() const noexcept { return base_seed_; }

 private:
  DatasetConfig config_;
  std::uint64_t base_seed_;
  std::size_t size_;
  std::shared_ptr<const BackgroundPool> cifar_;
  bool cache_images_;
  mutable std::mutex cache_mutex_;
  mutable std::vector<Image> cache_;
};

/// A dataset materialized on disk by write_dataset (index.jsonl + PNGs).
class DirectoryDataset final : public SceneDataset {
 public:
  explicit DirectoryDataset(const std::filesystem::path& root);

  std::size_t size() const override { return scenes_.size(); }
  Scene scene(std::size_t index) const override { return scenes_.at(index); }
  int image_size() const override;

 private:
  std::vector<Scene> scenes_;
};

/// Writes images/NNNNNN.png, masks/NNNNNN_K.png and index.jsonl.
void write_dataset(const std::filesystem::path& root, const std::vector<Scene>& scenes);

}  // namespace cpgan
