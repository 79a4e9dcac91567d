#include "cpgan/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include <fmt/core.h>
#include <json.hpp>

#include "cpgan/rng.hpp"

namespace cpgan {

namespace {

constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarPixels;

float channel(const Rgb& rgb, int c) { return rgb[c] / 255.0f; }

}  // namespace

const std::array<Rgb, 16>& default_palette() {
  static const std::array<Rgb, 16> palette = {{
      {0, 0, 0},       {255, 0, 0},     {0, 255, 0},     {0, 0, 255},
      {255, 255, 0},   {255, 0, 255},   {0, 255, 255},   {255, 255, 255},
      {128, 0, 0},     {0, 128, 0},     {0, 0, 128},     {128, 128, 0},
      {128, 0, 128},   {0, 128, 128},   {192, 192, 192}, {128, 128, 128},
  }};
  return palette;
}

std::string to_string(BackgroundSource source) {
  switch (source) {
    case BackgroundSource::cifar10: return "cifar10";
    case BackgroundSource::procedural: return "procedural";
    case BackgroundSource::solid: return "solid";
  }
  return "unknown";
}

BackgroundSource background_source_from_string(const std::string& name) {
  if (name == "cifar10") return BackgroundSource::cifar10;
  if (name == "procedural") return BackgroundSource::procedural;
  if (name == "solid") return BackgroundSource::solid;
  throw ConfigError("unknown background source '" + name + "'");
}

void DatasetConfig::validate() const {
  if (image_size < kMinImageSide) throw ConfigError("dataset: image_size must be >= 8");
  if (square_side < 1 || square_side >= image_size) throw ConfigError("dataset: need 1 <= square_side < image_size");
  if (min_count < 1 || max_count > 16 || min_count > max_count) {
    throw ConfigError("dataset: count range must lie within [1,16] with min <= max");
  }
  if (!(noise_prob >= 0.0 && noise_prob <= 1.0)) throw ConfigError("dataset: noise_prob outside [0,1]");
  if (background == BackgroundSource::cifar10 && image_size != static_cast<int>(kCifarSide)) {
    throw ConfigError("dataset: CIFAR-10 backgrounds are 32x32");
  }
}

std::optional<DatasetConfig> dataset_preset(const std::string& name) {
  DatasetConfig c;
  if (name == "squares") {
    c.background = BackgroundSource::cifar10;
    return c;
  }
  if (name == "noisysquares") {
    c.background = BackgroundSource::cifar10;
    c.noise_prob = 0.3;
    return c;
  }
  if (name == "easysquares") {
    c.image_size = 24;
    c.square_side = 7;
    c.min_count = 1;
    c.max_count = 3;
    c.background = BackgroundSource::solid;
    return c;
  }
  return std::nullopt;
}

BackgroundPool load_cifar10_batch(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open CIFAR-10 batch " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  BackgroundPool pool;
  if (bytes.empty()) {
    std::cerr << "warning: CIFAR-10 batch " << file << " is empty\n";
    return pool;
  }
  if (bytes.size() % kCifarRecord != 0) {
    throw ParseError("CIFAR-10 batch " + file.string() + " has a truncated record",
                     bytes.size() / kCifarRecord * kCifarRecord);
  }
  const std::size_t n = bytes.size() / kCifarRecord;
  pool.reserve(n);
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* rec = bytes.data() + r * kCifarRecord + 1;  // skip label
    std::vector<float> hwc(3 * kCifarPixels);
    for (std::size_t p = 0; p < kCifarPixels; ++p) {
      for (std::size_t c = 0; c < 3; ++c) hwc[p * 3 + c] = rec[c * kCifarPixels + p] / 255.0f;
    }
    pool.emplace_back(static_cast<int>(kCifarSide), static_cast<int>(kCifarSide), std::move(hwc));
  }
  return pool;
}

BackgroundPool load_cifar10_backgrounds(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw IoError("CIFAR-10 path does not exist: " + path.string());
  if (fs::is_regular_file(path)) return load_cifar10_batch(path);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path)) {
    const auto name = entry.path().filename().string();
    if (entry.is_regular_file() && name.starts_with("data_batch_") && name.ends_with(".bin")) {
      files.push_back(entry.path());
    }
  }
  if (files.empty()) throw IoError("no data_batch_*.bin files in " + path.string());
  std::sort(files.begin(), files.end());
  BackgroundPool pool;
  for (const auto& f : files) {
    auto part = load_cifar10_batch(f);
    pool.insert(pool.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return pool;
}

Image procedural_background(int image_size, std::uint64_t rng_seed) {
  Rng rng(derive_seed(rng_seed, {0x70726f63}));
  constexpr int kWaves = 6;
  constexpr double kNoise = 0.15;
  const int n = image_size;
  std::vector<double> raw(static_cast<std::size_t>(n) * n * 3, 0.0);
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < kWaves; ++k) {
      const double freq = 0.5 + 3.5 * uniform01(rng);  // cycles per image
      const double theta = 2.0 * std::numbers::pi * uniform01(rng);
      const double phase = 2.0 * std::numbers::pi * uniform01(rng);
      const double amp = 0.3 + 0.7 * uniform01(rng);
      const double fx = freq * std::cos(theta) / n, fy = freq * std::sin(theta) / n;
      for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
          raw[(static_cast<std::size_t>(y) * n + x) * 3 + c] +=
              amp * std::sin(2.0 * std::numbers::pi * (fx * x + fy * y) + phase);
        }
      }
    }
  }
  for (double& v : raw) v += kNoise * kWaves * (uniform01(rng) - 0.5);
  std::vector<float> out(raw.size());
  for (int c = 0; c < 3; ++c) {
    double lo = 1e300, hi = -1e300;
    for (std::size_t i = c; i < raw.size(); i += 3) {
      lo = std::min(lo, raw[i]);
      hi = std::max(hi, raw[i]);
    }
    const double span = std::max(hi - lo, 1e-12);
    for (std::size_t i = c; i < raw.size(); i += 3) {
      out[i] = static_cast<float>(std::clamp((raw[i] - lo) / span, 0.0, 1.0));
    }
  }
  return Image(n, n, std::move(out));
}

Scene sample_scene(const DatasetConfig& config, std::uint64_t rng_seed, const BackgroundPool* cifar) {
  config.validate();
  Rng rng(derive_seed(rng_seed, {0x7363656e65}));
  const int n = config.image_size;
  Scene scene;
  scene.seed = rng_seed;

  int background_colour = -1;
  switch (config.background) {
    case BackgroundSource::cifar10: {
      if (cifar == nullptr || cifar->empty()) throw IoError("CIFAR-10 backgrounds requested but none are loaded");
      const auto idx = std::uniform_int_distribution<std::size_t>(0, cifar->size() - 1)(rng);
      scene.background = (*cifar)[idx];
      scene.background_id = fmt::format("cifar10:{}", idx);
      break;
    }
    case BackgroundSource::procedural: {
      const auto bg_seed = rng();
      scene.background = procedural_background(n, bg_seed);
      scene.background_id = fmt::format("procedural:{}", bg_seed);
      break;
    }
    case BackgroundSource::solid: {
      background_colour = std::uniform_int_distribution<int>(0, 15)(rng);
      const Rgb& rgb = config.palette[background_colour];
      scene.background = Image(n, n);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          for (int c = 0; c < 3; ++c) scene.background.at(y, x, c) = channel(rgb, c);
      scene.background_id = fmt::format("solid:{}", background_colour);
      break;
    }
  }

  const int count = std::uniform_int_distribution<int>(config.min_count, config.max_count)(rng);
  const int side = config.square_side;
  scene.image = scene.background;
  // owner[p] = index of the square visible at pixel p, or -1.
  std::vector<int> owner(static_cast<std::size_t>(n) * n, -1);
  for (int k = 0; k < count; ++k) {
    PlacedSquare sq;
    sq.top = std::uniform_int_distribution<int>(0, n - side)(rng);
    sq.left = std::uniform_int_distribution<int>(0, n - side)(rng);
    if (background_colour >= 0) {
      // Never paint a square in the background colour of a solid scene.
      sq.colour_index = std::uniform_int_distribution<int>(0, 14)(rng);
      if (sq.colour_index >= background_colour) ++sq.colour_index;
    } else {
      sq.colour_index = std::uniform_int_distribution<int>(0, 15)(rng);
    }
    const Rgb& rgb = config.palette[sq.colour_index];
    for (int y = sq.top; y < sq.top + side; ++y) {
      for (int x = sq.left; x < sq.left + side; ++x) {
        owner[static_cast<std::size_t>(y) * n + x] = k;
        for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = channel(rgb, c);
      }
    }
    scene.squares.push_back(sq);
  }
  for (int k = 0; k < count; ++k) {
    CopyMask m(n, n);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x)
        if (owner[static_cast<std::size_t>(y) * n + x] == k) m.at(y, x) = 1.0f;
    scene.object_masks.push_back(std::move(m));
  }
  if (config.noise_prob > 0.0) {
    scene = apply_salt_pepper(std::move(scene), config.noise_prob, derive_seed(rng_seed, {0x6e6f697365}));
  }
  return scene;
}

Scene apply_salt_pepper(Scene scene, double noise_prob, std::uint64_t rng_seed) {
  CPGAN_EXPECT(noise_prob >= 0.0 && noise_prob <= 1.0, "apply_salt_pepper: noise_prob outside [0,1]");
  if (noise_prob == 0.0) return scene;
  Rng rng(derive_seed(rng_seed, {0x7370}));
  std::bernoulli_distribution hit(noise_prob);
  std::bernoulli_distribution white(0.5);
  const int h = scene.image.height(), w = scene.image.width();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const bool inside = std::any_of(scene.object_masks.begin(), scene.object_masks.end(),
                                      [&](const CopyMask& m) { return m.at(y, x) > 0.5f; });
      if (!inside || !hit(rng)) continue;
      const float v = white(rng) ? 1.0f : 0.0f;
      for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = v;
    }
  }
  return scene;
}

SyntheticDataset::SyntheticDataset(DatasetConfig config, std::uint64_t base_seed, std::size_t size,
                                   std::shared_ptr<const BackgroundPool> cifar, bool cache_images)
    : config_(std::move(config)),
      base_seed_(base_seed),
      size_(size),
      cifar_(std::move(cifar)),
      cache_images_(cache_images) {
  if (size_ == 0) throw ConfigError("dataset size must be positive");
  if (cache_images_) cache_.resize(size_);
  config_.validate();
  if (config_.background == BackgroundSource::cifar10 && (!cifar_ || cifar_->empty())) {
    throw IoError("dataset needs CIFAR-10 backgrounds but none were loaded");
  }
}

Scene SyntheticDataset::scene(std::size_t index) const {
  CPGAN_EXPECT(index < size_, "SyntheticDataset: index out of range");
  return sample_scene(config_, base_seed_ + index, cifar_.get());
}

Image SyntheticDataset::image(std::size_t index) const {
  if (!cache_images_) return scene(index).image;
  CPGAN_EXPECT(index < size_, "SyntheticDataset: index out of range");
  {
    std::lock_guard lock(cache_mutex_);
    if (!cache_[index].empty()) return cache_[index];
  }
  auto im = scene(index).image;
  std::lock_guard lock(cache_mutex_);
  cache_[index] = im;
  return im;
}

DirectoryDataset::DirectoryDataset(const std::filesystem::path& root) {
  std::ifstream in(root / "index.jsonl");
  if (!in) throw IoError("cannot open " + (root / "index.jsonl").string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto rec = nlohmann::json::parse(line);
    Scene s;
    s.image = read_png_image(root / rec.at("image").get<std::string>());
    for (const auto& m : rec.at("masks")) s.object_masks.push_back(read_png_mask(root / m.get<std::string>()));
    s.seed = rec.value("seed", std::uint64_t{0});
    s.background_id = rec.value("background", std::string{});
    scenes_.push_back(std::move(s));
  }
  if (scenes_.empty()) throw IoError("dataset " + root.string() + " has no scenes");
}

int DirectoryDataset::image_size() const { return scenes_.front().image.height(); }

void write_dataset(const std::filesystem::path& root, const std::vector<Scene>& scenes) {
  namespace fs = std::filesystem;
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  std::ofstream index(root / "index.jsonl");
  if (!index) throw IoError("cannot write " + (root / "index.jsonl").string());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& s = scenes[i];
    const auto image_rel = fmt::format("images/{:06d}.png", i);
    write_png(root / image_rel, s.image);
    nlohmann::json masks = nlohmann::json::array();
    for (std::size_t k = 0; k < s.object_masks.size(); ++k) {
      const auto mask_rel = fmt::format("masks/{:06d}_{}.png", i, k);
      write_png(root / mask_rel, s.object_masks[k]);
      masks.push_back(mask_rel);
    }
    nlohmann::json rec = {{"image", image_rel}, {"masks", masks}, {"seed", s.seed}, {"background", s.background_id}};
    index << rec.dump() << '\n';
  }
}

}  // namespace cpgan
