#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include <torch/torch.h>

#include "cpgan/errors.hpp"

namespace cpgan {

inline constexpr int kMinImageSide = 8;

/// RGB picture with values in [0,1], stored row-major as H x W x 3.
class Image {
 public:
  Image() = default;
  Image(int height, int width, float fill = 0.0f);
  Image(int height, int width, std::vector<float> hwc);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  static constexpr int channels() noexcept { return 3; }
  bool empty() const noexcept { return data_.empty(); }

  float at(int y, int x, int c) const { return data_[index(y, x, c)]; }
  float& at(int y, int x, int c) { return data_[index(y, x, c)]; }

  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * 3 + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Per-pixel source weight in [0,1]; the same weight applies to all channels.
class CopyMask {
 public:
  CopyMask() = default;
  CopyMask(int height, int width, float fill = 0.0f);
  CopyMask(int height, int width, std::vector<float> values);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return data_.empty(); }

  float at(int y, int x) const { return data_[index(y, x)]; }
  float& at(int y, int x) { return data_[index(y, x)]; }

  std::span<const float> values() const noexcept { return data_; }
  std::span<float> values() noexcept { return data_; }

  double sum() const noexcept;
  bool is_binary() const noexcept;

  bool operator==(const CopyMask&) const = default;

 private:
  std::size_t index(int y, int x) const noexcept { return static_cast<std::size_t>(y) * width_ + x; }

  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

// ---------------------------------------------------------------------------
// Value-level operations

/// out = mask * source + (1 - mask) * destination, mask broadcast over RGB.
Image composite(const Image& source, const Image& destination, const CopyMask& mask);

/// Zeroes every pixel within `border_width` of an edge.
CopyMask border_zero(const CopyMask& mask, int border_width = 1);

/// Normalized 1-D Gaussian taps, centre tap in the middle.
std::vector<double> gaussian_kernel_1d(double sigma, int kernel_size);

/// Separable Gaussian blur with replicate padding.
Image gaussian_blur(const Image& image, double sigma = 1.0, int kernel_size = 3);

CopyMask complement(const CopyMask& mask);

// ---------------------------------------------------------------------------
// Batched tensor operations (autograd-aware). Images are N x 3 x H x W,
// masks N x 1 x H x W.

torch::Tensor composite(const torch::Tensor& source, const torch::Tensor& destination,
                        const torch::Tensor& mask);
torch::Tensor border_zero(const torch::Tensor& mask, int border_width = 1);
/// Accepts any tensor whose trailing two dims are H x W.
torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma = 1.0, int kernel_size = 3);

// ---------------------------------------------------------------------------
// Tensor bridge

torch::Tensor to_tensor(const Image& image);      // 3 x H x W
torch::Tensor to_tensor(const CopyMask& mask);    // 1 x H x W
torch::Tensor stack_images(std::span<const Image> images);
torch::Tensor stack_masks(std::span<const CopyMask> masks);
/// Accepts 3 x H x W; values are clamped into [0,1].
Image image_from_tensor(const torch::Tensor& chw);
/// Accepts H x W or 1 x H x W; values are clamped into [0,1].
CopyMask mask_from_tensor(const torch::Tensor& hw);

// ---------------------------------------------------------------------------
// PNG I/O: 8-bit RGB for images, 8-bit grey for masks.

void write_png(const std::filesystem::path& path, const Image& image);
void write_png(const std::filesystem::path& path, const CopyMask& mask);
Image read_png_image(const std::filesystem::path& path);
CopyMask read_png_mask(const std::filesystem::path& path);

}  // namespace cpgan
