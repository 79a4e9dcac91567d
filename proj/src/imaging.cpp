#include "cpgan/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <png.h>

namespace cpgan {

namespace {

void check_unit_range(std::span<const float> values, const char* what) {
  for (float v : values) {
    if (!(v >= 0.0f && v <= 1.0f)) {
      throw ContractViolation(std::string(what) + ": value outside [0,1]");
    }
  }
}

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Image::Image(int height, int width, float fill) : height_(height), width_(width) {
  CPGAN_EXPECT(height >= kMinImageSide && width >= kMinImageSide, "Image: sides must be >= 8");
  CPGAN_EXPECT(fill >= 0.0f && fill <= 1.0f, "Image: fill outside [0,1]");
  data_.assign(static_cast<std::size_t>(height) * width * 3, fill);
}

Image::Image(int height, int width, std::vector<float> hwc)
    : height_(height), width_(width), data_(std::move(hwc)) {
  CPGAN_EXPECT(height >= kMinImageSide && width >= kMinImageSide, "Image: sides must be >= 8");
  CPGAN_EXPECT(data_.size() == static_cast<std::size_t>(height) * width * 3, "Image: buffer size mismatch");
  check_unit_range(data_, "Image");
}

CopyMask::CopyMask(int height, int width, float fill) : height_(height), width_(width) {
  CPGAN_EXPECT(height >= 1 && width >= 1, "CopyMask: empty shape");
  CPGAN_EXPECT(fill >= 0.0f && fill <= 1.0f, "CopyMask: fill outside [0,1]");
  data_.assign(static_cast<std::size_t>(height) * width, fill);
}

CopyMask::CopyMask(int height, int width, std::vector<float> values)
    : height_(height), width_(width), data_(std::move(values)) {
  CPGAN_EXPECT(height >= 1 && width >= 1, "CopyMask: empty shape");
  CPGAN_EXPECT(data_.size() == static_cast<std::size_t>(height) * width, "CopyMask: buffer size mismatch");
  check_unit_range(data_, "CopyMask");
}

double CopyMask::sum() const noexcept {
  double s = 0.0;
  for (float v : data_) s += v;
  return s;
}

bool CopyMask::is_binary() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return v == 0.0f || v == 1.0f; });
}

Image composite(const Image& source, const Image& destination, const CopyMask& mask) {
  CPGAN_EXPECT(source.height() == destination.height() && source.width() == destination.width(),
               "composite: source/destination shape mismatch");
  CPGAN_EXPECT(mask.height() == source.height() && mask.width() == source.width(),
               "composite: mask shape mismatch");
  Image out(source.height(), source.width());
  for (int y = 0; y < source.height(); ++y) {
    for (int x = 0; x < source.width(); ++x) {
      const float m = mask.at(y, x);
      for (int c = 0; c < 3; ++c) {
        out.at(y, x, c) = m * source.at(y, x, c) + (1.0f - m) * destination.at(y, x, c);
      }
    }
  }
  return out;
}

CopyMask border_zero(const CopyMask& mask, int border_width) {
  CPGAN_EXPECT(border_width >= 1, "border_zero: border_width must be >= 1");
  CPGAN_EXPECT(2 * border_width < std::min(mask.height(), mask.width()), "border_zero: border too large");
  CopyMask out = mask;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      const bool ring = y < border_width || x < border_width || y >= mask.height() - border_width ||
                        x >= mask.width() - border_width;
      if (ring) out.at(y, x) = 0.0f;
    }
  }
  return out;
}

CopyMask complement(const CopyMask& mask) {
  std::vector<float> v(mask.values().begin(), mask.values().end());
  for (float& x : v) x = 1.0f - x;
  return CopyMask(mask.height(), mask.width(), std::move(v));
}

std::vector<double> gaussian_kernel_1d(double sigma, int kernel_size) {
  CPGAN_EXPECT(sigma > 0.0, "gaussian_kernel_1d: sigma must be positive");
  CPGAN_EXPECT(kernel_size >= 1 && kernel_size % 2 == 1, "gaussian_kernel_1d: kernel_size must be odd");
  const int half = kernel_size / 2;
  std::vector<double> taps(kernel_size);
  double total = 0.0;
  for (int i = 0; i < kernel_size; ++i) {
    const double d = i - half;
    taps[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

Image gaussian_blur(const Image& image, double sigma, int kernel_size) {
  auto blurred = gaussian_blur(to_tensor(image).unsqueeze(0), sigma, kernel_size);
  return image_from_tensor(blurred.squeeze(0));
}

torch::Tensor composite(const torch::Tensor& source, const torch::Tensor& destination,
                        const torch::Tensor& mask) {
  CPGAN_EXPECT(source.sizes() == destination.sizes(), "composite: source/destination shape mismatch");
  CPGAN_EXPECT(source.dim() == 4 && mask.dim() == 4 && mask.size(1) == 1, "composite: expected NCHW / N1HW");
  CPGAN_EXPECT(mask.size(0) == source.size(0) && mask.size(2) == source.size(2) && mask.size(3) == source.size(3),
               "composite: mask shape mismatch");
  return mask * source + (1.0 - mask) * destination;
}

torch::Tensor border_zero(const torch::Tensor& mask, int border_width) {
  CPGAN_EXPECT(mask.dim() >= 2, "border_zero: expected ... x H x W");
  const auto h = mask.size(-2);
  const auto w = mask.size(-1);
  CPGAN_EXPECT(border_width >= 1, "border_zero: border_width must be >= 1");
  CPGAN_EXPECT(2 * border_width < std::min(h, w), "border_zero: border too large");
  auto keep = torch::zeros({h, w}, mask.options().requires_grad(false));
  keep.slice(0, border_width, h - border_width).slice(1, border_width, w - border_width).fill_(1.0);
  return mask * keep;
}

torch::Tensor gaussian_blur(const torch::Tensor& images, double sigma, int kernel_size) {
  CPGAN_EXPECT(images.dim() >= 2, "gaussian_blur: expected ... x H x W");
  const auto taps = gaussian_kernel_1d(sigma, kernel_size);
  if (kernel_size == 1) return images;
  const int half = kernel_size / 2;
  const auto sizes = images.sizes().vec();
  const auto h = sizes[sizes.size() - 2];
  const auto w = sizes[sizes.size() - 1];
  auto planes = images.reshape({-1, 1, h, w});
  auto kernel = torch::tensor(taps, torch::kFloat64).to(images.scalar_type());
  namespace F = torch::nn::functional;
  auto padded = F::pad(planes, F::PadFuncOptions({half, half, half, half}).mode(torch::kReplicate));
  auto out = F::conv2d(padded, kernel.view({1, 1, 1, kernel_size}));
  out = F::conv2d(out, kernel.view({1, 1, kernel_size, 1}));
  return out.reshape(sizes);
}

torch::Tensor to_tensor(const Image& image) {
  auto hwc = torch::from_blob(const_cast<float*>(image.values().data()), {image.height(), image.width(), 3},
                              torch::kFloat32);
  return hwc.permute({2, 0, 1}).contiguous();
}

torch::Tensor to_tensor(const CopyMask& mask) {
  return torch::from_blob(const_cast<float*>(mask.values().data()), {1, mask.height(), mask.width()},
                          torch::kFloat32)
      .clone();
}

torch::Tensor stack_images(std::span<const Image> images) {
  CPGAN_EXPECT(!images.empty(), "stack_images: empty batch");
  std::vector<torch::Tensor> ts;
  ts.reserve(images.size());
  for (const auto& im : images) ts.push_back(to_tensor(im));
  return torch::stack(ts);
}

torch::Tensor stack_masks(std::span<const CopyMask> masks) {
  CPGAN_EXPECT(!masks.empty(), "stack_masks: empty batch");
  std::vector<torch::Tensor> ts;
  ts.reserve(masks.size());
  for (const auto& m : masks) ts.push_back(to_tensor(m));
  return torch::stack(ts);
}

Image image_from_tensor(const torch::Tensor& chw) {
  CPGAN_EXPECT(chw.dim() == 3 && chw.size(0) == 3, "image_from_tensor: expected 3 x H x W");
  auto hwc = chw.detach().to(torch::kFloat32).clamp(0.0, 1.0).permute({1, 2, 0}).contiguous();
  const auto* p = hwc.data_ptr<float>();
  std::vector<float> data(p, p + hwc.numel());
  return Image(static_cast<int>(chw.size(1)), static_cast<int>(chw.size(2)), std::move(data));
}

CopyMask mask_from_tensor(const torch::Tensor& hw) {
  auto t = hw.dim() == 3 ? hw.squeeze(0) : hw;
  CPGAN_EXPECT(t.dim() == 2, "mask_from_tensor: expected H x W");
  t = t.detach().to(torch::kFloat32).clamp(0.0, 1.0).contiguous();
  const auto* p = t.data_ptr<float>();
  return CopyMask(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), std::vector<float>(p, p + t.numel()));
}

namespace {

void write_png_raw(const std::filesystem::path& path, int width, int height, std::uint32_t format,
                   const std::vector<std::uint8_t>& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(width);
  img.height = static_cast<png_uint_32>(height);
  img.format = format;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&img, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw IoError("cannot write PNG " + path.string() + ": " + img.message);
  }
}

std::vector<std::uint8_t> read_png_raw(const std::filesystem::path& path, std::uint32_t format, int& width,
                                       int& height) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw IoError("cannot read PNG " + path.string() + ": " + img.message);
  }
  img.format = format;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  width = static_cast<int>(img.width);
  height = static_cast<int>(img.height);
  return bytes;
}

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> bytes(image.values().size());
  std::transform(image.values().begin(), image.values().end(), bytes.begin(), quantize);
  write_png_raw(path, image.width(), image.height(), PNG_FORMAT_RGB, bytes);
}

void write_png(const std::filesystem::path& path, const CopyMask& mask) {
  std::vector<std::uint8_t> bytes(mask.values().size());
  std::transform(mask.values().begin(), mask.values().end(), bytes.begin(), quantize);
  write_png_raw(path, mask.width(), mask.height(), PNG_FORMAT_GRAY, bytes);
}

Image read_png_image(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_png_raw(path, PNG_FORMAT_RGB, w, h);
  std::vector<float> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(), [](std::uint8_t b) { return b / 255.0f; });
  return Image(h, w, std::move(data));
}

CopyMask read_png_mask(const std::filesystem::path& path) {
  int w = 0, h = 0;
  const auto bytes = read_png_raw(path, PNG_FORMAT_GRAY, w, h);
  std::vector<float> data(bytes.size());
  std::transform(bytes.begin(), bytes.end(), data.begin(), [](std::uint8_t b) { return b / 255.0f; });
  return CopyMask(h, w, std::move(data));
}

}  // namespace cpgan
