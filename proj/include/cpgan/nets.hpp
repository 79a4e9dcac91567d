#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cpgan/errors.hpp"

namespace cpgan {

struct Pixel {
  int y = 0;
  int x = 0;
  bool operator==(const Pixel&) const = default;
};

inline constexpr int kFeatureDim = 64;
inline constexpr int kInstColourChannels = kFeatureDim + 2;  // features + seediness logit + value

struct UNetConfig {
  int input_size = 32;
  int levels = 4;
  int base_channels = 32;
  int output_channels = 1;
  int encoder_dim = 512;
  double leaky_slope = 0.2;

  /// Encoder width at `level` (0-based); the bottleneck uses encoder_dim.
  int width_at(int level) const;
  void validate() const;
};

/// One row of the architecture summary.
struct LayerSpec {
  std::string name;
  std::string kind;  // "conv", "upconv", "output", "linear"
  int in_channels = 0;
  int out_channels = 0;
  int stride = 1;
  int kernel = 3;
  bool normalized = true;  // followed by instance norm + LeakyReLU
  int spatial = 0;         // output side length
};

/// Layer list of the U-Net block; a pure function of the config.
std::vector<LayerSpec> describe_unet(const UNetConfig& config);
/// Trainable parameter count implied by describe_unet (conv weights, instance
/// norm affine terms, output bias).
std::int64_t unet_parameter_count(const UNetConfig& config);

struct UNetOutput {
  torch::Tensor decoder;  // N x C x H x W
  torch::Tensor encoder;  // N x encoder_dim (spatially averaged bottleneck)
};

/// Encoder/decoder with skip connections. Every conv except the output
/// layer is followed by instance normalization and LeakyReLU; upsampling is
/// nearest-neighbour x2 followed by a 3x3 stride-1 conv.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(UNetConfig config);
  UNetOutput forward(const torch::Tensor& images);
  const UNetConfig& config() const noexcept { return config_; }

  /// Output of the first conv block after normalization, for probing.
  torch::Tensor first_block(const torch::Tensor& images);

 private:
  UNetConfig config_;
  torch::nn::ModuleList enc_{nullptr}, down_{nullptr}, up_{nullptr}, dec_{nullptr};
  torch::nn::Sequential bottleneck_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(UNet);

/// Direct generator: one sigmoid copy-mask per image (N x 1 x H x W).
class DirectGeneratorImpl : public torch::nn::Module {
 public:
  explicit DirectGeneratorImpl(UNetConfig config);
  torch::Tensor forward(const torch::Tensor& images);
  UNet unet{nullptr};
};
TORCH_MODULE(DirectGenerator);

struct InstColourOutput {
  torch::Tensor features;          // N x 64 x H x W
  torch::Tensor seediness_logits;  // N x H x W
  torch::Tensor value;             // N x H x W
};

/// Instance Colouring generator: per-pixel embedding, seediness and value.
class InstColourGeneratorImpl : public torch::nn::Module {
 public:
  explicit InstColourGeneratorImpl(UNetConfig config);
  InstColourOutput forward(const torch::Tensor& images);
  UNet unet{nullptr};
};
TORCH_MODULE(InstColourGenerator);

struct DiscOutput {
  torch::Tensor realness;       // N, in (0,1)
  torch::Tensor mask_estimate;  // N x 1 x H x W, in (0,1)
};

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(UNetConfig config);
  DiscOutput forward(const torch::Tensor& images);
  UNet unet{nullptr};
  torch::nn::Linear realness_head{nullptr};
};
TORCH_MODULE(Discriminator);

/// mask[n, 0, i, j] = sigmoid(<f[n, :, y_n, x_n], f[n, :, i, j]>).
torch::Tensor induced_mask(const torch::Tensor& features, const std::vector<Pixel>& seeds);

}  // namespace cpgan
