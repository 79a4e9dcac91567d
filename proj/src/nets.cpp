#include "cpgan/nets.hpp"

#include <fmt/core.h>

namespace cpgan {

namespace nn = torch::nn;

int UNetConfig::width_at(int level) const { return base_channels << level; }

void UNetConfig::validate() const {
  if (levels < 1) throw ContractViolation("UNetConfig: levels must be >= 1");
  if (base_channels < 1 || output_channels < 1 || encoder_dim < 1) {
    throw ContractViolation("UNetConfig: channel counts must be positive");
  }
  const int factor = 1 << levels;
  if (input_size % factor != 0) throw ContractViolation("UNetConfig: input_size must be divisible by 2^levels");
  // Instance normalization needs more than one spatial element at the bottleneck.
  if (input_size / factor < 2) throw ContractViolation("UNetConfig: bottleneck must be at least 2x2");
}

std::vector<LayerSpec> describe_unet(const UNetConfig& c) {
  c.validate();
  std::vector<LayerSpec> layers;
  int in = 3;
  for (int l = 0; l < c.levels; ++l) {
    const int w = c.width_at(l);
    layers.push_back({fmt::format("enc{}", l), "conv", in, w, 1, 3, true, c.input_size >> l});
    const int next = l + 1 < c.levels ? c.width_at(l + 1) : c.encoder_dim;
    layers.push_back({fmt::format("down{}", l), "conv", w, next, 2, 3, true, c.input_size >> (l + 1)});
    in = next;
  }
  layers.push_back({"bottleneck", "conv", c.encoder_dim, c.encoder_dim, 1, 3, true, c.input_size >> c.levels});
  for (int l = c.levels - 1; l >= 0; --l) {
    const int from = l + 1 < c.levels ? c.width_at(l + 1) : c.encoder_dim;
    const int w = c.width_at(l);
    layers.push_back({fmt::format("up{}", l), "upconv", from, w, 1, 3, true, c.input_size >> l});
    layers.push_back({fmt::format("dec{}", l), "conv", 2 * w, w, 1, 3, true, c.input_size >> l});
  }
  layers.push_back({"output", "output", c.width_at(0), c.output_channels, 1, 3, false, c.input_size});
  return layers;
}

std::int64_t unet_parameter_count(const UNetConfig& config) {
  std::int64_t total = 0;
  for (const auto& l : describe_unet(config)) {
    total += static_cast<std::int64_t>(l.in_channels) * l.out_channels * l.kernel * l.kernel;
    total += l.normalized ? 2 * l.out_channels : l.out_channels;  // norm affine, or output bias
  }
  return total;
}

namespace {

// Only the input conv pads by replication, so a constant intensity shift is
// removed exactly by its normalization; zero padding is cheaper elsewhere.
nn::Sequential conv_block(int in, int out, int stride, double slope, bool replicate = false) {
  auto opts = nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false);
  if (replicate) opts.padding_mode(torch::kReplicate);
  return nn::Sequential(
      nn::Conv2d(opts),
      nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)),
      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(slope)));
}

nn::Sequential upconv_block(int in, int out, double slope) {
  return nn::Sequential(
      nn::Upsample(nn::UpsampleOptions().scale_factor(std::vector<double>{2.0, 2.0}).mode(torch::kNearest)),
      nn::Conv2d(nn::Conv2dOptions(in, out, 3).stride(1).padding(1).bias(false)),
      nn::InstanceNorm2d(nn::InstanceNorm2dOptions(out).affine(true)),
      nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(slope)));
}

}  // namespace

UNetImpl::UNetImpl(UNetConfig config) : config_(config) {
  config_.validate();
  const auto layers = describe_unet(config_);
  enc_ = register_module("enc", nn::ModuleList());
  down_ = register_module("down", nn::ModuleList());
  up_ = register_module("up", nn::ModuleList());
  dec_ = register_module("dec", nn::ModuleList());
  for (const auto& l : layers) {
    if (l.name.starts_with("enc")) {
      enc_->push_back(conv_block(l.in_channels, l.out_channels, 1, config_.leaky_slope, enc_->size() == 0));
    } else if (l.name.starts_with("down")) {
      down_->push_back(conv_block(l.in_channels, l.out_channels, 2, config_.leaky_slope));
    } else if (l.name == "bottleneck") {
      bottleneck_ = register_module("bottleneck", conv_block(l.in_channels, l.out_channels, 1, config_.leaky_slope));
    } else if (l.name.starts_with("up")) {
      up_->push_back(upconv_block(l.in_channels, l.out_channels, config_.leaky_slope));
    } else if (l.name.starts_with("dec")) {
      dec_->push_back(conv_block(l.in_channels, l.out_channels, 1, config_.leaky_slope));
    } else {
      head_ = register_module(
          "head", nn::Conv2d(nn::Conv2dOptions(l.in_channels, l.out_channels, 3).padding(1)));
    }
  }
}

UNetOutput UNetImpl::forward(const torch::Tensor& images) {
  CPGAN_EXPECT(images.dim() == 4 && images.size(1) == 3, "UNet: expected N x 3 x H x W");
  CPGAN_EXPECT(images.size(2) == config_.input_size && images.size(3) == config_.input_size,
               "UNet: input size does not match config");
  std::vector<torch::Tensor> skips;
  auto x = images;
  for (int l = 0; l < config_.levels; ++l) {
    x = enc_[l]->as<nn::SequentialImpl>()->forward(x);
    skips.push_back(x);
    x = down_[l]->as<nn::SequentialImpl>()->forward(x);
  }
  x = bottleneck_->forward(x);
  auto encoder = x.mean({2, 3});
  // up_/dec_ are stored from the deepest level upwards.
  for (int i = 0; i < config_.levels; ++i) {
    const int l = config_.levels - 1 - i;
    x = up_[i]->as<nn::SequentialImpl>()->forward(x);
    x = dec_[i]->as<nn::SequentialImpl>()->forward(torch::cat({x, skips[l]}, 1));
  }
  return {head_->forward(x), encoder};
}

torch::Tensor UNetImpl::first_block(const torch::Tensor& images) {
  auto* block = enc_[0]->as<nn::SequentialImpl>();
  return (*block)[1]->as<nn::InstanceNorm2dImpl>()->forward((*block)[0]->as<nn::Conv2dImpl>()->forward(images));
}

DirectGeneratorImpl::DirectGeneratorImpl(UNetConfig config) {
  config.output_channels = 1;
  unet = register_module("unet", UNet(config));
}

torch::Tensor DirectGeneratorImpl::forward(const torch::Tensor& images) {
  return torch::sigmoid(unet->forward(images).decoder);
}

InstColourGeneratorImpl::InstColourGeneratorImpl(UNetConfig config) {
  config.output_channels = kInstColourChannels;
  unet = register_module("unet", UNet(config));
}

InstColourOutput InstColourGeneratorImpl::forward(const torch::Tensor& images) {
  auto out = unet->forward(images).decoder;
  return {out.slice(1, 0, kFeatureDim), out.select(1, kFeatureDim), out.select(1, kFeatureDim + 1)};
}

DiscriminatorImpl::DiscriminatorImpl(UNetConfig config) {
  config.output_channels = 1;
  unet = register_module("unet", UNet(config));
  realness_head = register_module("realness_head", nn::Linear(config.encoder_dim, 1));
}

DiscOutput DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto out = unet->forward(images);
  return {torch::sigmoid(realness_head->forward(out.encoder)).squeeze(1), torch::sigmoid(out.decoder)};
}

torch::Tensor induced_mask(const torch::Tensor& features, const std::vector<Pixel>& seeds) {
  CPGAN_EXPECT(features.dim() == 4, "induced_mask: expected N x F x H x W features");
  const auto n = features.size(0), h = features.size(2), w = features.size(3);
  CPGAN_EXPECT(static_cast<std::int64_t>(seeds.size()) == n, "induced_mask: one seed per image required");
  std::vector<std::int64_t> flat;
  flat.reserve(seeds.size());
  for (const auto& s : seeds) {
    CPGAN_EXPECT(s.y >= 0 && s.y < h && s.x >= 0 && s.x < w, "induced_mask: seed out of bounds");
    flat.push_back(static_cast<std::int64_t>(s.y) * w + s.x);
  }
  auto f = features.reshape({n, features.size(1), h * w});
  auto idx = torch::tensor(flat, torch::kInt64).view({n, 1, 1}).expand({n, features.size(1), 1});
  auto seed_feat = f.gather(2, idx);                       // N x F x 1
  auto dots = (f * seed_feat).sum(1);                      // N x HW
  return torch::sigmoid(dots).view({n, 1, h, w});
}

}  // namespace cpgan
