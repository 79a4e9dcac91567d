#include "cpgan/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <fmt/core.h>
#include <json.hpp>

#include "cpgan/config.hpp"
#include "cpgan/errors.hpp"
#include "cpgan/groundedfakes.hpp"
#include "cpgan/imaging.hpp"
#include "cpgan/rng.hpp"

namespace cpgan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Independent random streams derived from (run seed, step).
enum Stream : std::uint64_t { kBatchStream = 1, kPolygonStream = 2, kDropoutStream = 3, kSeedStream = 4 };

std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

// Uniform derangement by rejection (expected ~e attempts).
std::vector<std::size_t> random_derangement(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (;;) {
    std::iota(p.begin(), p.end(), 0);
    std::shuffle(p.begin(), p.end(), rng);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) ok = p[i] != i;
    if (ok) return p;
  }
}

torch::Tensor gather_images(const SceneDataset& dataset, const std::vector<std::size_t>& ids) {
  std::vector<Image> images;
  images.reserve(ids.size());
  for (auto i : ids) images.push_back(dataset.image(i));
  return stack_images(images);
}

void set_requires_grad(torch::nn::Module& module, bool flag) {
  for (auto& p : module.parameters()) p.set_requires_grad(flag);
}

std::vector<double> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kDouble).contiguous().flatten();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

std::string to_string(GeneratorKind kind) {
  return kind == GeneratorKind::direct ? "direct" : "instance_colouring";
}

GeneratorKind generator_kind_from_string(const std::string& name) {
  if (name == "direct") return GeneratorKind::direct;
  if (name == "instance_colouring" || name == "instance_coloring") return GeneratorKind::instance_colouring;
  throw ConfigError("unknown generator kind '" + name + "'");
}

std::string to_string(StepPhase phase) {
  return phase == StepPhase::discriminator ? "discriminator" : "generator";
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (irrelevant images need a derangement)");
  if (!(lr_initial > 0.0)) throw ConfigError("train: lr_initial must be positive");
  if (!(lr_drop_factor > 0.0)) throw ConfigError("train: lr_drop_factor must be positive");
  if (total_steps < 1) throw ConfigError("train: total_steps must be positive");
  if (lr_drop_step >= total_steps) throw ConfigError("train: lr_drop_step must be < total_steps");
  if (disc_only_steps < 0) throw ConfigError("train: disc_only_steps must be >= 0");
  if (!(aux_weight >= 0.0)) throw ConfigError("train: aux_weight must be >= 0");
  if (border_width < 1) throw ConfigError("train: border_width must be >= 1");
  if (!(blur_sigma > 0.0) || blur_kernel < 1 || blur_kernel % 2 == 0) {
    throw ConfigError("train: blur needs sigma > 0 and an odd kernel size");
  }
  if (!(entropy_weight >= 0.0) || !(critic_weight >= 0.0)) throw ConfigError("train: policy weights must be >= 0");
}

LossOptions TrainConfig::loss_options() const {
  LossOptions o;
  o.aux_weight = aux_weight;
  o.anti_shortcut = anti_shortcut_enabled;
  o.grounded_fakes = grounded_fakes_enabled;
  o.mask_prediction = mask_pred_enabled;
  o.non_saturating = non_saturating;
  return o;
}

namespace {
UNetConfig unet_from(const NetShape& s, int image_size, int outputs) {
  UNetConfig c;
  c.input_size = image_size;
  c.levels = s.levels;
  c.base_channels = s.base_channels;
  c.encoder_dim = s.encoder_dim;
  c.output_channels = outputs;
  return c;
}
}  // namespace

UNetConfig TrainConfig::generator_unet(int image_size) const {
  return unet_from(generator_net, image_size,
                   generator_kind == GeneratorKind::direct ? 1 : kInstColourChannels);
}

UNetConfig TrainConfig::discriminator_unet(int image_size) const {
  return unet_from(discriminator_net, image_size, 1);
}

Batch build_batch(const SceneDataset& dataset, int batch_size, std::uint64_t rng_seed) {
  const std::size_t n = dataset.size();
  if (n == 0) throw ConfigError("build_batch: empty dataset");
  if (batch_size < 2) throw ConfigError("build_batch: batch_size must be >= 2");
  const auto k = static_cast<std::size_t>(batch_size);
  if (k > n) throw ConfigError(fmt::format("build_batch: batch of {} exceeds dataset of {}", k, n));
  Rng rng(rng_seed);
  Batch b;
  b.source_ids = draw_without_replacement(n, k, rng);
  b.destination_ids = draw_without_replacement(n, k, rng);
  b.real_ids = draw_without_replacement(n, k, rng);
  const auto perm = random_derangement(k, rng);
  b.irrelevant_ids.resize(k);
  for (std::size_t i = 0; i < k; ++i) b.irrelevant_ids[i] = b.source_ids[perm[i]];
  b.sources = gather_images(dataset, b.source_ids);
  b.destinations = gather_images(dataset, b.destination_ids);
  b.reals = gather_images(dataset, b.real_ids);
  b.irrelevants = b.sources.index_select(0, torch::tensor(std::vector<std::int64_t>(perm.begin(), perm.end())));
  return b;
}

// ---------------------------------------------------------------------------

struct Trainer::Forward {
  BranchOutputs outputs;
  LossTerms terms;
  std::optional<SeedDecision> decision;
};

Trainer::Trainer(TrainConfig config, std::shared_ptr<const SceneDataset> dataset)
    : config_(std::move(config)), dataset_(std::move(dataset)), started_(std::chrono::steady_clock::now()) {
  config_.validate();
  CPGAN_EXPECT(dataset_ != nullptr, "Trainer: dataset is null");
  image_size_ = dataset_->image_size();
  // Parameter init draws from torch's global generator.
  torch::manual_seed(derive_seed(config_.rng_seed, {0x696e6974}) & 0x7fffffffffffffffULL);
  const auto gcfg = config_.generator_unet(image_size_);
  const auto dcfg = config_.discriminator_unet(image_size_);
  gcfg.validate();
  dcfg.validate();
  const auto adam = [&](std::vector<torch::Tensor> params) {
    return std::make_unique<torch::optim::Adam>(std::move(params),
                                                torch::optim::AdamOptions(config_.lr_initial).weight_decay(0.0));
  };
  if (config_.generator_kind == GeneratorKind::direct) {
    direct_ = DirectGenerator(gcfg);
    gen_opt_ = adam(direct_->parameters());
  } else {
    instcolour_ = InstColourGenerator(gcfg);
    gen_opt_ = adam(instcolour_->parameters());
  }
  discriminator_ = Discriminator(dcfg);
  disc_opt_ = adam(discriminator_->parameters());
}

torch::nn::Module& Trainer::generator_module() {
  if (direct_) return *direct_;
  return *instcolour_;
}

StepPhase Trainer::phase_of(int step) const {
  if (step < config_.disc_only_steps) return StepPhase::discriminator;
  return (step - config_.disc_only_steps) % 2 == 0 ? StepPhase::generator : StepPhase::discriminator;
}

double Trainer::learning_rate(int step) const {
  return step >= config_.lr_drop_step ? config_.lr_initial / config_.lr_drop_factor : config_.lr_initial;
}

Batch Trainer::batch_for_step(int step) const {
  return build_batch(*dataset_, config_.batch_size,
                     derive_seed(config_.rng_seed, {static_cast<std::uint64_t>(step), kBatchStream}));
}

Trainer::Forward Trainer::run_branches(const Batch& batch, bool generator_grad, std::uint64_t step_seed) {
  Forward f;
  const auto n = batch.sources.size(0);
  const auto h = batch.sources.size(2), w = batch.sources.size(3);
  torch::Tensor masks;
  {
    std::optional<torch::NoGradGuard> no_grad;
    if (!generator_grad) no_grad.emplace();
    if (direct_) {
      masks = direct_(batch.sources);
    } else {
      auto out = instcolour_(batch.sources);
      auto policy = seediness_softmax(out.seediness_logits);
      if (config_.seed_dropout) policy = structured_dropout(policy, derive_seed(step_seed, {kDropoutStream}));
      f.decision = pick_seed(policy, SeedMode::sample, derive_seed(step_seed, {kSeedStream}), out.value);
      masks = induced_mask(out.features, f.decision->seeds);
    }
    if (config_.border_zero_enabled) masks = border_zero(masks, config_.border_width);
  }

  std::vector<torch::Tensor> parts{batch.reals, composite(batch.sources, batch.destinations, masks)};
  if (config_.anti_shortcut_enabled) parts.push_back(composite(batch.irrelevants, batch.destinations, masks));
  torch::Tensor polygons;
  if (config_.grounded_fakes_enabled) {
    polygons = grounded_fake_masks(static_cast<int>(n), static_cast<int>(h), static_cast<int>(w),
                                   derive_seed(step_seed, {kPolygonStream}));
    parts.push_back(composite(batch.sources, batch.destinations, polygons));
  }
  auto all = torch::cat(parts, 0);
  if (config_.blur_enabled) all = gaussian_blur(all, config_.blur_sigma, config_.blur_kernel);
  auto d = discriminator_(all);
  auto scores = d.realness.split(n, 0);
  auto dmasks = d.mask_estimate.split(n, 0);

  auto& o = f.outputs;
  std::size_t k = 0;
  o.real_score = scores[k];
  o.real_mask = dmasks[k++];
  o.fake_score = scores[k];
  o.fake_mask = dmasks[k++];
  if (config_.anti_shortcut_enabled) {
    o.anti_score = scores[k];
    o.anti_mask = dmasks[k++];
  }
  if (config_.grounded_fakes_enabled) {
    o.grounded_score = scores[k];
    o.grounded_mask = dmasks[k++];
    o.polygon_mask = polygons;
  }
  o.generator_mask = masks;
  f.terms = assemble_losses(o, config_.loss_options());
  return f;
}

StepRecord Trainer::train_step() { return train_step(batch_for_step(step_)); }

StepRecord Trainer::train_step(const Batch& batch) {
  CPGAN_EXPECT(batch.sources.defined() && batch.sources.size(0) >= 2, "train_step: malformed batch");
  StepRecord rec;
  rec.step = step_;
  rec.phase = phase_of(step_);
  rec.lr = learning_rate(step_);
  const auto step_seed = derive_seed(config_.rng_seed, {static_cast<std::uint64_t>(step_)});

  for (auto* opt : {gen_opt_.get(), disc_opt_.get()}) {
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(rec.lr);
  }

  const bool gen_phase = rec.phase == StepPhase::generator;
  set_requires_grad(*discriminator_, !gen_phase);
  set_requires_grad(generator_module(), gen_phase);
  auto f = run_branches(batch, gen_phase, step_seed);
  rec.losses = f.terms.bundle();

  auto& s = rec.scores;
  const auto fill = [](std::vector<double>& dst, const torch::Tensor& t) {
    if (t.defined()) dst = to_vector(t);
  };
  fill(s.real, f.outputs.real_score);
  fill(s.fake, f.outputs.fake_score);
  fill(s.anti_shortcut, f.outputs.anti_score);
  fill(s.grounded_fake, f.outputs.grounded_score);
  fill(s.mask_real, f.terms.mask_real);
  fill(s.mask_fake, f.terms.mask_fake);
  fill(s.mask_anti_shortcut, f.terms.mask_anti_shortcut);
  fill(s.mask_grounded_fake, f.terms.mask_grounded_fake);

  torch::Tensor objective;
  if (gen_phase) {
    auto g = f.terms.g_total_per_sample();
    objective = g.mean();
    if (f.decision) {
      auto pg = policy_grad_terms(-g.detach(), *f.decision, config_.entropy_weight);
      objective = objective + (pg.policy_term + pg.entropy_term + config_.critic_weight * pg.critic_term).mean();
      PolicyStats ps;
      ps.mean_reward = pg.reward.mean().item<double>();
      ps.mean_entropy = policy_entropy(f.decision->policy).mean().item<double>();
      ps.policy_term = pg.policy_term.mean().item<double>();
      ps.critic_term = pg.critic_term.mean().item<double>();
      rec.policy = ps;
    }
  } else {
    objective = f.terms.d_total();
  }

  if (!all_finite(rec.losses) || !std::isfinite(objective.item<double>())) {
    dump_divergence(batch, rec.losses);
    throw DivergenceError(fmt::format("non-finite loss at step {} (d_total={}, g_total={})", step_,
                                      rec.losses.d_total, rec.losses.g_total));
  }

  auto& opt = gen_phase ? *gen_opt_ : *disc_opt_;
  opt.zero_grad();
  objective.backward();
  opt.step();

  set_requires_grad(*discriminator_, true);
  set_requires_grad(generator_module(), true);
  rec.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  ++step_;
  return rec;
}

void Trainer::dump_divergence(const Batch& batch, const LossBundle& bundle) const {
  if (diagnostic_dir_.empty()) return;
  try {
    const auto dir = diagnostic_dir_ / fmt::format("step_{}", step_);
    fs::create_directories(dir);
    torch::save(std::vector<torch::Tensor>{batch.sources, batch.destinations, batch.irrelevants, batch.reals},
                (dir / "batch.pt").string());
    json j = to_json(bundle);
    j["step"] = step_;
    j["source_ids"] = batch.source_ids;
    j["destination_ids"] = batch.destination_ids;
    j["irrelevant_ids"] = batch.irrelevant_ids;
    j["real_ids"] = batch.real_ids;
    std::ofstream(dir / "losses.json") << j.dump(2) << '\n';
  } catch (const std::exception& e) {
    std::cerr << "warning: could not write divergence dump: " << e.what() << '\n';
  }
}

torch::Tensor Trainer::predict_masks(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  torch::Tensor masks;
  if (direct_) {
    masks = direct_(images);
  } else {
    auto out = instcolour_(images);
    auto d = pick_seed(seediness_softmax(out.seediness_logits), SeedMode::argmax, 0);
    masks = induced_mask(out.features, d.seeds);
  }
  if (config_.border_zero_enabled) masks = border_zero(masks, config_.border_width);
  return masks;
}

torch::Tensor Trainer::predict_seediness(const torch::Tensor& images) {
  if (direct_) return {};
  torch::NoGradGuard no_grad;
  return seediness_softmax(instcolour_(images).seediness_logits);
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  fs::create_directories(dir);
  if (direct_) {
    torch::save(direct_, (dir / "generator.pt").string());
  } else {
    torch::save(instcolour_, (dir / "generator.pt").string());
  }
  torch::save(discriminator_, (dir / "discriminator.pt").string());
  torch::save(*gen_opt_, (dir / "generator_optim.pt").string());
  torch::save(*disc_opt_, (dir / "discriminator_optim.pt").string());
  json meta;
  meta["step"] = step_;
  meta["generator_kind"] = to_string(config_.generator_kind);
  meta["image_size"] = image_size_;
  meta["train"] = to_json(config_);
  meta["generator_hash"] = generator_hash();
  meta["discriminator_hash"] = discriminator_hash();
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << '\n';
}

void Trainer::load_checkpoint(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("missing checkpoint metadata in " + dir.string());
  json meta;
  try {
    meta = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("bad checkpoint metadata: " + std::string(e.what()), e.byte);
  }
  if (meta.at("generator_kind").get<std::string>() != to_string(config_.generator_kind)) {
    throw ConfigError("checkpoint generator kind does not match the configuration");
  }
  if (meta.at("image_size").get<int>() != image_size_) throw ConfigError("checkpoint image size mismatch");
  for (const char* f : {"generator.pt", "discriminator.pt", "generator_optim.pt", "discriminator_optim.pt"}) {
    if (!fs::exists(dir / f)) throw IoError("checkpoint file missing: " + (dir / f).string());
  }
  if (direct_) {
    torch::load(direct_, (dir / "generator.pt").string());
  } else {
    torch::load(instcolour_, (dir / "generator.pt").string());
  }
  torch::load(discriminator_, (dir / "discriminator.pt").string());
  torch::load(*gen_opt_, (dir / "generator_optim.pt").string());
  torch::load(*disc_opt_, (dir / "discriminator_optim.pt").string());
  step_ = meta.at("step").get<int>();
}

std::uint64_t parameter_hash(const torch::nn::Module& module) {
  std::uint64_t h = mix_seed(0);
  for (const auto& item : module.named_parameters()) {
    h = mix_seed(h ^ std::hash<std::string>{}(item.key()));
    auto t = item.value().detach().contiguous().cpu();
    const auto bytes = std::string_view(static_cast<const char*>(t.data_ptr()), t.numel() * t.element_size());
    h = mix_seed(h ^ std::hash<std::string_view>{}(bytes));
  }
  return h;
}

std::uint64_t Trainer::generator_hash() const {
  return direct_ ? parameter_hash(*direct_) : parameter_hash(*instcolour_);
}

std::uint64_t Trainer::discriminator_hash() const { return parameter_hash(*discriminator_); }

EvalSummary evaluate_odp(Trainer& trainer, const SceneDataset& dataset, int batch_size) {
  CPGAN_EXPECT(dataset.size() > 0, "evaluate_odp: empty dataset");
  CPGAN_EXPECT(batch_size > 0, "evaluate_odp: batch_size must be positive");
  std::vector<EvalCase> cases;
  cases.reserve(dataset.size());
  for (std::size_t start = 0; start < dataset.size(); start += batch_size) {
    const auto end = std::min(dataset.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<Scene> scenes;
    std::vector<Image> images;
    for (auto i = start; i < end; ++i) {
      scenes.push_back(dataset.scene(i));
      images.push_back(scenes.back().image);
    }
    auto masks = trainer.predict_masks(stack_images(images));
    for (std::size_t k = 0; k < scenes.size(); ++k) {
      cases.push_back(make_eval_case(mask_from_tensor(masks[static_cast<std::int64_t>(k)]), scenes[k].object_masks));
    }
  }
  return odp(cases);
}

// ---------------------------------------------------------------------------
// Experiments

void ExperimentSpec::validate() const {
  dataset.validate();
  train.validate();
  if (train_size < static_cast<std::size_t>(train.batch_size)) {
    throw ConfigError("train_size must be at least batch_size");
  }
  if (eval_interval < 1) throw ConfigError("eval_interval must be positive");
  if (validation_size < 1) throw ConfigError("validation_size must be positive");
  if (checkpoint_interval < 1) throw ConfigError("checkpoint_interval must be positive");
  if (sample_interval < 0) throw ConfigError("sample_interval must be >= 0");
  if (runs < 1) throw ConfigError("runs must be >= 1");
  train.generator_unet(dataset.image_size).validate();
  train.discriminator_unet(dataset.image_size).validate();
}

DatasetPair make_datasets(const ExperimentSpec& spec) {
  std::shared_ptr<const BackgroundPool> pool;
  if (spec.dataset.background == BackgroundSource::cifar10) {
    fs::path dir = spec.cifar_dir;
    if (dir.empty()) {
      const char* root = std::getenv("CPGAN_DATA_ROOT");
      if (root == nullptr) {
        throw ConfigError("CIFAR-10 backgrounds need cifar_dir or CPGAN_DATA_ROOT");
      }
      dir = fs::path(root) / "cifar-10-batches-bin";
    }
    pool = std::make_shared<const BackgroundPool>(load_cifar10_backgrounds(dir));
    if (pool->empty()) throw IoError("no CIFAR-10 images loaded from " + dir.string());
  }
  DatasetPair p;
  p.train = std::make_shared<SyntheticDataset>(spec.dataset, spec.dataset_seed, spec.train_size, pool, true);
  p.validation = std::make_shared<SyntheticDataset>(spec.dataset, spec.dataset_seed + kValidationSeedOffset,
                                                    static_cast<std::size_t>(spec.validation_size), pool);
  return p;
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
  const auto dir = run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return std::nullopt;
  std::optional<fs::path> best;
  long best_step = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (!e.is_directory() || !name.starts_with("step_") || !fs::exists(e.path() / "meta.json")) continue;
    try {
      const long s = std::stol(name.substr(5));
      if (s > best_step) {
        best_step = s;
        best = e.path();
      }
    } catch (const std::exception&) {
    }
  }
  return best;
}

namespace {

// Gray-level heatmap of a probability map, scaled to its own maximum.
Image heatmap(const torch::Tensor& hw) {
  auto t = hw.detach().to(torch::kFloat);
  const float mx = std::max(t.max().item<float>(), 1e-12f);
  t = (t / mx).clamp(0, 1);
  return image_from_tensor(t.unsqueeze(0).expand({3, t.size(0), t.size(1)}));
}

Image mask_as_image(const torch::Tensor& mask) {
  auto m = mask.detach().reshape({1, mask.size(-2), mask.size(-1)});
  return image_from_tensor(m.expand({3, m.size(1), m.size(2)}));
}

}  // namespace

void write_sample_strips(Trainer& trainer, const SceneDataset& validation, const fs::path& dir) {
  constexpr std::size_t kSamples = 4;
  const std::size_t n = std::min(kSamples, validation.size() / 2);
  if (n == 0) return;
  fs::create_directories(dir);
  std::vector<Image> src, dst;
  for (std::size_t i = 0; i < n; ++i) {
    src.push_back(validation.image(i));
    dst.push_back(validation.image(n + i));
  }
  auto s = stack_images(src);
  auto masks = trainer.predict_masks(s);
  auto comp = composite(s, stack_images(dst), masks);
  auto seed = trainer.predict_seediness(s);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<std::int64_t>(i);
    std::vector<Image> tiles{src[i], mask_as_image(masks[k]), image_from_tensor(comp[k])};
    if (seed.defined()) tiles.push_back(heatmap(seed[k]));
    const int h = tiles[0].height(), w = tiles[0].width();
    Image strip(h, w * static_cast<int>(tiles.size()));
    for (std::size_t t = 0; t < tiles.size(); ++t)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < 3; ++c) strip.at(y, static_cast<int>(t) * w + x, c) = tiles[t].at(y, x, c);
    write_png(dir / fmt::format("sample_{}.png", i), strip);
  }
}

RunSummary run_experiment(const ExperimentSpec& spec, const fs::path& run_dir, bool resume) {
  spec.validate();
  fs::create_directories(run_dir);
  {
    std::ofstream cfg(run_dir / "config.json");
    if (!cfg) throw IoError("cannot write " + (run_dir / "config.json").string());
    cfg << to_json(spec).dump(2) << '\n';
  }
  auto data = make_datasets(spec);
  Trainer trainer(spec.train, data.train);
  trainer.set_diagnostic_dir(run_dir / "divergence");

  RunSummary summary;
  double last_odp = 0.0;
  bool have_eval = false;
  const auto records_path = run_dir / "records.jsonl";

  const auto note_eval = [&](int step, double value) {
    if (!have_eval || value > summary.max_odp) {
      summary.max_odp = value;
      summary.best_step = step;
    }
    have_eval = true;
    last_odp = value;
  };

  if (resume) {
    if (auto ckpt = latest_checkpoint(run_dir)) {
      trainer.load_checkpoint(*ckpt);
      std::vector<std::string> kept;
      std::ifstream in(records_path);
      std::string line;
      while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        if (j.at("step").get<int>() >= trainer.step()) break;
        if (j.contains("odp_eval") && !j["odp_eval"].is_null()) {
          note_eval(j["step"].get<int>() + 1, j["odp_eval"].get<double>());
        }
        kept.push_back(line);
      }
      in.close();
      std::ofstream out(records_path, std::ios::trunc);
      for (const auto& l : kept) out << l << '\n';
      std::cerr << fmt::format("resuming {} from step {}\n", run_dir.string(), trainer.step());
    }
  }
  if (trainer.step() == 0) std::ofstream(records_path, std::ios::trunc);

  std::ofstream records(records_path, std::ios::app);
  if (!records) throw IoError("cannot write " + records_path.string());
  const int total = spec.train.total_steps;
  while (trainer.step() < total) {
    StepRecord rec;
    try {
      rec = trainer.train_step();
    } catch (const DivergenceError& e) {
      json j;
      j["diverged_at"] = trainer.step();
      j["error"] = e.what();
      std::ofstream(run_dir / "divergence.json") << j.dump(2) << '\n';
      throw;
    }
    const int done = rec.step + 1;
    if (done % spec.eval_interval == 0 || done == total) {
      const double value = evaluate_odp(trainer, *data.validation).odp;
      rec.odp_eval = value;
      note_eval(done, value);
      std::cerr << fmt::format("[{}] step {:>6}  odp {:6.2f}  d_total {:.4f}  g_total {:.4f}  ({:.0f}s)\n",
                               run_dir.filename().string(), done, value, rec.losses.d_total, rec.losses.g_total,
                               rec.wallclock);
    }
    records << to_json(rec).dump() << '\n';
    records.flush();
    if (!records) throw IoError("write failed: " + records_path.string());
    if (done % spec.checkpoint_interval == 0 || done == total) {
      trainer.save_checkpoint(run_dir / "checkpoints" / fmt::format("step_{}", done));
    }
    if (spec.sample_interval > 0 && (done % spec.sample_interval == 0 || done == total)) {
      write_sample_strips(trainer, *data.validation, run_dir / "samples" / fmt::format("step_{}", done));
    }
    summary.wallclock = rec.wallclock;
  }
  summary.steps = trainer.step();
  summary.final_odp = last_odp;
  summary.stable = is_stable(summary.final_odp, summary.max_odp);
  std::ofstream(run_dir / "summary.json") << to_json(summary).dump(2) << '\n';
  return summary;
}

}  // namespace cpgan
