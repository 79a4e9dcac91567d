#include "cpgan/config.hpp"

#include <set>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/core.h>

#include "cpgan/errors.hpp"

namespace cpgan {

namespace pt = boost::property_tree;
using nlohmann::json;

namespace {

// Reads typed keys from one INI section and remembers which were consumed.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (tree_ == nullptr) return;
    auto v = tree_->get_optional<std::string>(key);
    if (!v) return;
    out = parse<T>(key, *v);
  }

  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, _] : *tree_) {
      if (!seen_.count(key)) throw ConfigError(fmt::format("unknown key '{}' in section [{}]", key, name_));
    }
  }

 private:
  template <typename T>
  T parse(const std::string& key, const std::string& raw) const {
    const auto where = fmt::format("[{}] {} = '{}'", name_, key, raw);
    if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1" || raw == "yes" || raw == "on") return true;
      if (raw == "false" || raw == "0" || raw == "no" || raw == "off") return false;
      throw ConfigError("expected a boolean: " + where);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return raw;
    } else if constexpr (std::is_same_v<T, std::filesystem::path>) {
      return std::filesystem::path(raw);
    } else {
      std::size_t used = 0;
      try {
        T value{};
        if constexpr (std::is_floating_point_v<T>) {
          value = static_cast<T>(std::stod(raw, &used));
        } else if constexpr (std::is_unsigned_v<T>) {
          if (!raw.empty() && raw[0] == '-') throw ConfigError("expected a non-negative integer: " + where);
          value = static_cast<T>(std::stoull(raw, &used));
        } else {
          value = static_cast<T>(std::stoll(raw, &used));
        }
        if (used != raw.size()) throw ConfigError("trailing characters: " + where);
        return value;
      } catch (const std::logic_error&) {
        throw ConfigError("expected a number: " + where);
      }
    }
  }

  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> seen_;
};

void read_net(Section& s, NetShape& n) {
  s.get("levels", n.levels);
  s.get("base_channels", n.base_channels);
  s.get("encoder_dim", n.encoder_dim);
}

json net_json(const NetShape& n) {
  return {{"levels", n.levels}, {"base_channels", n.base_channels}, {"encoder_dim", n.encoder_dim}};
}

NetShape net_from_json(const json& j) {
  NetShape n;
  n.levels = j.value("levels", n.levels);
  n.base_channels = j.value("base_channels", n.base_channels);
  n.encoder_dim = j.value("encoder_dim", n.encoder_dim);
  return n;
}

}  // namespace

ExperimentSpec load_experiment(const std::filesystem::path& path) {
  pt::ptree tree;
  try {
    pt::read_ini(path.string(), tree);
  } catch (const pt::ini_parser_error& e) {
    if (!std::filesystem::exists(path)) throw IoError("config file not found: " + path.string());
    throw ConfigError(fmt::format("{}:{}: {}", path.string(), e.line(), e.message()));
  }
  static const std::set<std::string> sections{"dataset", "train", "generator", "discriminator", "eval", "run"};
  for (const auto& [name, body] : tree) {
    if (!sections.count(name)) throw ConfigError("unknown section [" + name + "] in " + path.string());
  }
  const auto section = [&](const std::string& name) {
    auto child = tree.get_child_optional(name);
    return Section(child ? &*child : nullptr, name);
  };

  ExperimentSpec spec;
  {
    auto s = section("dataset");
    s.get("name", spec.dataset_name);
    auto preset = dataset_preset(spec.dataset_name);
    if (!preset) throw ConfigError("unknown dataset preset '" + spec.dataset_name + "'");
    spec.dataset = *preset;
    auto& d = spec.dataset;
    s.get("image_size", d.image_size);
    s.get("square_side", d.square_side);
    s.get("min_count", d.min_count);
    s.get("max_count", d.max_count);
    s.get("noise_prob", d.noise_prob);
    std::string bg = to_string(d.background);
    s.get("background", bg);
    d.background = background_source_from_string(bg);
    s.get("train_size", spec.train_size);
    s.get("seed", spec.dataset_seed);
    s.get("cifar_dir", spec.cifar_dir);
    s.reject_unknown();
  }
  {
    auto s = section("train");
    auto& t = spec.train;
    s.get("batch_size", t.batch_size);
    s.get("lr_initial", t.lr_initial);
    s.get("lr_drop_step", t.lr_drop_step);
    s.get("lr_drop_factor", t.lr_drop_factor);
    s.get("disc_only_steps", t.disc_only_steps);
    s.get("total_steps", t.total_steps);
    s.get("aux_weight", t.aux_weight);
    s.get("blur_enabled", t.blur_enabled);
    s.get("border_zero_enabled", t.border_zero_enabled);
    s.get("anti_shortcut_enabled", t.anti_shortcut_enabled);
    s.get("grounded_fakes_enabled", t.grounded_fakes_enabled);
    s.get("mask_pred_enabled", t.mask_pred_enabled);
    std::string kind = to_string(t.generator_kind);
    s.get("generator_kind", kind);
    t.generator_kind = generator_kind_from_string(kind);
    s.get("rng_seed", t.rng_seed);
    s.get("non_saturating", t.non_saturating);
    s.get("border_width", t.border_width);
    s.get("blur_sigma", t.blur_sigma);
    s.get("blur_kernel", t.blur_kernel);
    s.get("entropy_weight", t.entropy_weight);
    s.get("critic_weight", t.critic_weight);
    s.get("seed_dropout", t.seed_dropout);
    s.reject_unknown();
  }
  {
    auto g = section("generator");
    read_net(g, spec.train.generator_net);
    g.reject_unknown();
    auto d = section("discriminator");
    read_net(d, spec.train.discriminator_net);
    d.reject_unknown();
  }
  {
    auto s = section("eval");
    s.get("eval_interval", spec.eval_interval);
    s.get("validation_size", spec.validation_size);
    s.reject_unknown();
  }
  {
    auto s = section("run");
    s.get("runs", spec.runs);
    s.get("output_dir", spec.output_dir);
    s.get("checkpoint_interval", spec.checkpoint_interval);
    s.get("sample_interval", spec.sample_interval);
    s.reject_unknown();
  }
  spec.validate();
  return spec;
}

json to_json(const DatasetConfig& c) {
  json palette = json::array();
  for (const auto& rgb : c.palette) palette.push_back({rgb[0], rgb[1], rgb[2]});
  return {{"image_size", c.image_size}, {"square_side", c.square_side}, {"min_count", c.min_count},
          {"max_count", c.max_count},   {"noise_prob", c.noise_prob},   {"background", to_string(c.background)},
          {"palette", palette}};
}

json to_json(const TrainConfig& c) {
  return {{"batch_size", c.batch_size},
          {"lr_initial", c.lr_initial},
          {"lr_drop_step", c.lr_drop_step},
          {"lr_drop_factor", c.lr_drop_factor},
          {"disc_only_steps", c.disc_only_steps},
          {"total_steps", c.total_steps},
          {"aux_weight", c.aux_weight},
          {"blur_enabled", c.blur_enabled},
          {"border_zero_enabled", c.border_zero_enabled},
          {"anti_shortcut_enabled", c.anti_shortcut_enabled},
          {"grounded_fakes_enabled", c.grounded_fakes_enabled},
          {"mask_pred_enabled", c.mask_pred_enabled},
          {"generator_kind", to_string(c.generator_kind)},
          {"rng_seed", c.rng_seed},
          {"non_saturating", c.non_saturating},
          {"border_width", c.border_width},
          {"blur_sigma", c.blur_sigma},
          {"blur_kernel", c.blur_kernel},
          {"entropy_weight", c.entropy_weight},
          {"critic_weight", c.critic_weight},
          {"seed_dropout", c.seed_dropout},
          {"generator_net", net_json(c.generator_net)},
          {"discriminator_net", net_json(c.discriminator_net)}};
}

json to_json(const UNetConfig& c) {
  return {{"input_size", c.input_size},       {"levels", c.levels},         {"base_channels", c.base_channels},
          {"output_channels", c.output_channels}, {"encoder_dim", c.encoder_dim}, {"leaky_slope", c.leaky_slope}};
}

json to_json(const ExperimentSpec& s) {
  return {{"dataset_name", s.dataset_name},
          {"dataset", to_json(s.dataset)},
          {"train_size", s.train_size},
          {"dataset_seed", s.dataset_seed},
          {"cifar_dir", s.cifar_dir.string()},
          {"train", to_json(s.train)},
          {"eval_interval", s.eval_interval},
          {"validation_size", s.validation_size},
          {"checkpoint_interval", s.checkpoint_interval},
          {"sample_interval", s.sample_interval},
          {"runs", s.runs},
          {"output_dir", s.output_dir.string()}};
}

json to_json(const LossBundle& b) {
  return {{"d_real", b.d_real},
          {"d_fake", b.d_fake},
          {"d_grounded_fake", b.d_grounded_fake},
          {"g_fake", b.g_fake},
          {"g_anti_shortcut", b.g_anti_shortcut},
          {"mask_real", b.mask_real},
          {"mask_fake", b.mask_fake},
          {"mask_anti_shortcut", b.mask_anti_shortcut},
          {"mask_grounded_fake", b.mask_grounded_fake},
          {"g_total", b.g_total},
          {"d_total", b.d_total}};
}

json to_json(const StepRecord& r, bool with_scores) {
  json j{{"step", r.step},
         {"phase", to_string(r.phase)},
         {"losses", to_json(r.losses)},
         {"odp_eval", r.odp_eval ? json(*r.odp_eval) : json(nullptr)},
         {"lr", r.lr},
         {"wallclock", r.wallclock}};
  if (r.policy) {
    j["policy"] = {{"mean_reward", r.policy->mean_reward},
                   {"mean_entropy", r.policy->mean_entropy},
                   {"policy_term", r.policy->policy_term},
                   {"critic_term", r.policy->critic_term}};
  }
  if (with_scores) {
    const auto& s = r.scores;
    j["scores"] = {{"real", s.real},
                   {"fake", s.fake},
                   {"anti_shortcut", s.anti_shortcut},
                   {"grounded_fake", s.grounded_fake},
                   {"mask_real", s.mask_real},
                   {"mask_fake", s.mask_fake},
                   {"mask_anti_shortcut", s.mask_anti_shortcut},
                   {"mask_grounded_fake", s.mask_grounded_fake}};
  }
  return j;
}

json to_json(const RunSummary& s) {
  return {{"max_odp", s.max_odp}, {"final_odp", s.final_odp}, {"best_step", s.best_step},
          {"stable", s.stable},   {"steps", s.steps},         {"wallclock", s.wallclock}};
}

DatasetConfig dataset_config_from_json(const json& j) {
  DatasetConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.square_side = j.value("square_side", c.square_side);
  c.min_count = j.value("min_count", c.min_count);
  c.max_count = j.value("max_count", c.max_count);
  c.noise_prob = j.value("noise_prob", c.noise_prob);
  if (j.contains("background")) c.background = background_source_from_string(j["background"].get<std::string>());
  if (j.contains("palette")) {
    const auto& p = j["palette"];
    if (!p.is_array() || p.size() != c.palette.size()) throw ConfigError("palette must list 16 colours");
    for (std::size_t i = 0; i < c.palette.size(); ++i) {
      for (int k = 0; k < 3; ++k) c.palette[i][k] = p[i].at(k).get<std::uint8_t>();
    }
  }
  c.validate();
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_initial = j.value("lr_initial", c.lr_initial);
  c.lr_drop_step = j.value("lr_drop_step", c.lr_drop_step);
  c.lr_drop_factor = j.value("lr_drop_factor", c.lr_drop_factor);
  c.disc_only_steps = j.value("disc_only_steps", c.disc_only_steps);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.aux_weight = j.value("aux_weight", c.aux_weight);
  c.blur_enabled = j.value("blur_enabled", c.blur_enabled);
  c.border_zero_enabled = j.value("border_zero_enabled", c.border_zero_enabled);
  c.anti_shortcut_enabled = j.value("anti_shortcut_enabled", c.anti_shortcut_enabled);
  c.grounded_fakes_enabled = j.value("grounded_fakes_enabled", c.grounded_fakes_enabled);
  c.mask_pred_enabled = j.value("mask_pred_enabled", c.mask_pred_enabled);
  if (j.contains("generator_kind")) c.generator_kind = generator_kind_from_string(j["generator_kind"]);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.non_saturating = j.value("non_saturating", c.non_saturating);
  c.border_width = j.value("border_width", c.border_width);
  c.blur_sigma = j.value("blur_sigma", c.blur_sigma);
  c.blur_kernel = j.value("blur_kernel", c.blur_kernel);
  c.entropy_weight = j.value("entropy_weight", c.entropy_weight);
  c.critic_weight = j.value("critic_weight", c.critic_weight);
  c.seed_dropout = j.value("seed_dropout", c.seed_dropout);
  if (j.contains("generator_net")) c.generator_net = net_from_json(j["generator_net"]);
  if (j.contains("discriminator_net")) c.discriminator_net = net_from_json(j["discriminator_net"]);
  c.validate();
  return c;
}

ExperimentSpec experiment_from_json(const json& j) {
  ExperimentSpec s;
  s.dataset_name = j.value("dataset_name", s.dataset_name);
  if (j.contains("dataset")) s.dataset = dataset_config_from_json(j["dataset"]);
  s.train_size = j.value("train_size", s.train_size);
  s.dataset_seed = j.value("dataset_seed", s.dataset_seed);
  s.cifar_dir = j.value("cifar_dir", std::string());
  if (j.contains("train")) s.train = train_config_from_json(j["train"]);
  s.eval_interval = j.value("eval_interval", s.eval_interval);
  s.validation_size = j.value("validation_size", s.validation_size);
  s.checkpoint_interval = j.value("checkpoint_interval", s.checkpoint_interval);
  s.sample_interval = j.value("sample_interval", s.sample_interval);
  s.runs = j.value("runs", s.runs);
  s.output_dir = j.value("output_dir", s.output_dir.string());
  s.validate();
  return s;
}

LossBundle loss_bundle_from_json(const json& j) {
  LossBundle b;
  b.d_real = j.at("d_real");
  b.d_fake = j.at("d_fake");
  b.d_grounded_fake = j.at("d_grounded_fake");
  b.g_fake = j.at("g_fake");
  b.g_anti_shortcut = j.at("g_anti_shortcut");
  b.mask_real = j.at("mask_real");
  b.mask_fake = j.at("mask_fake");
  b.mask_anti_shortcut = j.at("mask_anti_shortcut");
  b.mask_grounded_fake = j.at("mask_grounded_fake");
  b.g_total = j.at("g_total");
  b.d_total = j.at("d_total");
  return b;
}

}  // namespace cpgan
