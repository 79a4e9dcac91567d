// cpgan: dataset generation, training, evaluation, flow ground truth, plots.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <fmt/core.h>
#include <json.hpp>

#include "cpgan/config.hpp"
#include "cpgan/evalkit.hpp"
#include "cpgan/flowgt.hpp"
#include "cpgan/synthdata.hpp"
#include "cpgan/trainer.hpp"
#include "svg_plot.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cpgan;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

// Raised for bad flag combinations discovered after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::optional<fs::path> data_root() {
  if (const char* r = std::getenv("CPGAN_DATA_ROOT"); r != nullptr && *r != '\0') return fs::path(r);
  return std::nullopt;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what(), e.byte);
  }
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string dataset;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  std::string out;
  std::string cifar_dir;
};

int cmd_gen_data(const GenDataArgs& a) {
  auto config = dataset_preset(a.dataset);
  if (!config) throw UsageError("unknown dataset '" + a.dataset + "'");
  fs::path out = a.out;
  if (out.empty()) {
    auto root = data_root();
    if (!root) throw UsageError("--out is required when CPGAN_DATA_ROOT is unset");
    out = *root / "datasets" / a.dataset;
  }
  ExperimentSpec spec;
  spec.dataset_name = a.dataset;
  spec.dataset = *config;
  spec.cifar_dir = a.cifar_dir;
  std::shared_ptr<const BackgroundPool> pool;
  if (config->background == BackgroundSource::cifar10) {
    fs::path dir = a.cifar_dir;
    if (dir.empty()) {
      auto root = data_root();
      if (!root) throw UsageError("CIFAR-10 backgrounds need --cifar-dir or CPGAN_DATA_ROOT");
      dir = *root / "cifar-10-batches-bin";
    }
    pool = std::make_shared<const BackgroundPool>(load_cifar10_backgrounds(dir));
  }
  SyntheticDataset ds(*config, a.seed, a.n, pool);
  std::vector<Scene> scenes;
  scenes.reserve(a.n);
  for (std::size_t i = 0; i < a.n; ++i) scenes.push_back(ds.scene(i));
  write_dataset(out, scenes);
  std::cout << fmt::format("wrote {} scenes to {}\n", a.n, out.string());
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  int runs = 0;  // 0: use the config
  std::string output;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  bool resume = false;
};

int cmd_train(const TrainArgs& a) {
  auto spec = load_experiment(a.config);
  if (a.runs > 0) spec.runs = a.runs;
  if (!a.output.empty()) spec.output_dir = a.output;
  if (a.seed) spec.train.rng_seed = *a.seed;
  if (a.steps) {
    spec.train.total_steps = *a.steps;
    spec.train.lr_drop_step = std::min(spec.train.lr_drop_step, *a.steps - 1);
  }
  spec.validate();
  const std::uint64_t base_seed = spec.train.rng_seed;
  std::vector<RunOutcome> outcomes;
  json runs = json::array();
  for (int r = 0; r < spec.runs; ++r) {
    auto run_spec = spec;
    run_spec.train.rng_seed = base_seed + static_cast<std::uint64_t>(r);
    const auto dir = spec.output_dir / fmt::format("run_{}", r);
    const auto s = run_experiment(run_spec, dir, a.resume);
    outcomes.push_back({s.max_odp, s.final_odp});
    auto j = to_json(s);
    j["run_dir"] = dir.string();
    j["rng_seed"] = run_spec.train.rng_seed;
    runs.push_back(j);
    std::cout << fmt::format("run {}: max ODP {:.2f} (step {}), final ODP {:.2f}, {}\n", r, s.max_odp, s.best_step,
                             s.final_odp, s.stable ? "stable" : "collapsed");
  }
  const auto agg = aggregate_runs(outcomes);
  write_json(spec.output_dir / "aggregate.json",
             {{"runs", runs}, {"mean", agg.mean}, {"std", agg.std}, {"stability_rate", agg.stability_rate}});
  std::cout << fmt::format("ODP {:.2f} +- {:.2f} over {} run(s), stability {:.0f}%\n", agg.mean, agg.std,
                           spec.runs, agg.stability_rate);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string dataset;
  std::string report;
};

// A checkpoint lives at <run>/checkpoints/step_N.
fs::path run_dir_of(const fs::path& checkpoint) { return checkpoint.parent_path().parent_path(); }

int cmd_eval(const EvalArgs& a) {
  fs::path ckpt = a.checkpoint;
  if (fs::exists(ckpt / "checkpoints")) {  // a run directory was given
    auto latest = latest_checkpoint(ckpt);
    if (!latest) throw IoError("no checkpoints under " + ckpt.string());
    ckpt = *latest;
  }
  if (!fs::exists(ckpt / "meta.json")) throw IoError("not a checkpoint: " + ckpt.string());
  const auto meta = read_json(ckpt / "meta.json");
  auto train = train_config_from_json(meta.at("train"));

  std::shared_ptr<const SceneDataset> dataset;
  std::string source;
  if (!a.dataset.empty()) {
    dataset = std::make_shared<DirectoryDataset>(a.dataset);
    source = a.dataset;
  } else {
    const auto cfg = run_dir_of(ckpt) / "config.json";
    if (!fs::exists(cfg)) throw UsageError("--dataset is required: no run config next to the checkpoint");
    dataset = make_datasets(experiment_from_json(read_json(cfg))).validation;
    source = "validation split of " + run_dir_of(ckpt).string();
  }
  if (dataset->image_size() != meta.at("image_size").get<int>()) {
    throw ConfigError("dataset image size does not match the checkpoint");
  }
  Trainer trainer(train, dataset);
  trainer.load_checkpoint(ckpt);
  const auto summary = evaluate_odp(trainer, *dataset);

  json cases = json::array();
  for (std::size_t i = 0; i < summary.matches.size(); ++i) {
    cases.push_back({{"index", i},
                     {"iou", summary.matches[i].best_iou},
                     {"subset", summary.matches[i].subset},
                     {"success", static_cast<bool>(summary.success[i])}});
  }
  json report{{"checkpoint", ckpt.string()},
              {"step", meta.at("step")},
              {"dataset", source},
              {"cases", cases},
              {"odp", summary.odp},
              {"n", summary.matches.size()}};
  const fs::path out = a.report.empty() ? ckpt / "eval.json" : fs::path(a.report);
  write_json(out, report);
  std::cout << fmt::format("ODP {:.3f}% over {} cases (report: {})\n", summary.odp, summary.matches.size(),
                           out.string());
  return 0;
}

// ---------------------------------------------------------------------------

struct FlowArgs {
  std::string flo;
  std::string out;
  FlowGtOptions options;
};

int cmd_flow_gt(const FlowArgs& a) {
  const auto flow = read_flo(a.flo);
  const auto masks = segment_flow(flow, a.options);
  fs::create_directories(a.out);
  json objects = json::array();
  for (std::size_t k = 0; k < masks.size(); ++k) {
    const auto name = fmt::format("object_{}.png", k);
    write_png(fs::path(a.out) / name, masks[k]);
    objects.push_back({{"mask", name}, {"area", static_cast<std::int64_t>(masks[k].sum())}});
  }
  write_json(fs::path(a.out) / "manifest.json",
             {{"flo", a.flo},
              {"height", flow.height},
              {"width", flow.width},
              {"residual_threshold", a.options.cluster.residual_threshold},
              {"merge_threshold", a.options.cluster.merge_threshold},
              {"min_area_fraction", a.options.min_area_fraction},
              {"objects", objects}});
  std::cout << fmt::format("{} object(s) written to {}\n", masks.size(), a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct PlotArgs {
  std::string run;
  std::string out;
};

int cmd_plot(const PlotArgs& a) {
  const fs::path run = a.run;
  const fs::path out = a.out.empty() ? run / "plots" : fs::path(a.out);
  std::ifstream in(run / "records.jsonl");
  if (!in) throw IoError("no records.jsonl in " + run.string());
  static const std::vector<std::string> kLosses{"d_real",    "d_fake",        "d_grounded_fake",    "g_fake",
                                                "g_anti_shortcut", "mask_real", "mask_fake",
                                                "mask_anti_shortcut", "mask_grounded_fake", "g_total", "d_total"};
  std::map<std::string, std::vector<std::pair<double, double>>> losses;
  std::vector<std::pair<double, double>> odp_curve;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = json::parse(line);
    const double step = j.at("step").get<double>();
    for (const auto& name : kLosses) losses[name].emplace_back(step, j.at("losses").at(name).get<double>());
    if (!j["odp_eval"].is_null()) odp_curve.emplace_back(step + 1, j["odp_eval"].get<double>());
  }
  fs::create_directories(out);
  std::vector<plot::Series> series;
  for (const auto& name : kLosses) series.push_back({name, plot::moving_average(losses[name], 50)});
  plot::write_svg(out / "losses.svg", "losses (moving average of 50 steps)", "step", "loss", series);
  plot::write_svg(out / "odp.svg", "validation ODP", "step", "ODP (%)", {{"odp", odp_curve}});

  if (auto ckpt = latest_checkpoint(run)) {
    const auto meta = read_json(*ckpt / "meta.json");
    auto spec = experiment_from_json(read_json(run / "config.json"));
    auto data = make_datasets(spec);
    Trainer trainer(train_config_from_json(meta.at("train")), data.validation);
    trainer.load_checkpoint(*ckpt);
    write_sample_strips(trainer, *data.validation, out / "samples");
  }
  std::cout << "plots written to " << out.string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Copy-pasting GAN: unsupervised object discovery"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* g = app.add_subcommand("gen-data", "Materialize a synthetic dataset (PNG images, masks, index.jsonl)");
  g->add_option("--dataset", gen.dataset, "squares | noisysquares | easysquares")->required();
  g->add_option("--n", gen.n, "Number of scenes")->check(CLI::PositiveNumber);
  g->add_option("--seed", gen.seed, "Base seed (scene i uses seed+i)");
  g->add_option("--out", gen.out, "Output directory (default: $CPGAN_DATA_ROOT/datasets/<name>)");
  g->add_option("--cifar-dir", gen.cifar_dir, "CIFAR-10 binary batches (default: $CPGAN_DATA_ROOT/cifar-10-batches-bin)");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one or more runs from an INI experiment file");
  t->add_option("--config", tr.config, "Experiment file")->required()->check(CLI::ExistingFile);
  t->add_option("--runs", tr.runs, "Override the number of runs")->check(CLI::PositiveNumber);
  t->add_option("--output", tr.output, "Override the output directory");
  t->add_option("--seed", tr.seed, "Override the base run seed (run r uses seed+r)");
  t->add_option("--steps", tr.steps, "Override total_steps")->check(CLI::PositiveNumber);
  t->add_flag("--resume", tr.resume, "Continue from the latest checkpoint of each run");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Compute ODP of a checkpoint on a labelled dataset");
  e->add_option("--checkpoint", ev.checkpoint, "checkpoints/step_N directory or a run directory")->required();
  e->add_option("--dataset", ev.dataset, "Dataset directory (default: the run's validation split)");
  e->add_option("--report", ev.report, "Report path (default: <checkpoint>/eval.json)");

  FlowArgs fl;
  auto* f = app.add_subcommand("flow-gt", "Segment a .flo optical flow field into object masks");
  f->add_option("--flo", fl.flo, ".flo file")->required()->check(CLI::ExistingFile);
  f->add_option("--out", fl.out, "Output directory")->required();
  f->add_option("--residual-threshold", fl.options.cluster.residual_threshold, "Max patch fit RMS (px)");
  f->add_option("--merge-threshold", fl.options.cluster.merge_threshold, "Max model disagreement to merge (px)");
  f->add_option("--min-area-fraction", fl.options.min_area_fraction, "Smallest object, as a fraction of the image");

  PlotArgs pl;
  auto* p = app.add_subcommand("plot", "Render loss curves, ODP curve and sample strips for a run");
  p->add_option("--run", pl.run, "Run directory")->required()->check(CLI::ExistingDirectory);
  p->add_option("--out", pl.out, "Output directory (default: <run>/plots)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kUsageError;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*f) return cmd_flow_gt(fl);
    if (*p) return cmd_plot(pl);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << '\n';
    return kUsageError;
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return kUsageError;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return kRuntimeError;
  }
  return kUsageError;
}
