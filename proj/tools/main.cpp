#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "lmbreak/error.hpp"
#include "lmbreak/harness.hpp"
#include "lmbreak/rng.hpp"

namespace fs = std::filesystem;
using namespace lmb;

namespace {

void log_line(const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); }

std::vector<double> parse_values(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error("bad sweep value '" + item + "'");
    }
  }
  return out;
}

void save_config(const ExperimentConfig& c) {
  fs::create_directories(c.output_dir);
  std::ofstream f(c.output_dir / "config.resolved.json");
  f << to_json(c).dump(2) << "\n";
}

int gen_data(const ExperimentConfig& c) {
  const auto splits = training_splits(c);
  const char* names[] = {"train", "val", "test"};
  for (int k = 0; k < 3; ++k) {
    export_dataset(splits[k], c.output_dir / "data" / names[k]);
    log_line(std::string("wrote ") + std::to_string(splits[k].size()) + " " + names[k] + " images");
  }
  if (c.image_dir.empty()) {
    export_dataset(make_identity_dataset(c.identity_seed, c.image_count, c.frame_seed), c.output_dir / "data" / "eval");
    log_line("wrote " + std::to_string(c.image_count) + " evaluation frames");
  }
  return 0;
}

int attack_cmd(const ExperimentConfig& c, const ExperimentAssets& assets) {
  std::vector<Image> originals;
  for (std::size_t i = 0; i < assets.images.size(); ++i) originals.push_back(assets.images.load_image(i));
  for (const auto& a : c.attacks)
    for (const auto& e : assets.extractors) {
      AttackConfig cfg = a.config;
      cfg.seed = mix_seed(c.seed, a.config.seed);
      const auto adv = craft_batch(e, originals, cfg, c.jobs);
      const fs::path dir = c.output_dir / "adversarial" / attack_label(a.name, e.id());
      fs::create_directories(dir);
      for (std::size_t i = 0; i < adv.size(); ++i) save_png(adv[i], dir / (assets.images.records[i].id + ".png"));
      log_line("wrote " + std::to_string(adv.size()) + " images to " + dir.string());
    }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial landmark-disruption toolkit"};
  app.require_subcommand(1);
  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  app.add_option("--config", config_path, "experiment config (JSON)");
  app.add_option("--out", out_dir, "output directory (overrides config)");
  app.add_option("--seed", seed, "base seed mixed into attack randomness (overrides config)");
  app.add_option("--jobs", jobs, "images processed in parallel (overrides config)")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "export the synthetic training splits and evaluation frames");
  auto* train = app.add_subcommand("train", "train every extractor and the synthesizer lacking a checkpoint");
  auto* attack = app.add_subcommand("attack", "craft adversarial images for every attack x extractor");
  auto* evaluate = app.add_subcommand("evaluate", "run the full protocol and write the report");
  auto* sweep = app.add_subcommand("sweep", "white-box ablation over alpha or max_iters");
  auto* report = app.add_subcommand("report", "rebuild summary and plots from a results CSV");
  std::string axis = "max_iters", values = "0,2,5,10,15,20,25,30", results_path;
  sweep->add_option("--axis", axis, "alpha | max_iters");
  sweep->add_option("--values", values, "comma-separated axis values");
  report->add_option("--results", results_path, "results CSV (default <out>/results.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig c = config_path.empty() ? experiment_config_from_json(nlohmann::json::object())
                                             : load_experiment_config(config_path);
    if (!out_dir.empty()) c.output_dir = out_dir;
    if (seed) c.seed = *seed;
    if (jobs) c.jobs = *jobs;
    c.validate();
    save_config(c);

    if (gen->parsed()) {
      gen_data(c);
    } else if (train->parsed()) {
      prepare_assets(c, log_line);
    } else if (attack->parsed()) {
      attack_cmd(c, prepare_assets(c, log_line));
    } else if (evaluate->parsed()) {
      const ExperimentAssets assets = prepare_assets(c, log_line);
      const ResultTable table = run_experiment(c, assets, log_line);
      emit_report(table, c.output_dir);
      if (!table.failures().empty()) log_line(std::to_string(table.failures().size()) + " cells failed; see summary.json");
    } else if (sweep->parsed()) {
      const ExperimentAssets assets = prepare_assets(c, log_line);
      const AttackConfig base = c.attacks.empty() ? AttackConfig{} : c.attacks.front().config;
      emit_sweep(ablation_sweep(c, assets, base, parse_sweep_axis(axis), parse_values(values), log_line),
                 parse_sweep_axis(axis), c.output_dir);
    } else if (report->parsed()) {
      const fs::path in = results_path.empty() ? c.output_dir / "results.csv" : fs::path(results_path);
      std::ifstream f(in);
      if (!f) throw Error("cannot open " + in.string());
      std::stringstream buf;
      buf << f.rdbuf();
      emit_report(parse_results_csv(buf.str()), c.output_dir);
    }
    write_manifest(c.output_dir);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
