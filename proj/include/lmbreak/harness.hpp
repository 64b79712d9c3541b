#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <json.hpp>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "lmbreak/attacks.hpp"
#include "lmbreak/codecs.hpp"
#include "lmbreak/dataset.hpp"
#include "lmbreak/extractors.hpp"
#include "lmbreak/synthesis.hpp"

namespace lmb {

struct ExtractorEntry {
  Architecture architecture = Architecture::HourglassMini;
  std::filesystem::path checkpoint;  // relative paths resolve against the output directory
  std::optional<TrainingOptions> train;
};

struct NamedAttack {
  std::string name;  // defaults to the variant id
  AttackConfig config;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;  // mixed into every attack seed
  int jobs = 1;
  std::filesystem::path output_dir = "out";

  // extractor training data
  std::size_t train_count = 2000, val_count = 250, test_count = 250;
  std::uint64_t dataset_seed = 7;

  // evaluation images: frames of one identity, or an annotated directory
  std::uint64_t identity_seed = 777;
  std::uint64_t frame_seed = 5;
  std::size_t image_count = 50;
  std::filesystem::path image_dir;

  std::vector<ExtractorEntry> extractors;

  std::filesystem::path synthesizer_checkpoint = "checkpoints/synthesizer.ckpt";
  std::size_t synth_frames = 300;
  std::uint64_t synth_frame_seed = 99;
  int crop_size = 64;
  std::optional<SynthTrainingOptions> synth_train = SynthTrainingOptions{};

  std::vector<NamedAttack> attacks;
  std::vector<Degradation> degradations{Degradation{}};
  bool compute_ssim_i = true;
  bool compute_ssim_w = true;
  double roi_margin = 0.25;
  VideoCodecOptions video;

  /// Throws Error naming the first invalid field.
  void validate() const;
};

ExperimentConfig experiment_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& config);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// Trained models an experiment runs against.
struct ExperimentAssets {
  std::vector<Extractor> extractors;
  std::optional<Synthesizer> synthesizer;
  DatasetHandle images;
};

using LogFn = std::function<void(const std::string&)>;

/// Loads every referenced checkpoint, training (and saving) the missing ones
/// when a training stanza is present. Throws Error otherwise.
ExperimentAssets prepare_assets(const ExperimentConfig& config, const LogFn& log = {});

/// The extractor-training split implied by the config (train, val, test).
std::array<DatasetHandle, 3> training_splits(const ExperimentConfig& config);

struct EvaluationRecord {
  std::string image_id;
  std::string extractor;  // target
  std::string attack;     // "none" or "<attack name>@<source extractor>"
  std::string degradation;
  double nme = 0.0;
  double ssim_i = 1.0;
  double ssim_w = 1.0;
};

struct CellFailure {
  std::string cell;
  std::string message;
};

struct CellMean {
  double nme = 0.0, ssim_i = 0.0, ssim_w = 0.0;
  std::size_t count = 0;
};

/// (extractor, attack, degradation)
using CellKey = std::tuple<std::string, std::string, std::string>;

class ResultTable {
 public:
  /// Throws Error if the (image, extractor, attack, degradation) cell exists.
  void add(EvaluationRecord record);
  void add_failure(CellFailure failure) { failures_.push_back(std::move(failure)); }

  const std::vector<EvaluationRecord>& records() const { return records_; }
  const std::vector<CellFailure>& failures() const { return failures_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }

  std::map<CellKey, CellMean> means() const;
  /// Mean of one cell; throws Error if it has no records.
  CellMean mean(const std::string& extractor, const std::string& attack, const std::string& degradation) const;

  std::map<std::string, std::string> metadata;  // free-form run facts (codec backend, ...)

 private:
  std::vector<EvaluationRecord> records_;
  std::vector<CellFailure> failures_;
  std::map<std::tuple<std::string, std::string, std::string, std::string>, std::size_t> index_;
};

/// Full protocol: every image x source extractor x attack, evaluated on every
/// target extractor x degradation; plus clean ("none") rows per target x
/// degradation. Per-cell failures are recorded and the run continues.
ResultTable run_experiment(const ExperimentConfig& config, const ExperimentAssets& assets, const LogFn& log = {});

/// Adversarial images of one (attack, source) pair over the evaluation set,
/// quantised to 8 bits within the attack budget. Image i uses seed
/// mix_seed(config.seed, i).
std::vector<Image> craft_batch(const Extractor& source, const std::vector<Image>& images, const AttackConfig& config,
                               int jobs);

std::string attack_label(const std::string& attack_name, const std::string& source);

struct TransferMatrix {
  std::vector<std::string> sources, targets;
  std::vector<std::vector<double>> nme, ssim_w;  // [source][target]
};

/// Rows = perturbation source, columns = attacked extractor. Throws Error
/// listing the missing cells when coverage is incomplete.
TransferMatrix transfer_matrix(const ResultTable& table, const std::string& attack_name,
                               const std::vector<std::string>& extractors, const std::string& degradation = "none");

enum class SweepAxis { Alpha, MaxIters };
std::string to_string(SweepAxis axis);
SweepAxis parse_sweep_axis(const std::string& s);

struct SweepPoint {
  std::string extractor;
  double value = 0.0;
  double nme = 0.0, ssim_i = 0.0, ssim_w = 0.0;
};

/// White-box curves of `base` per extractor over the axis values.
std::vector<SweepPoint> ablation_sweep(const ExperimentConfig& config, const ExperimentAssets& assets,
                                       const AttackConfig& base, SweepAxis axis, const std::vector<double>& values,
                                       const LogFn& log = {});

/// results.csv, summary.json and SVG panels (NME / SSIM_I / SSIM_W against
/// degradation, one line per attack). Returns the written paths.
std::vector<std::filesystem::path> emit_report(const ResultTable& table, const std::filesystem::path& out_dir);

/// sweep_<axis>.csv and one SVG per metric.
std::vector<std::filesystem::path> emit_sweep(const std::vector<SweepPoint>& points, SweepAxis axis,
                                              const std::filesystem::path& out_dir);

std::string results_csv(const ResultTable& table);
/// Parses results_csv output (comment lines skipped).
ResultTable parse_results_csv(const std::string& text);

/// manifest.json listing every regular file under out_dir with its SHA-256.
std::filesystem::path write_manifest(const std::filesystem::path& out_dir);

}  // namespace lmb
