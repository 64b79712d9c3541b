#include "lmbreak/harness.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>

#include "lmbreak/error.hpp"
#include "lmbreak/hash.hpp"
#include "lmbreak/metrics.hpp"
#include "lmbreak/plot.hpp"
#include "lmbreak/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace lmb {

// ---------------------------------------------------------------- config

void ExperimentConfig::validate() const {
  if (jobs < 1) throw Error("config: jobs must be >= 1");
  if (train_count == 0 || val_count == 0 || test_count == 0) throw Error("config: dataset split counts must be positive");
  if (image_dir.empty() && image_count == 0) throw Error("config: images.count must be positive");
  if (extractors.empty()) throw Error("config: no extractors listed");
  std::set<Architecture> seen;
  for (const auto& e : extractors)
    if (!seen.insert(e.architecture).second) throw Error("config: extractor " + to_string(e.architecture) + " listed twice");
  std::set<std::string> names;
  for (const auto& a : attacks) {
    if (a.name.empty() || a.name == "none" || a.name.find_first_of(",@\n\"") != std::string::npos)
      throw Error("config: invalid attack name '" + a.name + "'");
    if (!names.insert(a.name).second) throw Error("config: attack name '" + a.name + "' is not unique");
    a.config.validate();
  }
  if (degradations.empty()) throw Error("config: degradation list is empty");
  if (!(roi_margin >= 0.0)) throw Error("config: metrics.roi_margin must be >= 0");
  if (crop_size < 16 || crop_size % 4 != 0) throw Error("config: synthesizer.crop_size must be a multiple of 4, >= 16");
}

namespace {

TrainingOptions training_from_json(const json& j) {
  TrainingOptions t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.sigma = j.value("sigma", t.sigma);
  t.seed = j.value("seed", t.seed);
  return t;
}

json training_to_json(const TrainingOptions& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"sigma", t.sigma}, {"seed", t.seed}};
}

SynthTrainingOptions synth_training_from_json(const json& j) {
  SynthTrainingOptions t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.val_fraction = j.value("val_fraction", t.val_fraction);
  t.seed = j.value("seed", t.seed);
  return t;
}

json synth_training_to_json(const SynthTrainingOptions& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"learning_rate", t.learning_rate},
          {"val_fraction", t.val_fraction}, {"seed", t.seed}};
}

}  // namespace

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  try {
    c.seed = j.value("seed", c.seed);
    c.jobs = j.value("jobs", c.jobs);
    c.output_dir = j.value("output_dir", c.output_dir.string());
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      c.train_count = d.value("train", c.train_count);
      c.val_count = d.value("val", c.val_count);
      c.test_count = d.value("test", c.test_count);
      c.dataset_seed = d.value("seed", c.dataset_seed);
    }
    if (j.contains("images")) {
      const json& d = j.at("images");
      c.identity_seed = d.value("identity_seed", c.identity_seed);
      c.frame_seed = d.value("frame_seed", c.frame_seed);
      c.image_count = d.value("count", c.image_count);
      c.image_dir = d.value("dir", std::string());
    }
    if (j.contains("extractors")) {
      for (const json& e : j.at("extractors")) {
        ExtractorEntry entry;
        entry.architecture = parse_architecture(e.at("architecture").get<std::string>());
        entry.checkpoint = e.value("checkpoint", "checkpoints/" + to_string(entry.architecture) + ".ckpt");
        if (e.contains("train")) entry.train = training_from_json(e.at("train"));
        c.extractors.push_back(std::move(entry));
      }
    } else {
      for (Architecture a : all_architectures())
        c.extractors.push_back({a, "checkpoints/" + to_string(a) + ".ckpt", TrainingOptions{}});
    }
    if (j.contains("synthesizer")) {
      const json& s = j.at("synthesizer");
      c.synthesizer_checkpoint = s.value("checkpoint", c.synthesizer_checkpoint.string());
      c.synth_frames = s.value("frames", c.synth_frames);
      c.synth_frame_seed = s.value("frame_seed", c.synth_frame_seed);
      c.crop_size = s.value("crop_size", c.crop_size);
      if (s.contains("train")) {
        if (s.at("train").is_null()) c.synth_train.reset();
        else c.synth_train = synth_training_from_json(s.at("train"));
      }
    }
    if (j.contains("attacks")) {
      for (const json& a : j.at("attacks")) {
        NamedAttack na{"", attack_config_from_json(a)};
        na.name = a.value("name", to_string(na.config.variant));
        c.attacks.push_back(std::move(na));
      }
    } else {
      c.attacks.push_back({"LB", AttackConfig{}});
    }
    if (j.contains("degradations")) {
      c.degradations.clear();
      for (const json& d : j.at("degradations")) c.degradations.push_back(Degradation::parse(d.get<std::string>()));
    }
    if (j.contains("metrics")) {
      const json& m = j.at("metrics");
      c.compute_ssim_i = m.value("ssim_i", c.compute_ssim_i);
      c.compute_ssim_w = m.value("ssim_w", c.compute_ssim_w);
      c.roi_margin = m.value("roi_margin", c.roi_margin);
    }
    if (j.contains("video")) {
      const json& v = j.at("video");
      c.video.command_c = v.value("video_codec_c", c.video.command_c);
      c.video.command_c2 = v.value("video_codec_c2", c.video.command_c2);
      c.video.allow_fallback = v.value("allow_fallback", c.video.allow_fallback);
      c.video.fps = v.value("fps", c.video.fps);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("malformed experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json extractors = json::array();
  for (const auto& e : c.extractors) {
    json x = {{"architecture", to_string(e.architecture)}, {"checkpoint", e.checkpoint.string()}};
    if (e.train) x["train"] = training_to_json(*e.train);
    extractors.push_back(std::move(x));
  }
  json attacks = json::array();
  for (const auto& a : c.attacks) {
    json x = to_json(a.config);
    x["name"] = a.name;
    attacks.push_back(std::move(x));
  }
  json degradations = json::array();
  for (const auto& d : c.degradations) degradations.push_back(d.tag());
  json images = {{"identity_seed", c.identity_seed}, {"frame_seed", c.frame_seed}, {"count", c.image_count}};
  if (!c.image_dir.empty()) images["dir"] = c.image_dir.string();
  json synth = {{"checkpoint", c.synthesizer_checkpoint.string()},
                {"frames", c.synth_frames},
                {"frame_seed", c.synth_frame_seed},
                {"crop_size", c.crop_size},
                {"train", c.synth_train ? synth_training_to_json(*c.synth_train) : json(nullptr)}};
  return {{"seed", c.seed},
          {"jobs", c.jobs},
          {"output_dir", c.output_dir.string()},
          {"dataset", {{"train", c.train_count}, {"val", c.val_count}, {"test", c.test_count}, {"seed", c.dataset_seed}}},
          {"images", images},
          {"extractors", extractors},
          {"synthesizer", synth},
          {"attacks", attacks},
          {"degradations", degradations},
          {"metrics", {{"ssim_i", c.compute_ssim_i}, {"ssim_w", c.compute_ssim_w}, {"roi_margin", c.roi_margin}}},
          {"video",
           {{"video_codec_c", c.video.command_c},
            {"video_codec_c2", c.video.command_c2},
            {"allow_fallback", c.video.allow_fallback},
            {"fps", c.video.fps}}}};
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    throw Error("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return experiment_config_from_json(j);
}

// ---------------------------------------------------------------- assets

namespace {

fs::path resolve(const ExperimentConfig& c, const fs::path& p) { return p.is_absolute() ? p : c.output_dir / p; }

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

std::array<DatasetHandle, 3> training_splits(const ExperimentConfig& c) {
  const std::size_t total = c.train_count + c.val_count + c.test_count;
  const double n = static_cast<double>(total);
  return split_dataset(make_synthetic_dataset(total, c.dataset_seed),
                       {c.train_count / n, c.val_count / n, c.test_count / n}, c.dataset_seed);
}

ExperimentAssets prepare_assets(const ExperimentConfig& config, const LogFn& log) {
  config.validate();
  ExperimentAssets assets;
  if (config.image_dir.empty()) {
    assets.images = make_identity_dataset(config.identity_seed, config.image_count, config.frame_seed);
  } else {
    LoadDiagnostics diag;
    assets.images = load_annotated_dataset(config.image_dir, &diag);
    for (const auto& m : diag.messages) emit(log, "skipped record: " + m);
  }

  std::optional<std::array<DatasetHandle, 3>> splits;
  for (const auto& entry : config.extractors) {
    const fs::path path = resolve(config, entry.checkpoint);
    if (fs::exists(path)) {
      Extractor e = Extractor::load(path);
      if (e.spec().architecture != entry.architecture)
        throw Error("checkpoint " + path.string() + " holds " + e.id() + ", expected " + to_string(entry.architecture));
      emit(log, "loaded " + e.id() + " from " + path.string());
      assets.extractors.push_back(std::move(e));
      continue;
    }
    if (!entry.train)
      throw Error("checkpoint " + path.string() + " does not exist and no training stanza is given for " +
                  to_string(entry.architecture));
    if (!splits) splits = training_splits(config);
    TrainingOptions opts = *entry.train;
    const std::string id = to_string(entry.architecture);
    opts.on_epoch = [&](int epoch, double loss, double v) {
      emit(log, id + " epoch " + std::to_string(epoch) + " loss " + fmt("%.5f", loss) + " val NME " + fmt("%.4f", v));
    };
    ExtractorSpec spec;
    spec.architecture = entry.architecture;
    Extractor e = train_extractor(spec, (*splits)[0], (*splits)[1], opts);
    fs::create_directories(path.parent_path());
    e.save(path);
    emit(log, "trained " + id + ": best val NME " + fmt("%.4f", e.metadata().final_val_nme) + ", saved " + path.string());
    assets.extractors.push_back(std::move(e));
  }

  if (config.compute_ssim_w) {
    const fs::path path = resolve(config, config.synthesizer_checkpoint);
    if (fs::exists(path)) {
      assets.synthesizer = Synthesizer::load(path);
      if (assets.synthesizer->crop_size() != config.crop_size)
        throw Error("synthesizer checkpoint crop size differs from config");
      emit(log, "loaded synthesizer from " + path.string());
    } else if (config.synth_train) {
      const DatasetHandle frames =
          config.image_dir.empty()
              ? make_identity_dataset(config.identity_seed, config.synth_frames, config.synth_frame_seed)
              : assets.images;
      SynthTrainingOptions opts = *config.synth_train;
      opts.on_epoch = [&](int epoch, double mse) {
        emit(log, "synthesizer epoch " + std::to_string(epoch) + " train MSE " + fmt("%.2f", mse));
      };
      Synthesizer s = train_synthesizer(aligned_crops(frames, config.crop_size), opts);
      fs::create_directories(path.parent_path());
      s.save(path);
      emit(log, "trained synthesizer: held-out SSIM " + fmt("%.3f", s.metadata().val_ssim) + ", saved " + path.string());
      assets.synthesizer = std::move(s);
    } else {
      throw Error("synthesizer checkpoint " + path.string() + " does not exist and training is disabled");
    }
  }
  return assets;
}

// ---------------------------------------------------------------- table

void ResultTable::add(EvaluationRecord r) {
  auto key = std::make_tuple(r.image_id, r.extractor, r.attack, r.degradation);
  if (index_.count(key))
    throw Error("duplicate result cell (" + r.image_id + ", " + r.extractor + ", " + r.attack + ", " + r.degradation + ")");
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(r));
}

std::map<CellKey, CellMean> ResultTable::means() const {
  std::map<CellKey, CellMean> out;
  for (const auto& r : records_) {
    CellMean& m = out[{r.extractor, r.attack, r.degradation}];
    m.nme += r.nme;
    m.ssim_i += r.ssim_i;
    m.ssim_w += r.ssim_w;
    ++m.count;
  }
  for (auto& [k, m] : out) {
    const double n = static_cast<double>(m.count);
    m.nme /= n;
    m.ssim_i /= n;
    m.ssim_w /= n;
  }
  return out;
}

CellMean ResultTable::mean(const std::string& extractor, const std::string& attack, const std::string& degradation) const {
  CellMean m;
  for (const auto& r : records_)
    if (r.extractor == extractor && r.attack == attack && r.degradation == degradation) {
      m.nme += r.nme;
      m.ssim_i += r.ssim_i;
      m.ssim_w += r.ssim_w;
      ++m.count;
    }
  if (m.count == 0) throw Error("no records for cell (" + extractor + ", " + attack + ", " + degradation + ")");
  const double n = static_cast<double>(m.count);
  m.nme /= n;
  m.ssim_i /= n;
  m.ssim_w /= n;
  return m;
}

std::string attack_label(const std::string& attack_name, const std::string& source) { return attack_name + "@" + source; }

// ---------------------------------------------------------------- experiment

namespace {

struct Crafted {
  std::vector<Image> images;
  std::vector<std::string> errors;  // empty string = success
};

Crafted craft_all(const Extractor& source, const std::vector<Image>& images, const AttackConfig& config, int jobs) {
  Crafted out;
  out.images.resize(images.size());
  out.errors.resize(images.size());
  const long n = static_cast<long>(images.size());
#pragma omp parallel for schedule(dynamic) num_threads(jobs)
  for (long i = 0; i < n; ++i) {
    try {
      AttackConfig c = config;
      c.seed = mix_seed(config.seed, static_cast<std::uint64_t>(i));
      out.images[i] = quantize_within(run_attack(source, images[i], c).adversarial, images[i], budget_radius(config));
    } catch (const std::exception& e) {
      out.errors[i] = e.what();
    }
  }
  return out;
}

struct Context {
  const ExperimentConfig& config;
  const ExperimentAssets& assets;
  std::vector<Image> originals;
  std::vector<Roi> rois;
  std::vector<std::vector<LandmarkSet>> clean_pred;  // [target][image]
  const LogFn& log;
};

// Degrades every successfully crafted image; per-image errors are merged into `errors`.
std::vector<Image> degrade(const Context& ctx, const Crafted& crafted, const Degradation& d, std::vector<std::string>& errors,
                           std::map<std::string, std::string>& metadata) {
  const std::size_t n = crafted.images.size();
  errors = crafted.errors;
  std::vector<Image> out(n);
  if (d.kind == DegradationKind::None) return crafted.images;
  if (d.is_video()) {
    std::vector<Image> clip;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < n; ++i)
      if (errors[i].empty()) {
        clip.push_back(crafted.images[i]);
        where.push_back(i);
      }
    if (clip.empty()) return out;
    try {
      VideoRoundtrip r = video_roundtrip(clip, d.kind == DegradationKind::VideoC ? VideoChain::C : VideoChain::C2,
                                         ctx.config.video);
      metadata["video_backend"] = r.backend;
      for (std::size_t k = 0; k < where.size(); ++k) out[where[k]] = std::move(r.frames[k]);
    } catch (const std::exception& e) {
      for (std::size_t i : where) errors[i] = std::string("video round trip failed: ") + e.what();
    }
    return out;
  }
  const long ln = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic) num_threads(ctx.config.jobs)
  for (long i = 0; i < ln; ++i) {
    if (!errors[i].empty()) continue;
    try {
      out[i] = apply_degradation(crafted.images[i], d, ctx.config.video);
    } catch (const std::exception& e) {
      errors[i] = std::string("degradation failed: ") + e.what();
    }
  }
  return out;
}

void evaluate_stream(const Context& ctx, const std::string& label, const Crafted& crafted, ResultTable& table) {
  const auto& images = ctx.assets.images;
  const long n = static_cast<long>(images.size());
  for (const Degradation& d : ctx.config.degradations) {
    std::vector<std::string> errors;
    const std::vector<Image> fed = degrade(ctx, crafted, d, errors, table.metadata);
    for (std::size_t t = 0; t < ctx.assets.extractors.size(); ++t) {
      const Extractor& target = ctx.assets.extractors[t];
      std::vector<std::optional<EvaluationRecord>> rows(images.size());
      std::vector<std::string> row_errors(images.size());
#pragma omp parallel for schedule(dynamic) num_threads(ctx.config.jobs)
      for (long i = 0; i < n; ++i) {
        if (!errors[i].empty()) {
          row_errors[i] = errors[i];
          continue;
        }
        try {
          const LandmarkSet& gt = images.records[i].landmarks;
          EvaluationRecord r{images.records[i].id, target.id(), label, d.tag(), 0.0,
                             std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
          const LandmarkSet pred = predict_landmarks(target, fed[i], gt.schema);
          r.nme = nme(pred, gt);
          if (ctx.config.compute_ssim_i) r.ssim_i = mask_ssim(fed[i], ctx.originals[i], ctx.rois[i]);
          if (ctx.config.compute_ssim_w && ctx.assets.synthesizer)
            r.ssim_w = ssim_w_pipeline(fed[i], ctx.clean_pred[t][i], pred, *ctx.assets.synthesizer);
          rows[i] = std::move(r);
        } catch (const std::exception& e) {
          row_errors[i] = e.what();
        }
      }
      for (long i = 0; i < n; ++i) {
        if (rows[i]) table.add(std::move(*rows[i]));
        else
          table.add_failure({images.records[i].id + "," + target.id() + "," + label + "," + d.tag(), row_errors[i]});
      }
    }
  }
}

Context make_context(const ExperimentConfig& config, const ExperimentAssets& assets, const LogFn& log) {
  Context ctx{config, assets, {}, {}, {}, log};
  const auto& images = assets.images;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ctx.originals.push_back(images.load_image(i));
    ctx.rois.push_back(landmark_roi(images.records[i].landmarks, config.roi_margin, ctx.originals.back().size()));
  }
  ctx.clean_pred.resize(assets.extractors.size());
  for (std::size_t t = 0; t < assets.extractors.size(); ++t) {
    ctx.clean_pred[t].resize(images.size());
    const long n = static_cast<long>(images.size());
#pragma omp parallel for schedule(dynamic) num_threads(config.jobs)
    for (long i = 0; i < n; ++i)
      ctx.clean_pred[t][i] = predict_landmarks(assets.extractors[t], ctx.originals[i], images.schema);
  }
  return ctx;
}

}  // namespace

std::vector<Image> craft_batch(const Extractor& source, const std::vector<Image>& images, const AttackConfig& config,
                               int jobs) {
  Crafted c = craft_all(source, images, config, jobs);
  for (std::size_t i = 0; i < images.size(); ++i)
    if (!c.errors[i].empty()) throw Error("attack failed on image " + std::to_string(i) + ": " + c.errors[i]);
  return std::move(c.images);
}

ResultTable run_experiment(const ExperimentConfig& config, const ExperimentAssets& assets, const LogFn& log) {
  config.validate();
  if (assets.extractors.empty()) throw Error("run_experiment: no extractors");
  if (assets.images.empty()) throw Error("run_experiment: no evaluation images");
  const Context ctx = make_context(config, assets, log);
  ResultTable table;
  table.metadata["images"] = std::to_string(assets.images.size());

  Crafted clean{ctx.originals, std::vector<std::string>(ctx.originals.size())};
  evaluate_stream(ctx, "none", clean, table);
  emit(log, "evaluated clean images");

  for (const NamedAttack& attack : config.attacks)
    for (const Extractor& source : assets.extractors) {
      const auto t0 = std::chrono::steady_clock::now();
      AttackConfig c = attack.config;
      c.seed = mix_seed(config.seed, attack.config.seed);
      const Crafted crafted = craft_all(source, ctx.originals, c, config.jobs);
      const std::string label = attack_label(attack.name, source.id());
      evaluate_stream(ctx, label, crafted, table);
      const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      emit(log, "evaluated " + label + " (" + fmt("%.1f", secs) + " s)");
    }
  return table;
}

TransferMatrix transfer_matrix(const ResultTable& table, const std::string& attack_name,
                               const std::vector<std::string>& extractors, const std::string& degradation) {
  TransferMatrix m;
  m.sources = extractors;
  m.targets = extractors;
  const auto means = table.means();
  std::vector<std::string> missing;
  for (const auto& s : extractors) {
    std::vector<double> row_nme, row_w;
    for (const auto& t : extractors) {
      auto it = means.find({t, attack_label(attack_name, s), degradation});
      if (it == means.end()) {
        missing.push_back(s + "->" + t);
        row_nme.push_back(std::numeric_limits<double>::quiet_NaN());
        row_w.push_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        row_nme.push_back(it->second.nme);
        row_w.push_back(it->second.ssim_w);
      }
    }
    m.nme.push_back(std::move(row_nme));
    m.ssim_w.push_back(std::move(row_w));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
    throw Error("transfer matrix for " + attack_name + " (" + degradation + ") is missing cells: " + list);
  }
  return m;
}

// ---------------------------------------------------------------- sweep

std::string to_string(SweepAxis axis) { return axis == SweepAxis::Alpha ? "alpha" : "max_iters"; }

SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "alpha") return SweepAxis::Alpha;
  if (s == "max_iters") return SweepAxis::MaxIters;
  throw Error("unknown sweep axis '" + s + "' (expected alpha or max_iters)");
}

std::vector<SweepPoint> ablation_sweep(const ExperimentConfig& config, const ExperimentAssets& assets,
                                       const AttackConfig& base, SweepAxis axis, const std::vector<double>& values,
                                       const LogFn& log) {
  if (values.size() < 2) throw Error("ablation_sweep needs at least two values");
  const Context ctx = make_context(config, assets, log);
  const auto& images = assets.images;
  std::vector<SweepPoint> out;
  for (std::size_t t = 0; t < assets.extractors.size(); ++t) {
    const Extractor& e = assets.extractors[t];
    for (double v : values) {
      AttackConfig c = base;
      c.seed = mix_seed(config.seed, base.seed);
      if (axis == SweepAxis::Alpha) c.alpha = v;
      else {
        if (v < 0 || v != std::floor(v)) throw Error("max_iters sweep values must be non-negative integers");
        c.max_iters = static_cast<int>(v);
      }
      c.validate();
      const std::vector<Image> adv = craft_batch(e, ctx.originals, c, config.jobs);
      SweepPoint p{e.id(), v, 0.0, 0.0, 0.0};
      const double n = static_cast<double>(images.size());
      for (std::size_t i = 0; i < images.size(); ++i) {
        const LandmarkSet& gt = images.records[i].landmarks;
        const LandmarkSet pred = predict_landmarks(e, adv[i], gt.schema);
        p.nme += nme(pred, gt) / n;
        p.ssim_i += mask_ssim(adv[i], ctx.originals[i], ctx.rois[i]) / n;
        p.ssim_w += assets.synthesizer ? ssim_w_pipeline(adv[i], ctx.clean_pred[t][i], pred, *assets.synthesizer) / n
                                       : std::numeric_limits<double>::quiet_NaN();
      }
      emit(log, e.id() + " " + to_string(axis) + "=" + fmt("%g", v) + " NME " + fmt("%.4f", p.nme));
      out.push_back(p);
    }
  }
  return out;
}

// ---------------------------------------------------------------- report

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << text;
  if (!f) throw Error("failed writing " + path.string());
}

void prepare_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("output directory " + dir.string() + " is not writable");
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::string results_csv(const ResultTable& table) {
  std::string out = "# generated " + timestamp() + "\nimage_id,extractor,attack,degradation,nme,ssim_i,ssim_w\n";
  for (const auto& r : table.records())
    out += r.image_id + "," + r.extractor + "," + r.attack + "," + r.degradation + "," + num(r.nme) + "," +
           num(r.ssim_i) + "," + num(r.ssim_w) + "\n";
  return out;
}

ResultTable parse_results_csv(const std::string& text) {
  ResultTable table;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line.rfind("image_id,extractor,attack,degradation,nme,ssim_i,ssim_w", 0) != 0)
        throw DataError("results CSV: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    const auto f = split_csv_line(line);
    if (f.size() != 7) throw DataError("results CSV line " + std::to_string(line_no) + ": expected 7 fields");
    try {
      table.add({f[0], f[1], f[2], f[3], std::stod(f[4]), std::stod(f[5]), std::stod(f[6])});
    } catch (const std::invalid_argument&) {
      throw DataError("results CSV line " + std::to_string(line_no) + ": bad number");
    }
  }
  if (!header) throw DataError("results CSV has no header");
  return table;
}

std::vector<fs::path> emit_report(const ResultTable& table, const fs::path& out_dir) {
  if (table.empty()) throw Error("emit_report: empty result table");
  prepare_dir(out_dir);
  std::vector<fs::path> written;

  const fs::path csv = out_dir / "results.csv";
  write_text(csv, results_csv(table));
  written.push_back(csv);

  json cells = json::array();
  const auto means = table.means();
  for (const auto& [key, m] : means)
    cells.push_back({{"extractor", std::get<0>(key)},
                     {"attack", std::get<1>(key)},
                     {"degradation", std::get<2>(key)},
                     {"count", m.count},
                     {"nme", number_or_null(m.nme)},
                     {"ssim_i", number_or_null(m.ssim_i)},
                     {"ssim_w", number_or_null(m.ssim_w)}});
  json failures = json::array();
  for (const auto& f : table.failures()) failures.push_back({{"cell", f.cell}, {"error", f.message}});
  const json summary = {{"records", table.size()}, {"cells", cells}, {"failures", failures}, {"metadata", table.metadata}};
  const fs::path summary_path = out_dir / "summary.json";
  write_text(summary_path, summary.dump(2) + "\n");
  written.push_back(summary_path);

  // panels: per target extractor, metric against degradation, one line per white-box attack
  std::vector<std::string> extractors, degradations, attacks;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& r : table.records()) {
    remember(extractors, r.extractor);
    remember(degradations, r.degradation);
    remember(attacks, r.attack);
  }
  struct Metric {
    const char* key;
    const char* label;
    double CellMean::*field;
  };
  const Metric metrics[] = {{"nme", "NME", &CellMean::nme},
                            {"ssim_i", "SSIM_I", &CellMean::ssim_i},
                            {"ssim_w", "SSIM_W", &CellMean::ssim_w}};
  for (const auto& target : extractors)
    for (const Metric& metric : metrics) {
      LinePlot plot{metric.label + std::string(" on ") + target, "degradation", metric.label, degradations, {}};
      for (const auto& attack : attacks) {
        const auto at = attack.find('@');
        if (attack != "none" && (at == std::string::npos || attack.substr(at + 1) != target)) continue;
        PlotSeries s{attack == "none" ? "clean" : attack.substr(0, at), {}};
        for (const auto& d : degradations) {
          auto it = means.find({target, attack, d});
          s.y.push_back(it == means.end() ? std::numeric_limits<double>::quiet_NaN() : it->second.*metric.field);
        }
        plot.series.push_back(std::move(s));
      }
      const fs::path p = out_dir / ("plot_" + std::string(metric.key) + "_" + target + ".svg");
      write_svg(plot, p);
      written.push_back(p);
    }
  return written;
}

std::vector<fs::path> emit_sweep(const std::vector<SweepPoint>& points, SweepAxis axis, const fs::path& out_dir) {
  if (points.empty()) throw Error("emit_sweep: no points");
  prepare_dir(out_dir);
  std::vector<fs::path> written;
  std::string csv = "# generated " + timestamp() + "\nextractor," + to_string(axis) + ",nme,ssim_i,ssim_w\n";
  std::vector<std::string> extractors;
  std::vector<double> values;
  for (const auto& p : points) {
    csv += p.extractor + "," + num(p.value) + "," + num(p.nme) + "," + num(p.ssim_i) + "," + num(p.ssim_w) + "\n";
    if (std::find(extractors.begin(), extractors.end(), p.extractor) == extractors.end()) extractors.push_back(p.extractor);
    if (std::find(values.begin(), values.end(), p.value) == values.end()) values.push_back(p.value);
  }
  const fs::path csv_path = out_dir / ("sweep_" + to_string(axis) + ".csv");
  write_text(csv_path, csv);
  written.push_back(csv_path);

  std::vector<std::string> ticks;
  for (double v : values) ticks.push_back(fmt("%g", v));
  const std::pair<const char*, double SweepPoint::*> metrics[] = {
      {"nme", &SweepPoint::nme}, {"ssim_i", &SweepPoint::ssim_i}, {"ssim_w", &SweepPoint::ssim_w}};
  for (const auto& [key, field] : metrics) {
    LinePlot plot{std::string(key) + " vs " + to_string(axis), to_string(axis), key, ticks, {}};
    for (const auto& e : extractors) {
      PlotSeries s{e, std::vector<double>(values.size(), std::numeric_limits<double>::quiet_NaN())};
      for (const auto& p : points)
        if (p.extractor == e) s.y[std::find(values.begin(), values.end(), p.value) - values.begin()] = p.*field;
      plot.series.push_back(std::move(s));
    }
    const fs::path p = out_dir / ("sweep_" + to_string(axis) + "_" + key + ".svg");
    write_svg(plot, p);
    written.push_back(p);
  }
  return written;
}

fs::path write_manifest(const fs::path& out_dir) {
  prepare_dir(out_dir);
  const fs::path manifest = out_dir / "manifest.json";
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(out_dir))
    if (entry.is_regular_file() && entry.path() != manifest) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  json list = json::array();
  for (const auto& f : files)
    list.push_back({{"path", fs::relative(f, out_dir).generic_string()},
                    {"bytes", fs::file_size(f)},
                    {"sha256", sha256_file(f)}});
  write_text(manifest, json{{"files", list}}.dump(2) + "\n");
  return manifest;
}

}  // namespace lmb
