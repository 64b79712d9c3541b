#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lmbreak/error.hpp"
#include "lmbreak/harness.hpp"
#include "lmbreak/hash.hpp"
#include "lmbreak/metrics.hpp"

using namespace lmb;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  ExperimentConfig config;
  ExperimentAssets assets;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.config.crop_size = 32;
    x.config.image_count = 3;
    for (Architecture a : all_architectures()) {
      x.config.extractors.push_back({a, "unused.ckpt", std::nullopt});
      ExtractorSpec spec;
      spec.architecture = a;
      x.assets.extractors.push_back(Extractor::initialize(spec, 40 + static_cast<int>(a)));
    }
    AttackConfig lb;
    lb.max_iters = 2;
    lb.alpha = 3;
    AttackConfig fgsm;
    fgsm.variant = AttackVariant::FGSM;
    fgsm.epsilon = 8;
    x.config.attacks = {{"LB", lb}, {"FGSM", fgsm}};
    x.config.degradations = {Degradation::parse("none"), Degradation::parse("jpeg75"), Degradation::parse("videoC")};
    x.assets.synthesizer.emplace(32, Synthesizer::build_graph(32)->initial_parameters(3));
    x.assets.images = make_identity_dataset(777, 3, 5);
    return x;
  }();
  return f;
}

const ResultTable& table() {
  static const ResultTable t = run_experiment(fixture().config, fixture().assets);
  return t;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("lmb_harness_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string without_comments(const std::string& csv) {
  std::string out, line;
  std::istringstream in(csv);
  while (std::getline(in, line))
    if (line.empty() || line[0] != '#') out += line + "\n";
  return out;
}

}  // namespace

TEST_CASE("experiment configs round-trip through JSON") {
  ExperimentConfig c = fixture().config;
  c.seed = 12;
  c.jobs = 2;
  c.roi_margin = 0.1;
  c.compute_ssim_w = false;
  c.video.command_c = "enc {in_dir} {out_file}";
  c.extractors[1].train = TrainingOptions{};
  c.extractors[1].train->epochs = 4;
  const nlohmann::json j = to_json(c);
  const ExperimentConfig back = experiment_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(back.attacks.size() == 2);
  CHECK(back.attacks[1].config == c.attacks[1].config);
  CHECK(back.degradations == c.degradations);
  CHECK(back.extractors[1].train->epochs == 4);
  CHECK_FALSE(back.extractors[0].train.has_value());
}

TEST_CASE("experiment config defaults and validation") {
  const ExperimentConfig d = experiment_config_from_json(nlohmann::json::object());
  CHECK(d.extractors.size() == 3);
  CHECK(d.attacks.size() == 1);
  CHECK(d.degradations.size() == 1);
  auto rejects = [](nlohmann::json j) { CHECK_THROWS_AS(experiment_config_from_json(j), Error); };
  rejects({{"jobs", 0}});
  rejects({{"degradations", {"jpeg0"}}});
  rejects({{"degradations", nlohmann::json::array()}});
  rejects({{"attacks", {{{"name", "a"}}, {{"name", "a"}}}}});
  rejects({{"attacks", {{{"name", "x@y"}}}}});
  rejects({{"attacks", {{{"name", "none"}}}}});
  rejects({{"attacks", {{{"name", "a"}, {"epsilon", -3}}}}});
  rejects({{"extractors", {{{"architecture", "hourglass_mini"}}, {{"architecture", "hourglass_mini"}}}}});
  rejects({{"extractors", {{{"architecture", "vgg"}}}}});
  rejects({{"metrics", {{"roi_margin", -1}}}});
  rejects({{"synthesizer", {{"crop_size", 30}}}});
  rejects({{"images", {{"count", 0}}}});
}

TEST_CASE("the record count covers every image, target, degradation and stream") {
  const ResultTable& t = table();
  // 3 images x 3 targets x 3 degradations x (clean + 2 attacks x 3 sources)
  CHECK(t.size() == 3u * 3 * 3 * 7);
  CHECK(t.failures().empty());
  CHECK(t.metadata.at("images") == "3");
  CHECK(t.metadata.count("video_backend") == 1);
  for (const auto& [key, m] : t.means()) CHECK(m.count == 3);
}

TEST_CASE("clean rows equal the plain evaluation of each extractor") {
  const Fixture& f = fixture();
  for (const Extractor& e : f.assets.extractors) {
    const CellMean m = table().mean(e.id(), "none", "none");
    CHECK(m.nme == doctest::Approx(evaluate_extractor(e, f.assets.images)).epsilon(1e-12));
    CHECK(m.ssim_i == 1.0);
    CHECK(m.ssim_w == 1.0);
  }
}

TEST_CASE("attacked images stay within budget and agree when re-read from PNG") {
  const Fixture& f = fixture();
  const Extractor& src = f.assets.extractors[0];
  const Extractor& tgt = f.assets.extractors[2];
  AttackConfig c = f.config.attacks[0].config;
  c.seed = mix_seed(f.config.seed, c.seed);
  std::vector<Image> originals;
  for (std::size_t i = 0; i < f.assets.images.size(); ++i) originals.push_back(f.assets.images.load_image(i));
  const std::vector<Image> adv = craft_batch(src, originals, c, 1);
  const fs::path dir = scratch_dir("png");
  fs::create_directories(dir);
  double nme_sum = 0.0, ssim_i_sum = 0.0, ssim_w_sum = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    CHECK(linf_distance(adv[i], originals[i]) <= c.epsilon);
    const fs::path p = dir / ("adv_" + std::to_string(i) + ".png");
    save_png(adv[i], p);
    const Image back = load_png(p);
    CHECK(back == adv[i]);
    const LandmarkSet& gt = f.assets.images.records[i].landmarks;
    const LandmarkSet pred = predict_landmarks(tgt, back, gt.schema);
    nme_sum += nme(pred, gt);
    ssim_i_sum += mask_ssim(back, originals[i], landmark_roi(gt, f.config.roi_margin, back.size()));
    ssim_w_sum += ssim_w_pipeline(back, predict_landmarks(tgt, originals[i], gt.schema), pred, *f.assets.synthesizer);
  }
  const CellMean m = table().mean(tgt.id(), attack_label("LB", src.id()), "none");
  CHECK(m.nme == doctest::Approx(nme_sum / 3).epsilon(1e-12));
  CHECK(m.ssim_i == doctest::Approx(ssim_i_sum / 3).epsilon(1e-12));
  CHECK(m.ssim_w == doctest::Approx(ssim_w_sum / 3).epsilon(1e-12));
  fs::remove_all(dir);
}

TEST_CASE("runs are deterministic up to the timestamp line") {
  const ResultTable again = run_experiment(fixture().config, fixture().assets);
  CHECK(without_comments(results_csv(again)) == without_comments(results_csv(table())));
  ExperimentConfig threaded = fixture().config;
  threaded.jobs = 3;
  CHECK(without_comments(results_csv(run_experiment(threaded, fixture().assets))) ==
        without_comments(results_csv(table())));
}

TEST_CASE("CSV output parses back to the same table") {
  const std::string csv = results_csv(table());
  CHECK(csv.rfind("# generated ", 0) == 0);
  const ResultTable back = parse_results_csv(csv);
  REQUIRE(back.size() == table().size());
  CHECK(without_comments(results_csv(back)) == without_comments(csv));
  // values survive bit-exactly
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back.records()[i].nme == table().records()[i].nme);
    CHECK(back.records()[i].ssim_w == table().records()[i].ssim_w);
  }
  CHECK_THROWS_AS(parse_results_csv("a,b\n1,2\n"), DataError);
  CHECK_THROWS_AS(parse_results_csv("image_id,extractor,attack,degradation,nme,ssim_i,ssim_w\nx,y,z\n"), DataError);
}

TEST_CASE("the result table rejects duplicate cells") {
  ResultTable t;
  t.add({"img", "e", "none", "none", 0.1, 1.0, 1.0});
  CHECK_THROWS_AS(t.add({"img", "e", "none", "none", 0.2, 1.0, 1.0}), Error);
  CHECK_NOTHROW(t.add({"img", "e", "none", "jpeg75", 0.2, 1.0, 1.0}));
  CHECK_THROWS_AS(t.mean("e", "LB@e", "none"), Error);
  t.add({"img2", "e", "none", "none", 0.3, 0.5, 0.25});
  const CellMean m = t.mean("e", "none", "none");
  CHECK(m.count == 2);
  CHECK(m.nme == doctest::Approx(0.2));
  CHECK(m.ssim_w == doctest::Approx(0.625));
}

TEST_CASE("transfer matrix: complete grid, single cell, and missing cells") {
  std::vector<std::string> ids;
  for (const Extractor& e : fixture().assets.extractors) ids.push_back(e.id());
  const TransferMatrix m = transfer_matrix(table(), "LB", ids);
  REQUIRE(m.nme.size() == 3);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t t = 0; t < 3; ++t)
      CHECK(m.nme[s][t] == table().mean(ids[t], attack_label("LB", ids[s]), "none").nme);
  CHECK(transfer_matrix(table(), "FGSM", {ids[1]}, "jpeg75").nme.size() == 1);

  ResultTable partial;
  partial.add({"i", ids[0], attack_label("LB", ids[0]), "none", 0.1, 1, 1});
  try {
    transfer_matrix(partial, "LB", {ids[0], ids[1]});
    FAIL("expected missing cells");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find(ids[0] + "->" + ids[1]) != std::string::npos);
    CHECK(msg.find(ids[1] + "->" + ids[1]) != std::string::npos);
  }
}

TEST_CASE("sweeps: zero iterations is the clean point, every value is reported") {
  const Fixture& f = fixture();
  AttackConfig base = f.config.attacks[0].config;
  const auto iters = ablation_sweep(f.config, f.assets, base, SweepAxis::MaxIters, {0, 1, 2});
  REQUIRE(iters.size() == 9);
  for (const SweepPoint& p : iters)
    if (p.value == 0) {
      CHECK(p.nme == doctest::Approx(table().mean(p.extractor, "none", "none").nme).epsilon(1e-12));
      CHECK(p.ssim_i == 1.0);
      CHECK(p.ssim_w == 1.0);
    }
  const auto alpha = ablation_sweep(f.config, f.assets, base, SweepAxis::Alpha, {0.5, 1, 2});
  CHECK(alpha.size() == 9);
  CHECK_THROWS(ablation_sweep(f.config, f.assets, base, SweepAxis::Alpha, {1}));
  CHECK_THROWS(ablation_sweep(f.config, f.assets, base, SweepAxis::MaxIters, {1, 2.5}));
  CHECK_THROWS(ablation_sweep(f.config, f.assets, base, SweepAxis::Alpha, {1, -1}));
  CHECK(parse_sweep_axis(to_string(SweepAxis::Alpha)) == SweepAxis::Alpha);
  CHECK_THROWS(parse_sweep_axis("epsilon"));

  const fs::path dir = scratch_dir("sweep");
  const auto files = emit_sweep(iters, SweepAxis::MaxIters, dir);
  CHECK(files.size() == 4);
  const std::string csv = read_text(dir / "sweep_max_iters.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2 + 9);
  fs::remove_all(dir);
}

TEST_CASE("report files: CSV rows, JSON means and non-empty plots") {
  const fs::path dir = scratch_dir("report");
  const auto files = emit_report(table(), dir);
  CHECK(files.size() == 2 + 3 * 3);
  const std::string csv = read_text(dir / "results.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(table().size()) + 2);

  const auto summary = nlohmann::json::parse(read_text(dir / "summary.json"));
  CHECK(summary["records"] == table().size());
  const ResultTable parsed = parse_results_csv(csv);
  for (const auto& cell : summary["cells"]) {
    const CellMean m = parsed.mean(cell["extractor"], cell["attack"], cell["degradation"]);
    CHECK(cell["nme"].get<double>() == doctest::Approx(m.nme).epsilon(1e-8));
    CHECK(cell["ssim_w"].get<double>() == doctest::Approx(m.ssim_w).epsilon(1e-8));
  }
  for (const auto& p : files)
    if (p.extension() == ".svg") {
      const std::string svg = read_text(p);
      CHECK(svg.find("<svg") != std::string::npos);
      CHECK(svg.find("<path d=") != std::string::npos);
    }

  const fs::path manifest = write_manifest(dir);
  const auto mj = nlohmann::json::parse(read_text(manifest));
  CHECK(mj["files"].size() == files.size());
  for (const auto& entry : mj["files"]) {
    const fs::path p = dir / entry["path"].get<std::string>();
    CHECK(entry["sha256"] == sha256_file(p));
    CHECK(entry["bytes"] == fs::file_size(p));
  }
  fs::remove_all(dir);
}

TEST_CASE("SHA-256 known answers") {
  CHECK(sha256_hex(std::string_view("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(sha256_hex(std::string_view("")) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("an unwritable output directory is reported") {
  const fs::path blocker = scratch_dir("blocker");
  std::ofstream(blocker) << "x";
  CHECK_THROWS_AS(emit_report(table(), blocker / "sub"), Error);
  CHECK_THROWS_AS(emit_report(ResultTable{}, scratch_dir("empty")), Error);
  fs::remove(blocker);
}

TEST_CASE("missing checkpoints without a training stanza fail up front") {
  ExperimentConfig c = fixture().config;
  c.output_dir = scratch_dir("assets");
  c.extractors.resize(1);
  c.extractors[0].checkpoint = "nope.ckpt";
  try {
    prepare_assets(c);
    FAIL("expected Error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("nope.ckpt") != std::string::npos);
  }
  fs::remove_all(c.output_dir);
}
