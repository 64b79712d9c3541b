#include "lmbreak/attacks.hpp"

#include <algorithm>
#include <cmath>

#include "lmbreak/error.hpp"
#include "lmbreak/loss.hpp"
#include "lmbreak/rng.hpp"

namespace lmb {

std::string to_string(AttackVariant v) {
  switch (v) {
    case AttackVariant::LB: return "LB";
    case AttackVariant::FGSM: return "FGSM";
    case AttackVariant::IFGSM: return "IFGSM";
    case AttackVariant::LBTrans: return "LB_trans";
    case AttackVariant::LBMix: return "LB_mix";
  }
  return "?";
}

AttackVariant parse_attack_variant(const std::string& s) {
  for (auto v : {AttackVariant::LB, AttackVariant::FGSM, AttackVariant::IFGSM, AttackVariant::LBTrans,
                 AttackVariant::LBMix})
    if (to_string(v) == s) return v;
  throw Error("unknown attack variant '" + s + "'");
}

std::string to_string(BudgetMode m) { return m == BudgetMode::Project ? "project" : "literal"; }

BudgetMode parse_budget_mode(const std::string& s) {
  if (s == "project") return BudgetMode::Project;
  if (s == "literal") return BudgetMode::Literal;
  throw Error("unknown budget mode '" + s + "'");
}

std::string to_string(AttackStatus s) {
  switch (s) {
    case AttackStatus::Completed: return "completed";
    case AttackStatus::BudgetExceeded: return "budget exceeded";
    case AttackStatus::FlatGradient: return "flat gradient";
  }
  return "?";
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0)) throw Error("attack epsilon must be >= 0");
  if (!(alpha > 0.0)) throw Error("attack alpha must be > 0");
  if (max_iters < 0) throw Error("attack max_iters must be >= 0");
  if (!(momentum_decay >= 0.0 && momentum_decay <= 1.0)) throw Error("momentum decay must lie in [0, 1]");
  if (!(trans_scale_min > 0.0 && trans_scale_min <= trans_scale_max && trans_scale_max <= 1.0))
    throw Error("LB_trans scale range must satisfy 0 < min <= max <= 1");
}

nlohmann::json to_json(const AttackConfig& c) {
  return {{"epsilon", c.epsilon},     {"alpha", c.alpha},
          {"max_iters", c.max_iters}, {"momentum_decay", c.momentum_decay},
          {"variant", to_string(c.variant)}, {"budget_mode", to_string(c.budget_mode)},
          {"seed", c.seed}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig c;
  try {
    c.epsilon = j.value("epsilon", c.epsilon);
    c.alpha = j.value("alpha", c.alpha);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.momentum_decay = j.value("momentum_decay", c.momentum_decay);
    c.variant = parse_attack_variant(j.value("variant", to_string(c.variant)));
    c.budget_mode = parse_budget_mode(j.value("budget_mode", to_string(c.budget_mode)));
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed attack config: ") + e.what());
  }
  c.validate();
  return c;
}

namespace {

// Bounds of the closed ball around o, nudged inward so |bound - o| <= radius
// holds in floating point.
std::pair<double, double> ball_bounds(double o, double radius) {
  double lo = o - radius, hi = o + radius;
  while (o - lo > radius) lo = std::nextafter(lo, o);
  while (hi - o > radius) hi = std::nextafter(hi, o);
  return {lo, hi};
}

void clamp_to_ball(Image& candidate, const Image& origin, double radius) {
  auto c = candidate.values();
  auto o = origin.values();
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto [lo, hi] = ball_bounds(o[i], radius);
    c[i] = std::clamp(std::clamp(c[i], lo, hi), 0.0, 255.0);
  }
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

double l1_norm(const Image& g) {
  double s = 0.0;
  for (double v : g.values()) s += std::abs(v);
  return s;
}

enum class StepRule { Momentum, Raw, Alternate };

// Computes (loss, dL/dI) at the current iterate.
using GradientFn = std::function<InputGradient(const Image&, int)>;

AttackResult sign_gradient_loop(const Extractor& model, const Image& image, const AttackConfig& config,
                                const AttackOptions& options, StepRule rule, double step, int iterations,
                                const GradientFn& gradient) {
  config.validate();
  AttackResult res;
  res.config = config;
  res.adversarial = image;
  const HeatmapSet ref = model.forward(image, options.precision);

  OptimizerState state{Image(image.height(), image.width(), image.channels()), 0};
  while (state.t < iterations) {
    InputGradient g = gradient(res.adversarial, state.t);
    res.loss_trace.push_back(g.loss);
    const double l1 = l1_norm(g.grad);
    if (!(l1 > 0.0)) {
      res.status = AttackStatus::FlatGradient;
      break;
    }
    auto m = state.momentum.values();
    auto gv = g.grad.values();
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = config.momentum_decay * m[i] + gv[i] / l1;
    const bool raw = rule == StepRule::Raw || (rule == StepRule::Alternate && state.t % 2 == 0);
    Image next = res.adversarial;
    auto nv = next.values();
    for (std::size_t i = 0; i < nv.size(); ++i) {
      const double dir = raw ? sign(gv[i]) : sign(m[i]);
      nv[i] = std::clamp(nv[i] - step * dir, 0.0, 255.0);
    }
    if (config.budget_mode == BudgetMode::Project) clamp_to_ball(next, image, config.epsilon);
    else clamp_to_ball(next, image, config.epsilon + step);
    res.adversarial = std::move(next);
    ++state.t;
    if (options.keep_iterates) res.iterates.push_back(res.adversarial);
    if (config.budget_mode == BudgetMode::Literal && linf_distance(res.adversarial, image) > config.epsilon) {
      res.status = AttackStatus::BudgetExceeded;
      break;
    }
  }
  res.iterations = state.t;
  res.linf = linf_distance(res.adversarial, image);
  res.final_loss = heatmap_cosine_loss(model.forward(res.adversarial, options.precision), ref);
  return res;
}

GradientFn plain_gradient(const Extractor& model, const Image& image, const AttackOptions& options) {
  auto ref = std::make_shared<HeatmapSet>(model.forward(image, options.precision));
  return [&model, ref, precision = options.precision](const Image& current, int) {
    return model.input_gradient(current, *ref, precision);
  };
}

}  // namespace

Image quantize_within(const Image& candidate, const Image& origin, double radius) {
  if (!candidate.same_shape(origin)) throw ShapeError("quantize_within: shape mismatch");
  if (!(radius >= 0.0)) throw Error("quantize_within: negative radius");
  Image out = candidate;
  auto v = out.values();
  auto o = origin.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double lo = std::max(0.0, std::ceil(o[i] - radius));
    const double hi = std::min(255.0, std::floor(o[i] + radius));
    v[i] = std::clamp(std::round(v[i]), lo, hi);
  }
  return out;
}

double budget_radius(const AttackConfig& config) {
  if (config.variant == AttackVariant::FGSM) return config.epsilon;
  return config.budget_mode == BudgetMode::Literal ? config.epsilon + config.alpha : config.epsilon;
}

Image project_linf(const Image& candidate, const Image& origin, double epsilon) {
  if (!candidate.same_shape(origin)) throw ShapeError("project_linf: shape mismatch");
  if (!(epsilon >= 0.0)) throw Error("project_linf: epsilon must be >= 0");
  Image out = candidate;
  clamp_to_ball(out, origin, epsilon);
  return out;
}

AttackResult mifgsm_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                           const AttackOptions& options) {
  return sign_gradient_loop(model, image, config, options, StepRule::Momentum, config.alpha, config.max_iters,
                            plain_gradient(model, image, options));
}

AttackResult fgsm_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                         const AttackOptions& options) {
  AttackConfig c = config;
  c.validate();
  if (c.epsilon == 0.0) {
    AttackResult res;
    res.config = c;
    res.adversarial = image;
    const HeatmapSet ref = model.forward(image, options.precision);
    res.final_loss = heatmap_cosine_loss(ref, ref);
    res.loss_trace.push_back(res.final_loss);
    return res;
  }
  // One step of size epsilon never needs the literal slack; projecting keeps
  // rounding from pushing it past epsilon.
  c.alpha = c.epsilon;
  c.budget_mode = BudgetMode::Project;
  AttackResult res = sign_gradient_loop(model, image, c, options, StepRule::Raw, c.epsilon, 1,
                                        plain_gradient(model, image, options));
  res.config.budget_mode = config.budget_mode;
  return res;
}

AttackResult ifgsm_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                          const AttackOptions& options) {
  return sign_gradient_loop(model, image, config, options, StepRule::Raw, config.alpha, config.max_iters,
                            plain_gradient(model, image, options));
}

AttackResult lbmix_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                          const AttackOptions& options) {
  return sign_gradient_loop(model, image, config, options, StepRule::Alternate, config.alpha, config.max_iters,
                            plain_gradient(model, image, options));
}

AttackResult lbtrans_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                            const AttackOptions& options) {
  config.validate();
  auto rng = std::make_shared<Rng>(mix_seed(config.seed, 0x7a5));
  GradientFn gradient = [&model, &image, &config, rng, precision = options.precision](const Image& current, int) {
    const ResizePadTransform tf =
        ResizePadTransform::draw(image.size(), config.trans_scale_min, config.trans_scale_max, *rng);
    const HeatmapSet ref = model.forward(tf.apply(image), precision);
    InputGradient g = model.input_gradient(tf.apply(current), ref, precision);
    g.grad = tf.adjoint(g.grad);
    return g;
  };
  return sign_gradient_loop(model, image, config, options, StepRule::Momentum, config.alpha, config.max_iters,
                            gradient);
}

AttackResult run_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                        const AttackOptions& options) {
  switch (config.variant) {
    case AttackVariant::LB: return mifgsm_attack(model, image, config, options);
    case AttackVariant::FGSM: return fgsm_attack(model, image, config, options);
    case AttackVariant::IFGSM: return ifgsm_attack(model, image, config, options);
    case AttackVariant::LBTrans: return lbtrans_attack(model, image, config, options);
    case AttackVariant::LBMix: return lbmix_attack(model, image, config, options);
  }
  throw Error("unhandled attack variant");
}

ResizePadTransform ResizePadTransform::draw(ImageSize size, double scale_min, double scale_max, Rng& rng) {
  const double s = scale_min == scale_max ? scale_min : rng.uniform(scale_min, scale_max);
  ResizePadTransform t;
  t.source = size;
  t.scaled = {std::clamp(static_cast<int>(std::lround(s * size.height)), 1, size.height),
              std::clamp(static_cast<int>(std::lround(s * size.width)), 1, size.width)};
  const int free_y = size.height - t.scaled.height, free_x = size.width - t.scaled.width;
  t.offset_y = free_y > 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(free_y) + 1)) : 0;
  t.offset_x = free_x > 0 ? static_cast<int>(rng.below(static_cast<std::uint64_t>(free_x) + 1)) : 0;
  return t;
}

namespace {

struct Tap {
  int i0, i1;
  double w0, w1;
};

Tap bilinear_tap(int out_index, int out_extent, int in_extent) {
  double src = (out_index + 0.5) * static_cast<double>(in_extent) / out_extent - 0.5;
  src = std::clamp(src, 0.0, static_cast<double>(in_extent - 1));
  const int i0 = static_cast<int>(std::floor(src));
  const int i1 = std::min(i0 + 1, in_extent - 1);
  const double f = src - i0;
  return {i0, i1, 1.0 - f, f};
}

}  // namespace

Image ResizePadTransform::apply(const Image& image) const {
  if (image.size() != source) throw ShapeError("resize-pad: image size differs from the drawn transform");
  Image out(source.height, source.width, image.channels());
  for (int y = 0; y < scaled.height; ++y) {
    const Tap ty = bilinear_tap(y, scaled.height, source.height);
    for (int x = 0; x < scaled.width; ++x) {
      const Tap tx = bilinear_tap(x, scaled.width, source.width);
      for (int c = 0; c < image.channels(); ++c) {
        const double v = ty.w0 * (tx.w0 * image.at(c, ty.i0, tx.i0) + tx.w1 * image.at(c, ty.i0, tx.i1)) +
                         ty.w1 * (tx.w0 * image.at(c, ty.i1, tx.i0) + tx.w1 * image.at(c, ty.i1, tx.i1));
        out.at(c, y + offset_y, x + offset_x) = v;
      }
    }
  }
  return out;
}

Image ResizePadTransform::adjoint(const Image& grad) const {
  if (grad.size() != source) throw ShapeError("resize-pad adjoint: gradient size mismatch");
  Image out(source.height, source.width, grad.channels());
  for (int y = 0; y < scaled.height; ++y) {
    const Tap ty = bilinear_tap(y, scaled.height, source.height);
    for (int x = 0; x < scaled.width; ++x) {
      const Tap tx = bilinear_tap(x, scaled.width, source.width);
      for (int c = 0; c < grad.channels(); ++c) {
        const double g = grad.at(c, y + offset_y, x + offset_x);
        out.at(c, ty.i0, tx.i0) += ty.w0 * tx.w0 * g;
        out.at(c, ty.i0, tx.i1) += ty.w0 * tx.w1 * g;
        out.at(c, ty.i1, tx.i0) += ty.w1 * tx.w0 * g;
        out.at(c, ty.i1, tx.i1) += ty.w1 * tx.w1 * g;
      }
    }
  }
  return out;
}

}  // namespace lmb
