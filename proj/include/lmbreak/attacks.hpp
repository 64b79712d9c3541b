#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <string>
#include <vector>

#include "lmbreak/extractors.hpp"
#include "lmbreak/image.hpp"
#include "lmbreak/rng.hpp"

namespace lmb {

enum class AttackVariant { LB, FGSM, IFGSM, LBTrans, LBMix };
enum class BudgetMode { Project, Literal };

std::string to_string(AttackVariant v);
AttackVariant parse_attack_variant(const std::string& s);
std::string to_string(BudgetMode m);
BudgetMode parse_budget_mode(const std::string& s);

/// Budgets and steps are in [0,255] pixel units.
struct AttackConfig {
  double epsilon = 15.0;
  double alpha = 1.0;
  int max_iters = 20;
  double momentum_decay = 0.5;
  AttackVariant variant = AttackVariant::LB;
  BudgetMode budget_mode = BudgetMode::Project;
  std::uint64_t seed = 0;
  // Random-resize range of LB_trans (not part of the serialized block).
  double trans_scale_min = 0.9;
  double trans_scale_max = 1.0;

  /// Throws Error unless epsilon >= 0, alpha > 0, max_iters >= 0, decay in [0,1].
  void validate() const;
  bool operator==(const AttackConfig&) const = default;
};

/// JSON block with keys epsilon, alpha, max_iters, momentum_decay, variant,
/// budget_mode, seed.
nlohmann::json to_json(const AttackConfig& config);
AttackConfig attack_config_from_json(const nlohmann::json& j);

enum class AttackStatus { Completed, BudgetExceeded, FlatGradient };
std::string to_string(AttackStatus s);

/// Momentum buffer and iteration counter of the sign-gradient optimiser.
struct OptimizerState {
  Image momentum;
  int t = 0;
};

struct AttackResult {
  Image adversarial;
  std::vector<double> loss_trace;  // loss at each iterate before its update
  double final_loss = 0.0;         // loss at the returned image
  int iterations = 0;
  double linf = 0.0;
  AttackStatus status = AttackStatus::Completed;
  AttackConfig config;
  std::vector<Image> iterates;  // I_1..I_n, only when requested
};

struct AttackOptions {
  bool keep_iterates = false;
  Precision precision = Precision::F32;
};

/// Per-pixel clamp into [origin - eps, origin + eps] intersected with [0, 255].
Image project_linf(const Image& candidate, const Image& origin, double epsilon);

/// Rounds to 8-bit values while staying within `radius` of origin and in
/// [0, 255]: each pixel is rounded, then clamped to [ceil(o - r), floor(o + r)].
Image quantize_within(const Image& candidate, const Image& origin, double radius);

/// Largest deviation a config may produce: epsilon, or epsilon + alpha in
/// literal mode.
double budget_radius(const AttackConfig& config);

AttackResult mifgsm_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                           const AttackOptions& options = {});
/// Single sign step with the step size set to epsilon.
AttackResult fgsm_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                         const AttackOptions& options = {});
/// Raw sign of the gradient, no momentum or normalisation.
AttackResult ifgsm_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                          const AttackOptions& options = {});
/// Random resize + zero padding each iteration, gradient through the transform.
AttackResult lbtrans_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                            const AttackOptions& options = {});
/// Even iterations take the I-FGSM step, odd iterations the momentum step.
AttackResult lbmix_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                          const AttackOptions& options = {});

/// Dispatches on config.variant.
AttackResult run_attack(const Extractor& model, const Image& image, const AttackConfig& config,
                        const AttackOptions& options = {});

/// Resize by `scale` (bilinear, half-pixel centres) and zero-pad back to the
/// original size at (offset_x, offset_y). Linear in the image.
struct ResizePadTransform {
  ImageSize source;
  ImageSize scaled;
  int offset_x = 0;
  int offset_y = 0;

  static ResizePadTransform draw(ImageSize size, double scale_min, double scale_max, Rng& rng);
  Image apply(const Image& image) const;
  /// Adjoint: maps a gradient on the transformed image back to the source.
  Image adjoint(const Image& grad) const;
};

}  // namespace lmb
