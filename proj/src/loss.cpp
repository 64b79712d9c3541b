#include "lmbreak/loss.hpp"

#include <cmath>

#include "lmbreak/error.hpp"

namespace lmb {

namespace {

struct MapTerms {
  double dot = 0.0, pred_norm = 0.0, ref_norm = 0.0;
};

MapTerms map_terms(std::span<const double> p, std::span<const double> r) {
  MapTerms t;
  double pp = 0.0, rr = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    t.dot += p[j] * r[j];
    pp += p[j] * p[j];
    rr += r[j] * r[j];
  }
  t.pred_norm = std::sqrt(pp);
  t.ref_norm = std::sqrt(rr);
  return t;
}

void check_shapes(const HeatmapSet& pred, const HeatmapSet& ref) {
  if (!pred.same_shape(ref)) throw ShapeError("heat-map loss: prediction and reference shapes differ");
}

}  // namespace

double heatmap_cosine_loss(const HeatmapSet& pred, const HeatmapSet& ref, double delta) {
  check_shapes(pred, ref);
  double loss = 0.0;
  for (int i = 0; i < pred.count; ++i) {
    const MapTerms t = map_terms(pred.map(i), ref.map(i));
    loss += t.dot / (t.pred_norm * t.ref_norm + delta);
  }
  return loss;
}

namespace {

// Norms, products and the per-element difference evaluated in T.
template <typename T>
LossWithGradient cosine_grad(const HeatmapSet& pred, const HeatmapSet& ref, double delta) {
  check_shapes(pred, ref);
  LossWithGradient out{0.0, HeatmapSet(pred.count, pred.height, pred.width, pred.stride)};
  const T d = static_cast<T>(delta);
  for (int i = 0; i < pred.count; ++i) {
    auto p = pred.map(i);
    auto r = ref.map(i);
    T dot = 0, pp = 0, rr = 0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const T pj = static_cast<T>(p[j]), rj = static_cast<T>(r[j]);
      dot += pj * rj;
      pp += pj * pj;
      rr += rj * rj;
    }
    const T pn = std::sqrt(pp), rn = std::sqrt(rr);
    const T denom = pn * rn + d;
    out.loss += static_cast<double>(dot / denom);
    // d/dp [dot / (|p||r| + delta)] = r / denom - dot |r| p / (|p| denom^2)
    const T radial = pn > T(0) ? dot * rn / (pn * denom * denom) : T(0);
    const T inv = T(1) / denom;
    auto g = out.d_pred.map(i);
    for (std::size_t j = 0; j < p.size(); ++j)
      g[j] = static_cast<double>(static_cast<T>(r[j]) * inv - radial * static_cast<T>(p[j]));
  }
  if (!std::isfinite(out.loss)) throw NumericError("heat-map loss is not finite");
  return out;
}

}  // namespace

LossWithGradient heatmap_cosine_loss_grad(const HeatmapSet& pred, const HeatmapSet& ref, double delta) {
  return cosine_grad<double>(pred, ref, delta);
}

LossWithGradient heatmap_cosine_loss_grad_f32(const HeatmapSet& pred, const HeatmapSet& ref, double delta) {
  return cosine_grad<float>(pred, ref, delta);
}

}  // namespace lmb
