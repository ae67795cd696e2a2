#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "falcon/geometry.hpp"

namespace falcon {

struct LossConfig {
  double a = 0.2;        // distance penalty exponent
  double lambda1 = 0.9;  // Dice weight inside the Hausdorff loss
  double lambda2 = 0.1;  // adversarial weight
  double epsilon = 1e-6;
  double prob_threshold = 0.5;
  DistanceConvention convention = DistanceConvention::ToObject;

  void validate() const {
    if (!(a > 0)) throw Error(ErrorKind::InvalidArgument, "loss.a must be > 0");
    if (lambda1 < 0 || lambda2 < 0) throw Error(ErrorKind::InvalidArgument, "loss weights must be >= 0");
    if (epsilon < 0) throw Error(ErrorKind::InvalidArgument, "loss.epsilon must be >= 0");
    if (!(prob_threshold > 0 && prob_threshold < 1))
      throw Error(ErrorKind::InvalidArgument, "loss.prob_threshold must be in (0,1)");
  }
};

struct LossComponent {
  double value = 0;
  double weight = 1;
};

/// A scalar objective and the weighted parts it was assembled from.
struct LossValue {
  double total = 0;
  std::map<std::string, LossComponent> components;
  bool both_empty = false;

  double recombined() const {
    double s = 0;
    for (const auto& [name, c] : components) s += c.weight * c.value;
    return s;
  }
};

/// Loss value plus its gradient with respect to the prediction grid.
template <typename Scalar>
struct LossResult {
  LossValue value;
  Grid<Scalar> grad;
};

template <typename Scalar>
struct ScalarResult {
  double value = 0;
  Grid<Scalar> grad;
};

struct ScoreLoss {
  double value = 0;
  std::vector<double> grad;
};

inline constexpr double kProbClamp = 1e-7;

namespace detail {

template <typename Scalar>
void check_shapes(const ProbMap<Scalar>& pred, const BinaryMask& gt) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols())
    throw Error(ErrorKind::ShapeMismatch, "prediction and ground truth differ in shape");
}

inline double clamp_prob(double p) { return std::min(std::max(p, kProbClamp), 1.0 - kProbClamp); }

}  // namespace detail

/// 1 - 2 sum(p*y) / (sum(p^2 + y^2) + eps), with its gradient.
template <typename Scalar>
ScalarResult<Scalar> dice_loss_with_grad(const ProbMap<Scalar>& pred, const BinaryMask& gt, double epsilon) {
  detail::check_shapes(pred, gt);
  const Eigen::ArrayXXd p = pred.grid().template cast<double>();
  const Eigen::ArrayXXd y = gt.as<double>();
  const double inter = (p * y).sum();
  const double denom = (p.square() + y.square()).sum() + epsilon;
  ScalarResult<Scalar> out;
  if (denom == 0) {
    out.value = 1.0;
    out.grad = Grid<Scalar>::Zero(p.rows(), p.cols());
    return out;
  }
  out.value = 1.0 - 2.0 * inter / denom;
  out.grad = (-2.0 * y / denom + 4.0 * inter * p / (denom * denom)).template cast<Scalar>();
  return out;
}

template <typename Scalar>
double dice_loss(const ProbMap<Scalar>& pred, const BinaryMask& gt, double epsilon) {
  return dice_loss_with_grad(pred, gt, epsilon).value;
}

/// Pixel-mean binary cross-entropy; probabilities are clamped to [1e-7, 1-1e-7].
template <typename Scalar>
ScalarResult<Scalar> bce_loss_with_grad(const ProbMap<Scalar>& pred, const BinaryMask& gt) {
  detail::check_shapes(pred, gt);
  const Eigen::ArrayXXd p = pred.grid().template cast<double>().unaryExpr(&detail::clamp_prob);
  const Eigen::ArrayXXd y = gt.as<double>();
  const double n = double(p.size());
  ScalarResult<Scalar> out;
  out.value = -(y * p.log() + (1.0 - y) * (1.0 - p).log()).sum() / n;
  out.grad = ((p - y) / (p * (1.0 - p)) / n).template cast<Scalar>();
  return out;
}

template <typename Scalar>
double bce_loss(const ProbMap<Scalar>& pred, const BinaryMask& gt) {
  return bce_loss_with_grad(pred, gt).value;
}

/// Hausdorff-distance loss with fused Dice term, evaluated against
/// caller-supplied distance maps (treated as constants for the gradient).
template <typename Scalar>
LossResult<Scalar> hausdorff_loss(const ProbMap<Scalar>& pred, const BinaryMask& gt, const DistanceMap& dist_gt,
                                  const DistanceMap& dist_pred, const LossConfig& cfg) {
  detail::check_shapes(pred, gt);
  const Eigen::ArrayXXd p = pred.grid().template cast<double>();
  const Eigen::ArrayXXd y = gt.as<double>();
  const double n = double(p.size());
  const Eigen::ArrayXXd wgt = dist_gt.grid.pow(cfg.a);
  const Eigen::ArrayXXd wpred = dist_pred.grid.pow(cfg.a);

  const double hd_term = (p * wgt + y * wpred).sum() / n;
  const auto dice = dice_loss_with_grad(pred, gt, cfg.epsilon);

  LossResult<Scalar> out;
  out.value.components["hd_term"] = {hd_term, 1.0};
  out.value.components["dice_term"] = {dice.value, cfg.lambda1};
  out.value.total = hd_term + cfg.lambda1 * dice.value;
  out.grad = (wgt / n).template cast<Scalar>() + Scalar(cfg.lambda1) * dice.grad;
  return out;
}

template <typename Scalar>
LossResult<Scalar> hausdorff_loss(const ProbMap<Scalar>& pred, const BinaryMask& gt, const LossConfig& cfg) {
  detail::check_shapes(pred, gt);
  const BinaryMask pred_bin = binarize(pred, cfg.prob_threshold);
  if (gt.empty() && pred_bin.empty()) {
    LossResult<Scalar> out;
    out.value.both_empty = true;
    out.value.components["hd_term"] = {0.0, 1.0};
    out.value.components["dice_term"] = {0.0, cfg.lambda1};
    out.grad = Grid<Scalar>::Zero(pred.rows(), pred.cols());
    return out;
  }
  return hausdorff_loss(pred, gt, distance_transform(gt, cfg.convention),
                        distance_transform(pred_bin, cfg.convention), cfg);
}

/// mean(-log s) over discriminator scores of generated masks.
inline ScoreLoss adv_generator_loss(std::span<const double> scores) {
  if (scores.empty()) throw Error(ErrorKind::EmptyBatch, "no discriminator scores");
  ScoreLoss out;
  const double n = double(scores.size());
  for (double s : scores) {
    const double c = detail::clamp_prob(s);
    out.value -= std::log(c);
    out.grad.push_back(-1.0 / (c * n));
  }
  out.value /= n;
  return out;
}

struct DiscLoss {
  double value = 0;
  std::vector<double> grad_real;
  std::vector<double> grad_fake;
};

/// Negated discriminator objective: -mean log(real) - mean log(1 - fake).
inline DiscLoss disc_loss(std::span<const double> real, std::span<const double> fake) {
  if (real.empty() || fake.empty()) throw Error(ErrorKind::EmptyBatch, "disc_loss needs real and fake scores");
  DiscLoss out;
  const double nr = double(real.size());
  const double nf = double(fake.size());
  double lr = 0, lf = 0;
  for (double s : real) {
    const double c = detail::clamp_prob(s);
    lr -= std::log(c);
    out.grad_real.push_back(-1.0 / (c * nr));
  }
  for (double s : fake) {
    const double c = detail::clamp_prob(s);
    lf -= std::log(1.0 - c);
    out.grad_fake.push_back(1.0 / ((1.0 - c) * nf));
  }
  out.value = lr / nr + lf / nf;
  return out;
}

template <typename Scalar>
struct CombinedLoss {
  LossResult<Scalar> seg;         // value.total is the full objective; grad covers the Hausdorff part
  std::vector<double> score_grad;  // d total / d score, already scaled by lambda2
};

/// L_hd + lambda2 * L_adv.
template <typename Scalar>
CombinedLoss<Scalar> combined_seg_loss(const ProbMap<Scalar>& pred, const BinaryMask& gt,
                                       std::span<const double> disc_scores, const LossConfig& cfg) {
  CombinedLoss<Scalar> out;
  out.seg = hausdorff_loss(pred, gt, cfg);
  const auto adv = adv_generator_loss(disc_scores);
  out.seg.value.components["adv_term"] = {adv.value, cfg.lambda2};
  out.seg.value.total += cfg.lambda2 * adv.value;
  out.score_grad.reserve(adv.grad.size());
  for (double g : adv.grad) out.score_grad.push_back(cfg.lambda2 * g);
  return out;
}

}  // namespace falcon
