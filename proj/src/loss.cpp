// SPDX-License-Identifier: Apache-2.0
#include "eqdet/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace eqdet {

namespace {

constexpr double kProbFloor = 1e-12;

void check_targets(const PredictionSet& pred,
                   const std::vector<int>& target_class) {
  pred.validate();
  if (static_cast<int>(target_class.size()) != pred.num_anchors)
    throw std::invalid_argument(
        "conf loss: target_class size does not match anchor count");
  for (int t : target_class)
    if (t < 0 || t >= pred.num_classes)
      throw std::invalid_argument("conf loss: target class out of range");
}

}  // namespace

void softmax(const double* logits, int n, double* probs) {
  double mx = logits[0];
  for (int j = 1; j < n; ++j) mx = std::max(mx, logits[j]);
  double sum = 0.0;
  for (int j = 0; j < n; ++j) {
    probs[j] = std::exp(logits[j] - mx);
    sum += probs[j];
  }
  for (int j = 0; j < n; ++j) probs[j] /= sum;
}

void PredictionSet::validate() const {
  if (num_anchors <= 0)
    throw std::invalid_argument("PredictionSet: anchor count must be positive");
  if (num_classes < 2)
    throw std::invalid_argument(
        "PredictionSet: need background plus at least one object class");
  if (logits.size() != static_cast<size_t>(num_anchors) * num_classes)
    throw std::invalid_argument("PredictionSet: logits size mismatch");
  if (offsets.size() != static_cast<size_t>(num_anchors) * 4)
    throw std::invalid_argument("PredictionSet: offsets size mismatch");
}

LossTargets encode_matches(const AnchorSet& anchors,
                           const std::vector<GtBox>& gt,
                           const MatchResult& match) {
  const int na = anchors.size();
  if (static_cast<int>(match.anchor_to_gt.size()) != na)
    throw std::invalid_argument(
        "encode_matches: match result does not cover the anchor set");

  LossTargets targets;
  targets.target_class.assign(na, 0);
  targets.target_offsets.assign(na, OffsetVector{0.0, 0.0, 0.0, 0.0});
  for (int a = 0; a < na; ++a) {
    const int g = match.anchor_to_gt[a];
    if (g < 0) continue;
    if (g >= static_cast<int>(gt.size()))
      throw std::invalid_argument(
          "encode_matches: match refers to a missing ground-truth box");
    if (gt[g].class_id <= 0)
      throw std::invalid_argument(
          "encode_matches: ground-truth class must be positive");
    targets.target_class[a] = gt[g].class_id;
    targets.target_offsets[a] = encode_box(gt[g].box, anchors.anchors[a].box);
    ++targets.num_matched;
  }
  return targets;
}

double smooth_l1(double x) {
  const double ax = std::abs(x);
  return ax < 1.0 ? 0.5 * x * x : ax - 0.5;
}

double smooth_l1_grad(double x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

LossValue localization_loss(const PredictionSet& pred,
                            const LossTargets& targets) {
  pred.validate();
  if (static_cast<int>(targets.target_class.size()) != pred.num_anchors ||
      static_cast<int>(targets.target_offsets.size()) != pred.num_anchors)
    throw std::invalid_argument(
        "localization_loss: targets do not match anchor count");

  LossValue out;
  out.grad_logits.assign(pred.logits.size(), 0.0);
  out.grad_offsets.assign(pred.offsets.size(), 0.0);
  for (int a = 0; a < pred.num_anchors; ++a) {
    if (targets.target_class[a] == 0) continue;
    for (int c = 0; c < 4; ++c) {
      const double diff =
          pred.offsets[a * 4 + c] - targets.target_offsets[a][c];
      out.value += smooth_l1(diff);
      out.grad_offsets[a * 4 + c] = smooth_l1_grad(diff);
    }
  }
  return out;
}

LossValue focal_conf_loss(const PredictionSet& pred,
                          const std::vector<int>& target_class,
                          const FocalParams& params) {
  check_targets(pred, target_class);
  if (params.alpha <= 0.0)
    throw std::invalid_argument("focal_conf_loss: alpha must be positive");
  if (params.gamma < 0.0)
    throw std::invalid_argument("focal_conf_loss: gamma must be non-negative");

  const int nc = pred.num_classes;
  LossValue out;
  out.grad_logits.assign(pred.logits.size(), 0.0);
  out.grad_offsets.assign(pred.offsets.size(), 0.0);

  std::vector<double> probs(nc);
  for (int a = 0; a < pred.num_anchors; ++a) {
    softmax(&pred.logits[static_cast<size_t>(a) * nc], nc, probs.data());
    const int t = target_class[a];
    const double p = std::max(probs[t], kProbFloor);
    const double lnp = std::log(p);
    const double q = 1.0 - p;

    double dterm_dp;
    if (params.gamma == 0.0) {
      out.value += -params.alpha * lnp;
      dterm_dp = -params.alpha / p;
    } else {
      const double qg = std::pow(q, params.gamma);
      out.value += -params.alpha * qg * lnp;
      const double qg1 = std::pow(q, params.gamma - 1.0);
      dterm_dp = -params.alpha * (-params.gamma * qg1 * lnp + qg / p);
    }

    // Chain through softmax: dp_t/dz_j = p_t (delta_tj - p_j).
    for (int j = 0; j < nc; ++j) {
      const double dp_dz = probs[t] * ((j == t ? 1.0 : 0.0) - probs[j]);
      out.grad_logits[static_cast<size_t>(a) * nc + j] += dterm_dp * dp_dz;
    }
  }
  return out;
}

LossValue hnm_conf_loss(const PredictionSet& pred,
                        const std::vector<int>& target_class,
                        double neg_ratio) {
  check_targets(pred, target_class);
  if (neg_ratio < 0.0)
    throw std::invalid_argument("hnm_conf_loss: neg_ratio must be non-negative");

  const int nc = pred.num_classes;
  LossValue out;
  out.grad_logits.assign(pred.logits.size(), 0.0);
  out.grad_offsets.assign(pred.offsets.size(), 0.0);

  // Per-anchor probabilities and background losses in one pass.
  std::vector<double> all_probs(pred.logits.size());
  int num_matched = 0;
  std::vector<std::pair<double, int>> negatives;  // (background loss, anchor)
  for (int a = 0; a < pred.num_anchors; ++a) {
    double* probs = &all_probs[static_cast<size_t>(a) * nc];
    softmax(&pred.logits[static_cast<size_t>(a) * nc], nc, probs);
    if (target_class[a] > 0) {
      ++num_matched;
    } else {
      const double p0 = std::max(probs[0], kProbFloor);
      negatives.emplace_back(-std::log(p0), a);
    }
  }

  // Hardest negatives: highest background loss first, index breaks ties.
  std::sort(negatives.begin(), negatives.end(),
            [](const std::pair<double, int>& a,
               const std::pair<double, int>& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  size_t keep = num_matched > 0
                    ? static_cast<size_t>(std::ceil(neg_ratio * num_matched))
                    : 1;
  keep = std::min(keep, negatives.size());

  std::vector<char> selected(pred.num_anchors, 0);
  for (int a = 0; a < pred.num_anchors; ++a)
    if (target_class[a] > 0) selected[a] = 1;
  for (size_t i = 0; i < keep; ++i) selected[negatives[i].second] = 1;

  for (int a = 0; a < pred.num_anchors; ++a) {
    if (!selected[a]) continue;
    const int t = target_class[a];
    const double* probs = &all_probs[static_cast<size_t>(a) * nc];
    out.value += -std::log(std::max(probs[t], kProbFloor));
    for (int j = 0; j < nc; ++j)
      out.grad_logits[static_cast<size_t>(a) * nc + j] =
          probs[j] - (j == t ? 1.0 : 0.0);
  }
  return out;
}

LossReport total_loss(const PredictionSet& pred, const LossTargets& targets,
                      ConfLossKind kind, const FocalParams& focal,
                      double neg_ratio) {
  LossValue loc = localization_loss(pred, targets);
  LossValue conf = kind == ConfLossKind::focal
                       ? focal_conf_loss(pred, targets.target_class, focal)
                       : hnm_conf_loss(pred, targets.target_class, neg_ratio);

  const double norm = 1.0 / std::max(targets.num_matched, 1);
  LossReport report;
  report.num_matched = targets.num_matched;
  report.conf = conf.value * norm;
  report.loc = loc.value * norm;
  report.total = report.conf + report.loc;
  report.grad_logits = std::move(conf.grad_logits);
  for (double& g : report.grad_logits) g *= norm;
  report.grad_offsets = std::move(loc.grad_offsets);
  for (double& g : report.grad_offsets) g *= norm;
  return report;
}

}  // namespace eqdet
