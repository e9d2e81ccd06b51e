// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <vector>

#include "eqdet/anchors.hpp"
#include "eqdet/box.hpp"

namespace eqdet {

// Raw per-image head outputs, flattened over anchors.
struct PredictionSet {
  int num_anchors = 0;
  int num_classes = 0;  // includes background at class 0
  std::vector<double> logits;   // [anchor * num_classes + class]
  std::vector<double> offsets;  // [anchor * 4 + coordinate]

  void validate() const;
};

// Per-anchor regression/classification targets produced from a matching.
struct LossTargets {
  std::vector<int> target_class;  // 0 = background
  std::vector<OffsetVector> target_offsets;  // valid where target_class > 0
  int num_matched = 0;
};

LossTargets encode_matches(const AnchorSet& anchors,
                           const std::vector<GtBox>& gt,
                           const MatchResult& match);

// 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise; and its derivative.
double smooth_l1(double x);
double smooth_l1_grad(double x);

// Numerically stable softmax (max-shifted) over n logits.
void softmax(const double* logits, int n, double* probs);

struct FocalParams {
  double alpha = 0.75;
  double gamma = 2.0;
};

// A loss term with gradients matching the prediction layout.
struct LossValue {
  double value = 0.0;
  std::vector<double> grad_logits;
  std::vector<double> grad_offsets;
};

// Sum of smooth-L1 over the four offset coordinates of matched anchors.
LossValue localization_loss(const PredictionSet& pred,
                            const LossTargets& targets);

// Focal classification loss summed over every anchor: matched anchors are
// scored on their object class, all the rest on background.
LossValue focal_conf_loss(const PredictionSet& pred,
                          const std::vector<int>& target_class,
                          const FocalParams& params);

// Cross-entropy with hard negative mining: all matched anchors count, plus
// the ceil(neg_ratio * num_matched) background anchors with the highest
// background loss (a single hardest negative when nothing matched).
LossValue hnm_conf_loss(const PredictionSet& pred,
                        const std::vector<int>& target_class,
                        double neg_ratio);

enum class ConfLossKind { focal, hard_negative_mining };

// Combined objective (conf + loc) / max(num_matched, 1), with gradients.
struct LossReport {
  double total = 0.0;
  double conf = 0.0;  // normalized
  double loc = 0.0;   // normalized
  int num_matched = 0;
  std::vector<double> grad_logits;
  std::vector<double> grad_offsets;
};

LossReport total_loss(const PredictionSet& pred, const LossTargets& targets,
                      ConfLossKind kind, const FocalParams& focal,
                      double neg_ratio = 3.0);

}  // namespace eqdet
