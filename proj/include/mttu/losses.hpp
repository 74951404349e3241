#pragma once

#include <optional>
#include <string>

#include "mttu/levelset.hpp"
#include "mttu/model.hpp"
#include "mttu/ops.hpp"

namespace mttu {

struct LossWeights {
  double lambda_m = 1.0;  // mask term carries unit weight; zeroed only by
                          // the cls-only ablation preset
  double lambda_c = 0.25;
  double lambda_l = 5.0;
  double lambda_d = 1.0;
  double lambda_a = 1.0;
  double k = 1500.0;
  // labeled-stream epochs until the consistency weight reaches lambda_d;
  // sized so the ramp completes within a desk-scale (~2000 iteration) run
  double rampup_length = 4.0;
};

// Loss-composition presets (1)-(6): mask-only, cls-only, mask+cls,
// +lsf, +dtc, full.
LossWeights ablation_preset(int setting);

struct LossReport {
  double mask = 0.0;
  double cls = 0.0;
  double lsf = 0.0;
  double dtc = 0.0;
  double arc = 0.0;
  double total_lab = 0.0;
  double total_unlab = 0.0;
  // graph tensors for the totals (undefined when not applicable)
  Tensor lab_loss;
  Tensor unlab_loss;

  std::string csv_row(long step) const;
  static std::string csv_header();
};

// Per-term losses. All return scalar graph tensors.
Tensor mask_loss(const Tensor& mask_logits, const Tensor& mask_gt);
Tensor lsf_loss(const Tensor& level_set, const Tensor& lsf_gt);
Tensor cls_loss(const Tensor& logits, int label);

// Foreground probability from 2-class logits; for two classes the channel
// softmax reduces to sigmoid(l1 - l0).
Tensor foreground_prob(const Tensor& mask_logits);

// L2 between the softmax foreground mask and Sigmoid(-k*L).
Tensor dtc_loss(const Tensor& mask_logits, const Tensor& level_set, double k);

// Attention mass on predicted background: sum_i (1 - M'_i) * A'_i, where M'
// is the foreground probability bilinearly downsampled to the token grid and
// treated as a constant target (no gradient into the segmentation head).
Tensor arc_loss(const Tensor& cls_attention, const Tensor& mask_logits);

// Gaussian ramp: lambda_d * exp(-5 * (1 - min(t,T)/T)^2); lambda_d for t >= T.
double rampup_weight(double t, double length, double lambda_d);

LossReport labeled_loss(const ModelOutput& out, const Tensor& mask_gt,
                        const Tensor& lsf_gt, int label,
                        const LossWeights& w, double t);
LossReport unlabeled_loss(const ModelOutput& out, int label,
                          const LossWeights& w, double t);

}  // namespace mttu
