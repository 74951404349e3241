#include "mttu/losses.hpp"

#include <cmath>
#include <sstream>

namespace mttu {

std::string LossReport::csv_header() {
  return "step,mask,cls,lsf,dtc,arc,total_lab,total_unlab";
}

std::string LossReport::csv_row(long step) const {
  std::ostringstream os;
  os.precision(17);
  os << step << ',' << mask << ',' << cls << ',' << lsf << ',' << dtc << ','
     << arc << ',' << total_lab << ',' << total_unlab;
  return os.str();
}

LossWeights ablation_preset(int setting) {
  LossWeights w;  // defaults are the full setting (6)
  switch (setting) {
    case 1:
      w.lambda_c = w.lambda_l = w.lambda_d = w.lambda_a = 0.0;
      break;
    case 2:
      w.lambda_m = w.lambda_l = w.lambda_d = w.lambda_a = 0.0;
      break;
    case 3:
      w.lambda_l = w.lambda_d = w.lambda_a = 0.0;
      break;
    case 4:
      w.lambda_d = w.lambda_a = 0.0;
      break;
    case 5:
      w.lambda_a = 0.0;
      break;
    case 6:
      break;
    default:
      throw ContractError("ablation_preset: setting must be 1..6");
  }
  return w;
}

Tensor mask_loss(const Tensor& mask_logits, const Tensor& mask_gt) {
  return mask_cross_entropy(mask_logits, mask_gt);
}

Tensor lsf_loss(const Tensor& level_set, const Tensor& lsf_gt) {
  if (level_set.shape() != lsf_gt.shape())
    throw DimensionError("lsf_loss: shape mismatch");
  Tensor d = sub(level_set, lsf_gt);
  return mean(mul(d, d));
}

Tensor cls_loss(const Tensor& logits, int label) {
  return cls_cross_entropy(logits, label);
}

Tensor foreground_prob(const Tensor& mask_logits) {
  if (mask_logits.ndim() != 3 || mask_logits.dim(0) != 2)
    throw DimensionError("foreground_prob: expects [2,H,W] logits");
  return sigmoid(sub(slice_ch(mask_logits, 1), slice_ch(mask_logits, 0)));
}

Tensor dtc_loss(const Tensor& mask_logits, const Tensor& level_set, double k) {
  Tensor m = foreground_prob(mask_logits);
  if (m.shape() != level_set.shape())
    throw DimensionError("dtc_loss: spatial shapes disagree");
  Tensor m_from_lsf = lsf_to_mask(level_set, k);
  Tensor d = sub(m, m_from_lsf);
  return mean(mul(d, d));
}

Tensor arc_loss(const Tensor& cls_attention, const Tensor& mask_logits) {
  const int n = cls_attention.size();
  const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) throw DimensionError("arc_loss: attention length not a square");
  double s = 0.0;
  for (int i = 0; i < n; ++i) s += cls_attention.data()[i];
  if (std::abs(s - 1.0) > 1e-6)
    throw ContractError("arc_loss: attention must sum to 1");
  // both branches stay live: attention is pulled toward predicted
  // foreground and the mask is pulled up under attended cells, which is
  // the only segmentation signal the classification stream can offer on
  // images without mask annotation
  Tensor prob = foreground_prob(mask_logits);
  Tensor down = bilinear_resize(reshape(prob, {1, prob.dim(0), prob.dim(1)}), g, g);
  Tensor one_minus = add_scalar(mul_scalar(reshape(down, {n}), -1.0), 1.0);
  return dot(one_minus, cls_attention);
}

double rampup_weight(double t, double length, double lambda_d) {
  if (t < 0.0) throw ContractError("rampup_weight: t must be >= 0");
  if (length <= 0.0) return lambda_d;
  const double phase = 1.0 - std::min(t, length) / length;
  return lambda_d * std::exp(-5.0 * phase * phase);
}

LossReport labeled_loss(const ModelOutput& out, const Tensor& mask_gt,
                        const Tensor& lsf_gt, int label, const LossWeights& w,
                        double t) {
  if (!mask_gt.defined() || !lsf_gt.defined())
    throw ContractError("labeled_loss: missing segmentation target");
  LossReport r;
  Tensor l_mask = mask_loss(out.mask_logits, mask_gt);
  Tensor l_cls = cls_loss(out.class_logits, label);
  Tensor l_lsf = lsf_loss(out.level_set, lsf_gt);
  Tensor l_dtc = dtc_loss(out.mask_logits, out.level_set, w.k);
  Tensor l_arc = arc_loss(out.cls_attention, out.mask_logits);
  const double ramp = rampup_weight(t, w.rampup_length, w.lambda_d);
  Tensor total = mul_scalar(l_mask, w.lambda_m);
  total = add(total, mul_scalar(l_cls, w.lambda_c));
  total = add(total, mul_scalar(l_lsf, w.lambda_l));
  total = add(total, mul_scalar(l_dtc, ramp));
  total = add(total, mul_scalar(l_arc, w.lambda_a));
  r.mask = l_mask.item();
  r.cls = l_cls.item();
  r.lsf = l_lsf.item();
  r.dtc = l_dtc.item();
  r.arc = l_arc.item();
  r.total_lab = total.item();
  r.lab_loss = total;
  return r;
}

LossReport unlabeled_loss(const ModelOutput& out, int label,
                          const LossWeights& w, double t) {
  LossReport r;
  Tensor l_cls = cls_loss(out.class_logits, label);
  Tensor l_dtc = dtc_loss(out.mask_logits, out.level_set, w.k);
  Tensor l_arc = arc_loss(out.cls_attention, out.mask_logits);
  const double ramp = rampup_weight(t, w.rampup_length, w.lambda_d);
  Tensor total = mul_scalar(l_cls, w.lambda_c);
  total = add(total, mul_scalar(l_dtc, ramp));
  total = add(total, mul_scalar(l_arc, w.lambda_a));
  r.cls = l_cls.item();
  r.dtc = l_dtc.item();
  r.arc = l_arc.item();
  r.total_unlab = total.item();
  r.unlab_loss = total;
  return r;
}

}  // namespace mttu
