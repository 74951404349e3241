#include "mttu/gradsuite.hpp"

#include <cmath>

#include "mttu/levelset.hpp"
#include "mttu/losses.hpp"
#include "mttu/ops.hpp"
#include "mttu/model.hpp"
#include "mttu/rng.hpp"

namespace mttu {

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
  return t;
}

// values bounded away from 0 for kinks/denominators
Tensor random_tensor_away_from_zero(std::vector<int> shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (int i = 0; i < t.size(); ++i) {
    const double mag = rng.uniform(0.1, 1.0);
    t.data()[i] = rng.coin() ? mag : -mag;
  }
  return t;
}

// scalar-valued wrapper: weighted sum so every output entry matters
Tensor weighted_sum(const Tensor& y, const Tensor& w) { return dot(y, w); }

// wrong-gradient negative control: forward x^2, backward claims 3x
Tensor broken_square(const Tensor& x) {
  auto n = std::make_shared<TensorNode>();
  n->shape = x.shape();
  n->value.resize(x.values().size());
  for (int i = 0; i < x.size(); ++i) n->value[i] = x.data()[i] * x.data()[i];
  n->op = "broken_square";
  n->parents.push_back(x.node());
  n->requires_grad = x.requires_grad();
  n->backprop = [](TensorNode& o) {
    o.parents[0]->ensure_grad();
    for (size_t i = 0; i < o.grad.size(); ++i)
      o.parents[0]->grad[i] += o.grad[i] * 3.0 * o.parents[0]->value[i];
  };
  return Tensor(n);
}

}  // namespace

std::vector<NamedGradCheck> run_gradcheck_suite(int reps, double tol,
                                                uint64_t seed,
                                                bool inject_bug) {
  Rng rng(seed);
  std::vector<NamedGradCheck> out;

  auto run = [&](const std::string& name,
                 const std::function<GradCheckReport(Rng&)>& one) {
    NamedGradCheck r;
    r.name = name;
    r.report.tol = tol;
    r.report.passed = true;
    for (int i = 0; i < reps; ++i) {
      GradCheckReport rep = one(rng);
      r.report.max_rel_err = std::max(r.report.max_rel_err, rep.max_rel_err);
      r.report.max_abs_err = std::max(r.report.max_abs_err, rep.max_abs_err);
      r.report.checked += rep.checked;
      r.report.passed = r.report.passed && rep.max_rel_err < tol;
    }
    out.push_back(std::move(r));
  };

  run("add", [&](Rng& g) {
    Tensor b = random_tensor({3, 4}, g), w = random_tensor({3, 4}, g);
    return gradcheck([&](const Tensor& x) { return weighted_sum(add(x, b), w); },
                     random_tensor({3, 4}, g), 1e-5, tol);
  });
  run("sub", [&](Rng& g) {
    Tensor a = random_tensor({3, 4}, g), w = random_tensor({3, 4}, g);
    return gradcheck([&](const Tensor& x) { return weighted_sum(sub(a, x), w); },
                     random_tensor({3, 4}, g), 1e-5, tol);
  });
  run("mul", [&](Rng& g) {
    Tensor b = random_tensor({3, 4}, g), w = random_tensor({3, 4}, g);
    return gradcheck([&](const Tensor& x) { return weighted_sum(mul(x, b), w); },
                     random_tensor({3, 4}, g), 1e-5, tol);
  });
  run("div", [&](Rng& g) {
    Tensor a = random_tensor({3, 4}, g), w = random_tensor({3, 4}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(div(a, x), w); },
        random_tensor_away_from_zero({3, 4}, g), 1e-5, tol);
  });
  run("scalar_ops", [&](Rng& g) {
    const double c = g.uniform(-2, 2);
    Tensor w = random_tensor({8}, g);
    return gradcheck(
        [&](const Tensor& x) {
          return weighted_sum(add_scalar(mul_scalar(x, c), 0.3), w);
        },
        random_tensor({8}, g), 1e-5, tol);
  });
  run("relu", [&](Rng& g) {
    Tensor w = random_tensor({4, 4}, g);
    return gradcheck([&](const Tensor& x) { return weighted_sum(relu(x), w); },
                     random_tensor_away_from_zero({4, 4}, g), 1e-5, tol);
  });
  run("sigmoid", [&](Rng& g) {
    Tensor w = random_tensor({10}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(sigmoid(x), w); },
        random_tensor({10}, g, -4, 4), 1e-5, tol);
  });
  run("tanh", [&](Rng& g) {
    Tensor w = random_tensor({10}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(tanh_op(x), w); },
        random_tensor({10}, g, -3, 3), 1e-5, tol);
  });
  run("sum_mean", [&](Rng& g) {
    return gradcheck(
        [&](const Tensor& x) { return add(sum(x), mean(x)); },
        random_tensor({5, 3}, g), 1e-5, tol);
  });
  run("dot", [&](Rng& g) {
    Tensor b = random_tensor({12}, g);
    return gradcheck([&](const Tensor& x) { return dot(x, b); },
                     random_tensor({12}, g), 1e-5, tol);
  });
  run("div_bcast", [&](Rng& g) {
    Tensor w = random_tensor({6}, g);
    return gradcheck(
        [&](const Tensor& x) {
          Tensor pos = add_scalar(sigmoid(x), 0.1);
          return weighted_sum(div_bcast(pos, sum(pos)), w);
        },
        random_tensor({6}, g), 1e-5, tol);
  });
  run("matmul_lhs", [&](Rng& g) {
    Tensor b = random_tensor({5, 3}, g), w = random_tensor({4, 3}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(matmul(x, b), w); },
        random_tensor({4, 5}, g), 1e-5, tol);
  });
  run("matmul_rhs", [&](Rng& g) {
    Tensor a = random_tensor({4, 5}, g), w = random_tensor({4, 3}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(matmul(a, x), w); },
        random_tensor({5, 3}, g), 1e-5, tol);
  });
  run("transpose", [&](Rng& g) {
    Tensor w = random_tensor({4, 3}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(transpose2d(x), w); },
        random_tensor({3, 4}, g), 1e-5, tol);
  });
  run("add_rowvec", [&](Rng& g) {
    Tensor xr = random_tensor({3, 5}, g), w = random_tensor({3, 5}, g);
    return gradcheck(
        [&](const Tensor& b) { return weighted_sum(add_rowvec(xr, b), w); },
        random_tensor({5}, g), 1e-5, tol);
  });
  run("slice_concat", [&](Rng& g) {
    Tensor w = random_tensor({3, 6}, g);
    return gradcheck(
        [&](const Tensor& x) {
          Tensor left = slice_cols(x, 0, 2);
          Tensor right = slice_cols(x, 2, 4);
          return weighted_sum(concat_cols({right, left}), w);
        },
        random_tensor({3, 6}, g), 1e-5, tol);
  });
  run("concat_rows_slice_rows", [&](Rng& g) {
    Tensor w = random_tensor({4, 3}, g);
    return gradcheck(
        [&](const Tensor& x) {
          Tensor top = slice_rows(x, 0, 1);
          Tensor rest = slice_rows(x, 1, 3);
          return weighted_sum(concat_rows({rest, top}), w);
        },
        random_tensor({4, 3}, g), 1e-5, tol);
  });
  run("reshape", [&](Rng& g) {
    Tensor w = random_tensor({12}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(reshape(x, {12}), w); },
        random_tensor({3, 4}, g), 1e-5, tol);
  });
  run("softmax", [&](Rng& g) {
    Tensor w = random_tensor({4, 5}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(softmax(x), w); },
        random_tensor({4, 5}, g, -2, 2), 1e-5, tol);
  });
  run("layer_norm", [&](Rng& g) {
    Tensor gain = random_tensor({6}, g, 0.5, 1.5);
    Tensor bias = random_tensor({6}, g);
    Tensor w = random_tensor({3, 6}, g);
    return gradcheck(
        [&](const Tensor& x) {
          return weighted_sum(layer_norm(x, gain, bias), w);
        },
        random_tensor({3, 6}, g), 1e-5, tol);
  });
  run("layer_norm_affine", [&](Rng& g) {
    Tensor xr = random_tensor({3, 6}, g);
    Tensor bias = random_tensor({6}, g);
    Tensor w = random_tensor({3, 6}, g);
    return gradcheck(
        [&](const Tensor& gain) {
          return weighted_sum(layer_norm(xr, gain, bias), w);
        },
        random_tensor({6}, g, 0.5, 1.5), 1e-5, tol);
  });
  run("conv2d_input", [&](Rng& g) {
    Tensor kw = random_tensor({2, 1, 3, 3}, g);
    Tensor kb = random_tensor({2}, g);
    Tensor w = random_tensor({2, 5, 5}, g);
    return gradcheck(
        [&](const Tensor& x) {
          return weighted_sum(conv2d(x, kw, kb, 1, 1), w);
        },
        random_tensor({1, 5, 5}, g), 1e-5, tol);
  });
  run("conv2d_weight", [&](Rng& g) {
    Tensor xr = random_tensor({2, 5, 5}, g);
    Tensor kb = random_tensor({3}, g);
    Tensor w = random_tensor({3, 3, 3}, g);
    return gradcheck(
        [&](const Tensor& kw) {
          return weighted_sum(conv2d(xr, kw, kb, 2, 1), w);
        },
        random_tensor({3, 2, 3, 3}, g), 1e-5, tol);
  });
  run("bilinear_resize", [&](Rng& g) {
    Tensor w = random_tensor({2, 7, 7}, g);
    return gradcheck(
        [&](const Tensor& x) {
          return weighted_sum(bilinear_resize(x, 7, 7), w);
        },
        random_tensor({2, 4, 4}, g), 1e-5, tol);
  });
  run("concat_ch_slice_ch", [&](Rng& g) {
    Tensor b = random_tensor({1, 3, 3}, g);
    Tensor w = random_tensor({3, 3}, g);
    return gradcheck(
        [&](const Tensor& x) {
          return weighted_sum(slice_ch(concat_ch(x, b), 1), w);
        },
        random_tensor({2, 3, 3}, g), 1e-5, tol);
  });
  run("cls_cross_entropy", [&](Rng& g) {
    const int label = g.uniform_int(0, 2);
    return gradcheck(
        [&](const Tensor& x) { return cls_cross_entropy(x, label); },
        random_tensor({3}, g, -2, 2), 1e-5, tol);
  });
  run("mask_cross_entropy", [&](Rng& g) {
    Tensor tgt = Tensor::zeros({4, 4});
    for (int i = 0; i < tgt.size(); ++i) tgt.data()[i] = g.coin() ? 1.0 : 0.0;
    return gradcheck(
        [&](const Tensor& x) { return mask_cross_entropy(x, tgt); },
        random_tensor({2, 4, 4}, g, -2, 2), 1e-5, tol);
  });
  run("lsf_to_mask", [&](Rng& g) {
    Tensor w = random_tensor({3, 3}, g);
    return gradcheck(
        [&](const Tensor& x) { return weighted_sum(lsf_to_mask(x, 2.5), w); },
        random_tensor({3, 3}, g), 1e-5, tol);
  });
  run("lsf_loss", [&](Rng& g) {
    Tensor tgt = random_tensor({4, 4}, g);
    return gradcheck([&](const Tensor& x) { return lsf_loss(x, tgt); },
                     random_tensor({4, 4}, g), 1e-5, tol);
  });
  run("dtc_loss_mask_branch", [&](Rng& g) {
    Tensor lsf = random_tensor({4, 4}, g);
    return gradcheck(
        [&](const Tensor& logits) { return dtc_loss(logits, lsf, 3.0); },
        random_tensor({2, 4, 4}, g, -2, 2), 1e-5, tol);
  });
  run("dtc_loss_lsf_branch", [&](Rng& g) {
    Tensor logits = random_tensor({2, 4, 4}, g, -2, 2);
    return gradcheck(
        [&](const Tensor& lsf) { return dtc_loss(logits, lsf, 3.0); },
        random_tensor({4, 4}, g), 1e-5, tol);
  });
  run("arc_loss_attention_branch", [&](Rng& g) {
    Tensor logits = random_tensor({2, 8, 8}, g, -2, 2);
    return gradcheck(
        [&](const Tensor& raw) {
          // normalize inside the function under test so the perturbed input
          // still satisfies the sum-to-1 contract
          Tensor pos = add_scalar(sigmoid(raw), 1e-3);
          Tensor attn = reshape(div_bcast(pos, sum(pos)), {4});
          return arc_loss(attn, logits);
        },
        random_tensor({4}, g), 1e-5, tol);
  });
  run("arc_loss_mask_branch", [&](Rng& g) {
    Tensor raw = random_tensor({4}, g, 0.1, 1.0);
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += raw.data()[i];
    Tensor attn = mul_scalar(raw, 1.0 / s);
    return gradcheck(
        [&](const Tensor& logits) { return arc_loss(attn, logits); },
        random_tensor({2, 8, 8}, g, -2, 2), 1e-5, tol);
  });

  // composite objectives through a tiny end-to-end model; every parameter
  // is perturbed.
  {
    ModelConfig cfg;
    cfg.input_size = 32;
    cfg.stem_channels = {3, 4, 5, 6};
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.num_classes = 2;
    cfg.decode_channels = {6, 5, 4, 4};
    Model model(cfg, /*seed=*/seed + 17);
    // zero-initialized parameters sit at non-differentiable points: the
    // cls token at layer_norm's singularity, and conv biases exactly on
    // the relu kink wherever a receptive field is all zero. Central
    // differences are meaningless there, so check off those points.
    for (auto& p : model.parameters()) {
      if (p.name == "cls_token")
        for (int i = 0; i < p.tensor.size(); ++i)
          p.tensor.data()[i] = rng.uniform(-0.5, 0.5);
      else if (p.name.size() > 2 && p.name.substr(p.name.size() - 2) == ".b")
        for (int i = 0; i < p.tensor.size(); ++i)
          p.tensor.data()[i] = rng.uniform(-0.1, 0.1);
    }
    const int side = cfg.input_size;
    Tensor image = random_tensor({3, side, side}, rng, 0.0, 1.0);
    BinaryMask m{side, side,
                 std::vector<uint8_t>(static_cast<size_t>(side) * side, 0)};
    for (int r = side / 3; r < 2 * side / 3; ++r)
      for (int c = side / 4; c < 3 * side / 4; ++c)
        m.data[static_cast<size_t>(r) * side + c] = 1;
    Tensor mask_gt = mask_to_tensor(m);
    Tensor lsf_gt = sdf_to_tensor(signed_distance(m, side / 2.0));
    LossWeights w;
    w.k = 5.0;  // keep the DTC sigmoid out of saturation for the check
    const double ramp = rampup_weight(10.0, w.rampup_length, w.lambda_d);

    NamedGradCheck lab;
    lab.name = "labeled_loss_end_to_end";
    lab.report = gradcheck_params(
        [&]() {
          ModelOutput o = model.forward(image);
          Tensor total = mul_scalar(mask_loss(o.mask_logits, mask_gt), w.lambda_m);
          total = add(total, mul_scalar(cls_loss(o.class_logits, 1), w.lambda_c));
          total = add(total, mul_scalar(lsf_loss(o.level_set, lsf_gt), w.lambda_l));
          total = add(total, mul_scalar(dtc_loss(o.mask_logits, o.level_set, w.k), ramp));
          total = add(total, mul_scalar(arc_loss(o.cls_attention, o.mask_logits), w.lambda_a));
          return total;
        },
        model.parameters(), 1e-5, tol);
    out.push_back(std::move(lab));

    NamedGradCheck unlab;
    unlab.name = "unlabeled_loss_end_to_end";
    unlab.report = gradcheck_params(
        [&]() {
          ModelOutput o = model.forward(image);
          Tensor total = mul_scalar(cls_loss(o.class_logits, 0), w.lambda_c);
          total = add(total, mul_scalar(dtc_loss(o.mask_logits, o.level_set, w.k), ramp));
          total = add(total, mul_scalar(arc_loss(o.cls_attention, o.mask_logits), w.lambda_a));
          return total;
        },
        model.parameters(), 1e-5, tol);
    out.push_back(std::move(unlab));
  }

  if (inject_bug) {
    run("negative_control_broken_gradient", [&](Rng& g) {
      GradCheckReport rep = gradcheck(
          [&](const Tensor& x) { return sum(broken_square(x)); },
          random_tensor_away_from_zero({4}, g), 1e-5, tol);
      return rep;
    });
  }
  return out;
}

bool all_passed(const std::vector<NamedGradCheck>& results) {
  for (const auto& r : results)
    if (!r.report.passed) return false;
  return true;
}

}  // namespace mttu
