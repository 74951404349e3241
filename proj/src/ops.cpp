#include "mttu/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstring>

namespace mttu {

namespace {

using MatRM =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using CMapM = Eigen::Map<const MatRM>;

std::shared_ptr<TensorNode> make_node(std::vector<int> shape, const char* op,
                                      std::vector<Tensor> parents) {
  auto n = std::make_shared<TensorNode>();
  n->shape = std::move(shape);
  n->value.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0);
  n->op = op;
  for (const auto& p : parents) {
    n->parents.push_back(p.node());
    if (p.requires_grad()) n->requires_grad = true;
  }
  return n;
}

Tensor finish(std::shared_ptr<TensorNode> n) {
  check_finite(*n);
  if (!n->requires_grad) n->backprop = nullptr;
  return Tensor(std::move(n));
}

bool wants_grad(const TensorNode& out, size_t parent) {
  return out.parents[parent]->requires_grad;
}

std::vector<double>& pgrad(TensorNode& out, size_t parent) {
  out.parents[parent]->ensure_grad();
  return out.parents[parent]->grad;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch");
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto n = make_node(a.shape(), "add", {a, b});
  for (int i = 0; i < n->size(); ++i)
    n->value[i] = a.data()[i] + b.data()[i];
  n->backprop = [](TensorNode& o) {
    for (size_t p = 0; p < 2; ++p) {
      if (!wants_grad(o, p)) continue;
      auto& g = pgrad(o, p);
      for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i];
    }
  };
  return finish(n);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto n = make_node(a.shape(), "sub", {a, b});
  for (int i = 0; i < n->size(); ++i)
    n->value[i] = a.data()[i] - b.data()[i];
  n->backprop = [](TensorNode& o) {
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      for (int i = 0; i < o.size(); ++i) g[i] -= o.grad[i];
    }
  };
  return finish(n);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto n = make_node(a.shape(), "mul", {a, b});
  for (int i = 0; i < n->size(); ++i)
    n->value[i] = a.data()[i] * b.data()[i];
  n->backprop = [](TensorNode& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i] * bv[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i] * av[i];
    }
  };
  return finish(n);
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  auto n = make_node(a.shape(), "div", {a, b});
  for (int i = 0; i < n->size(); ++i)
    n->value[i] = a.data()[i] / b.data()[i];
  n->backprop = [](TensorNode& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i] / bv[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      for (int i = 0; i < o.size(); ++i)
        g[i] -= o.grad[i] * av[i] / (bv[i] * bv[i]);
    }
  };
  return finish(n);
}

Tensor add_scalar(const Tensor& a, double c) {
  auto n = make_node(a.shape(), "add_scalar", {a});
  for (int i = 0; i < n->size(); ++i) n->value[i] = a.data()[i] + c;
  n->backprop = [](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i];
  };
  return finish(n);
}

Tensor mul_scalar(const Tensor& a, double c) {
  auto n = make_node(a.shape(), "mul_scalar", {a});
  for (int i = 0; i < n->size(); ++i) n->value[i] = a.data()[i] * c;
  n->backprop = [c](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i] * c;
  };
  return finish(n);
}

Tensor relu(const Tensor& x) {
  auto n = make_node(x.shape(), "relu", {x});
  for (int i = 0; i < n->size(); ++i)
    n->value[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  n->backprop = [](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    const auto& xv = o.parents[0]->value;
    for (int i = 0; i < o.size(); ++i)
      if (xv[i] > 0.0) g[i] += o.grad[i];
  };
  return finish(n);
}

Tensor sigmoid(const Tensor& x) {
  auto n = make_node(x.shape(), "sigmoid", {x});
  for (int i = 0; i < n->size(); ++i) {
    double v = x.data()[i];
    // split on sign so exp never overflows
    n->value[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                           : std::exp(v) / (1.0 + std::exp(v));
  }
  n->backprop = [](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < o.size(); ++i) {
      double s = o.value[i];
      g[i] += o.grad[i] * s * (1.0 - s);
    }
  };
  return finish(n);
}

Tensor tanh_op(const Tensor& x) {
  auto n = make_node(x.shape(), "tanh", {x});
  for (int i = 0; i < n->size(); ++i) n->value[i] = std::tanh(x.data()[i]);
  n->backprop = [](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < o.size(); ++i)
      g[i] += o.grad[i] * (1.0 - o.value[i] * o.value[i]);
  };
  return finish(n);
}

Tensor sum(const Tensor& x) {
  auto n = make_node({1}, "sum", {x});
  double acc = 0.0;
  for (int i = 0; i < x.size(); ++i) acc += x.data()[i];
  n->value[0] = acc;
  n->backprop = [](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (auto& gi : g) gi += o.grad[0];
  };
  return finish(n);
}

Tensor mean(const Tensor& x) { return mul_scalar(sum(x), 1.0 / x.size()); }

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  auto n = make_node({1}, "dot", {a, b});
  double acc = 0.0;
  for (int i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
  n->value[0] = acc;
  n->backprop = [](TensorNode& o) {
    const auto& av = o.parents[0]->value;
    const auto& bv = o.parents[1]->value;
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * bv[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      for (size_t i = 0; i < g.size(); ++i) g[i] += o.grad[0] * av[i];
    }
  };
  return finish(n);
}

Tensor div_bcast(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) throw DimensionError("div_bcast: divisor must be scalar");
  auto n = make_node(a.shape(), "div_bcast", {a, s});
  double sv = s.data()[0];
  for (int i = 0; i < n->size(); ++i) n->value[i] = a.data()[i] / sv;
  n->backprop = [](TensorNode& o) {
    double sv = o.parents[1]->value[0];
    const auto& av = o.parents[0]->value;
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i] / sv;
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      double acc = 0.0;
      for (int i = 0; i < o.size(); ++i)
        acc -= o.grad[i] * av[i] / (sv * sv);
      g[0] += acc;
    }
  };
  return finish(n);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: inner extents disagree");
  const int m = a.dim(0), k = a.dim(1), nn = b.dim(1);
  auto n = make_node({m, nn}, "matmul", {a, b});
  CMapM A(a.data(), m, k), B(b.data(), k, nn);
  MapM C(n->value.data(), m, nn);
  C.noalias() = A * B;
  n->backprop = [m, k, nn](TensorNode& o) {
    CMapM G(o.grad.data(), m, nn);
    CMapM A(o.parents[0]->value.data(), m, k);
    CMapM B(o.parents[1]->value.data(), k, nn);
    if (wants_grad(o, 0)) {
      MapM GA(pgrad(o, 0).data(), m, k);
      GA.noalias() += G * B.transpose();
    }
    if (wants_grad(o, 1)) {
      MapM GB(pgrad(o, 1).data(), k, nn);
      GB.noalias() += A.transpose() * G;
    }
  };
  return finish(n);
}

Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2) throw DimensionError("transpose2d: rank-2 only");
  const int r = x.dim(0), c = x.dim(1);
  auto n = make_node({c, r}, "transpose2d", {x});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->value[j * r + i] = x.data()[i * c + j];
  n->backprop = [r, c](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  };
  return finish(n);
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
  if (x.ndim() != 2 || b.ndim() != 1 || b.dim(0) != x.dim(1))
    throw DimensionError("add_rowvec: bias width mismatch");
  const int r = x.dim(0), c = x.dim(1);
  auto n = make_node({r, c}, "add_rowvec", {x, b});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j)
      n->value[i * c + j] = x.data()[i * c + j] + b.data()[j];
  n->backprop = [r, c](TensorNode& o) {
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (int i = 0; i < r * c; ++i) g[i] += o.grad[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) g[j] += o.grad[i * c + j];
    }
  };
  return finish(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

Tensor reshape(const Tensor& x, std::vector<int> new_shape) {
  if (shape_numel(new_shape) != x.size())
    throw DimensionError("reshape: element count mismatch");
  auto n = make_node(std::move(new_shape), "reshape", {x});
  n->value = x.values();
  n->backprop = [](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < o.size(); ++i) g[i] += o.grad[i];
  };
  return finish(n);
}

Tensor slice_rows(const Tensor& x, int start, int len) {
  if (x.ndim() != 2) throw DimensionError("slice_rows: rank-2 only");
  const int r = x.dim(0), c = x.dim(1);
  if (start < 0 || len <= 0 || start + len > r)
    throw DimensionError("slice_rows: range out of bounds");
  auto n = make_node({len, c}, "slice_rows", {x});
  std::copy_n(x.data() + start * c, len * c, n->value.begin());
  n->backprop = [start, c](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < o.size(); ++i) g[start * c + i] += o.grad[i];
  };
  return finish(n);
}

Tensor slice_cols(const Tensor& x, int start, int len) {
  if (x.ndim() != 2) throw DimensionError("slice_cols: rank-2 only");
  const int r = x.dim(0), c = x.dim(1);
  if (start < 0 || len <= 0 || start + len > c)
    throw DimensionError("slice_cols: range out of bounds");
  auto n = make_node({r, len}, "slice_cols", {x});
  for (int i = 0; i < r; ++i)
    std::copy_n(x.data() + i * c + start, len, n->value.begin() + i * len);
  n->backprop = [start, len, r, c](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < len; ++j)
        g[i * c + start + j] += o.grad[i * len + j];
  };
  return finish(n);
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_cols: empty input");
  const int r = xs[0].dim(0);
  int total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != 2 || x.dim(0) != r)
      throw DimensionError("concat_cols: row count mismatch");
    total += x.dim(1);
  }
  auto n = make_node({r, total}, "concat_cols", xs);
  std::vector<int> widths;
  for (const auto& x : xs) widths.push_back(x.dim(1));
  int off = 0;
  for (size_t p = 0; p < xs.size(); ++p) {
    const int w = widths[p];
    for (int i = 0; i < r; ++i)
      std::copy_n(xs[p].data() + i * w, w, n->value.begin() + i * total + off);
    off += w;
  }
  n->backprop = [r, total, widths](TensorNode& o) {
    int off = 0;
    for (size_t p = 0; p < o.parents.size(); ++p) {
      const int w = widths[p];
      if (wants_grad(o, p)) {
        auto& g = pgrad(o, p);
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < w; ++j)
            g[i * w + j] += o.grad[i * total + off + j];
      }
      off += w;
    }
  };
  return finish(n);
}

Tensor concat_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw DimensionError("concat_rows: empty input");
  const int c = xs[0].dim(1);
  int total = 0;
  for (const auto& x : xs) {
    if (x.ndim() != 2 || x.dim(1) != c)
      throw DimensionError("concat_rows: column count mismatch");
    total += x.dim(0);
  }
  auto n = make_node({total, c}, "concat_rows", xs);
  std::vector<int> counts;
  int off = 0;
  for (const auto& x : xs) {
    counts.push_back(x.size());
    std::copy_n(x.data(), x.size(), n->value.begin() + off);
    off += x.size();
  }
  n->backprop = [counts](TensorNode& o) {
    int off = 0;
    for (size_t p = 0; p < o.parents.size(); ++p) {
      if (wants_grad(o, p)) {
        auto& g = pgrad(o, p);
        for (int i = 0; i < counts[p]; ++i) g[i] += o.grad[off + i];
      }
      off += counts[p];
    }
  };
  return finish(n);
}

Tensor detach(const Tensor& x) {
  auto n = std::make_shared<TensorNode>();
  n->shape = x.shape();
  n->value = x.values();
  n->op = "detach";
  return Tensor(std::move(n));
}

Tensor softmax(const Tensor& x) {
  const auto& sh = x.shape();
  const int d = sh.back();
  const int rows = x.size() / d;
  auto n = make_node(sh, "softmax", {x});
  for (int r = 0; r < rows; ++r) {
    const double* in = x.data() + r * d;
    double* out = n->value.data() + r * d;
    double mx = in[0];
    for (int j = 1; j < d; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < d; ++j) {
      out[j] = std::exp(in[j] - mx);
      z += out[j];
    }
    for (int j = 0; j < d; ++j) out[j] /= z;
  }
  n->backprop = [d, rows](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int r = 0; r < rows; ++r) {
      const double* s = o.value.data() + r * d;
      const double* go = o.grad.data() + r * d;
      double inner = 0.0;
      for (int j = 0; j < d; ++j) inner += go[j] * s[j];
      for (int j = 0; j < d; ++j) g[r * d + j] += s[j] * (go[j] - inner);
    }
  };
  return finish(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const int d = x.shape().back();
  if (gain.size() != d || bias.size() != d)
    throw DimensionError("layer_norm: gain/bias width mismatch");
  const int rows = x.size() / d;
  auto n = make_node(x.shape(), "layer_norm", {x, gain, bias});
  // cache per-row mean and inverse stddev for the backward pass
  auto stats = std::make_shared<std::vector<double>>(2 * rows);
  for (int r = 0; r < rows; ++r) {
    const double* in = x.data() + r * d;
    double mu = 0.0;
    for (int j = 0; j < d; ++j) mu += in[j];
    mu /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
    var /= d;
    double inv = 1.0 / std::sqrt(var + eps);
    (*stats)[2 * r] = mu;
    (*stats)[2 * r + 1] = inv;
    double* out = n->value.data() + r * d;
    for (int j = 0; j < d; ++j)
      out[j] = (in[j] - mu) * inv * gain.data()[j] + bias.data()[j];
  }
  n->backprop = [d, rows, stats](TensorNode& o) {
    const auto& xv = o.parents[0]->value;
    const auto& gv = o.parents[1]->value;
    const bool wx = wants_grad(o, 0), wg = wants_grad(o, 1),
               wb = wants_grad(o, 2);
    for (int r = 0; r < rows; ++r) {
      const double mu = (*stats)[2 * r], inv = (*stats)[2 * r + 1];
      const double* in = xv.data() + r * d;
      const double* go = o.grad.data() + r * d;
      if (wg) {
        auto& g = pgrad(o, 1);
        for (int j = 0; j < d; ++j) g[j] += go[j] * (in[j] - mu) * inv;
      }
      if (wb) {
        auto& g = pgrad(o, 2);
        for (int j = 0; j < d; ++j) g[j] += go[j];
      }
      if (wx) {
        auto& g = pgrad(o, 0);
        // dL/dxhat, then the standard layernorm input gradient
        double s1 = 0.0, s2 = 0.0;
        for (int j = 0; j < d; ++j) {
          double dxh = go[j] * gv[j];
          s1 += dxh;
          s2 += dxh * (in[j] - mu) * inv;
        }
        for (int j = 0; j < d; ++j) {
          double dxh = go[j] * gv[j];
          double xh = (in[j] - mu) * inv;
          g[r * d + j] += inv * (dxh - s1 / d - xh * s2 / d);
        }
      }
    }
  };
  return finish(n);
}

namespace {

// im2col for CHW input: rows = Cin*kh*kw, cols = OH*OW.
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, double* cols) {
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        double* row = cols + ((c * kh + ki) * kw + kj) * (oh * ow);
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) {
            std::fill_n(row + oi * ow, ow, 0.0);
            continue;
          }
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * stride + kj - pad;
            row[oi * ow + oj] =
                (jj < 0 || jj >= w) ? 0.0 : x[(c * h + ii) * w + jj];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int cin, int h, int w, int kh, int kw,
                int stride, int pad, int oh, int ow, double* gx) {
  for (int c = 0; c < cin; ++c) {
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const double* row = cols + ((c * kh + ki) * kw + kj) * (oh * ow);
        for (int oi = 0; oi < oh; ++oi) {
          const int ii = oi * stride + ki - pad;
          if (ii < 0 || ii >= h) continue;
          for (int oj = 0; oj < ow; ++oj) {
            const int jj = oj * stride + kj - pad;
            if (jj < 0 || jj >= w) continue;
            gx[(c * h + ii) * w + jj] += row[oi * ow + oj];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  if (x.ndim() != 3 || w.ndim() != 4)
    throw DimensionError("conv2d: expects CHW input and OIHW weight");
  const int cin = x.dim(0), h = x.dim(1), ww = x.dim(2);
  const int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != cin) throw DimensionError("conv2d: channel mismatch");
  if (b.size() != cout) throw DimensionError("conv2d: bias width mismatch");
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (ww + 2 * pad - kw) / stride + 1;
  if (oh <= 0 || ow <= 0) throw DimensionError("conv2d: empty output");

  auto n = make_node({cout, oh, ow}, "conv2d", {x, w, b});
  const int krows = cin * kh * kw, ocols = oh * ow;
  std::vector<double> cols(static_cast<size_t>(krows) * ocols);
  im2col(x.data(), cin, h, ww, kh, kw, stride, pad, oh, ow, cols.data());
  CMapM W2(w.data(), cout, krows), C(cols.data(), krows, ocols);
  MapM Y(n->value.data(), cout, ocols);
  Y.noalias() = W2 * C;
  for (int c = 0; c < cout; ++c)
    for (int i = 0; i < ocols; ++i) n->value[c * ocols + i] += b.data()[c];

  // im2col is recomputed in backward instead of cached: the training batch
  // holds 8 full graphs alive at once and the col buffers dominate memory.
  n->backprop = [cin, h, ww, cout, kh, kw, stride, pad, oh, ow, krows,
                 ocols](TensorNode& o) {
    CMapM G(o.grad.data(), cout, ocols);
    if (wants_grad(o, 2)) {
      auto& gb = pgrad(o, 2);
      for (int c = 0; c < cout; ++c) {
        double acc = 0.0;
        for (int i = 0; i < ocols; ++i) acc += o.grad[c * ocols + i];
        gb[c] += acc;
      }
    }
    const bool wx = wants_grad(o, 0), wwt = wants_grad(o, 1);
    if (!wx && !wwt) return;
    std::vector<double> cols(static_cast<size_t>(krows) * ocols);
    im2col(o.parents[0]->value.data(), cin, h, ww, kh, kw, stride, pad, oh, ow,
           cols.data());
    CMapM C(cols.data(), krows, ocols);
    if (wwt) {
      MapM GW(pgrad(o, 1).data(), cout, krows);
      GW.noalias() += G * C.transpose();
    }
    if (wx) {
      CMapM W2(o.parents[1]->value.data(), cout, krows);
      std::vector<double> gcols(static_cast<size_t>(krows) * ocols);
      MapM GC(gcols.data(), krows, ocols);
      GC.noalias() = W2.transpose() * G;
      col2im_add(gcols.data(), cin, h, ww, kh, kw, stride, pad, oh, ow,
                 pgrad(o, 0).data());
    }
  };
  return finish(n);
}

void bilinear_axis_weights(int in, int out, std::vector<int>& i0,
                           std::vector<int>& i1, std::vector<double>& w1) {
  i0.resize(out);
  i1.resize(out);
  w1.resize(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    src = std::max(0.0, std::min(src, static_cast<double>(in - 1)));
    int lo = static_cast<int>(std::floor(src));
    int hi = std::min(lo + 1, in - 1);
    i0[o] = lo;
    i1[o] = hi;
    w1[o] = src - lo;
  }
}

Tensor bilinear_resize(const Tensor& x, int out_h, int out_w) {
  if (x.ndim() != 3) throw DimensionError("bilinear_resize: CHW input only");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  auto n = make_node({c, out_h, out_w}, "bilinear_resize", {x});
  std::vector<int> r0, r1, c0, c1;
  std::vector<double> rw, cw;
  bilinear_axis_weights(h, out_h, r0, r1, rw);
  bilinear_axis_weights(w, out_w, c0, c1, cw);
  for (int ch = 0; ch < c; ++ch) {
    const double* in = x.data() + ch * h * w;
    double* out = n->value.data() + ch * out_h * out_w;
    for (int i = 0; i < out_h; ++i) {
      for (int j = 0; j < out_w; ++j) {
        double a = in[r0[i] * w + c0[j]], bq = in[r0[i] * w + c1[j]];
        double cc = in[r1[i] * w + c0[j]], d = in[r1[i] * w + c1[j]];
        double top = a + (bq - a) * cw[j];
        double bot = cc + (d - cc) * cw[j];
        out[i * out_w + j] = top + (bot - top) * rw[i];
      }
    }
  }
  n->backprop = [c, h, w, out_h, out_w, r0, r1, rw, c0, c1,
                 cw](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int ch = 0; ch < c; ++ch) {
      double* gx = g.data() + ch * h * w;
      const double* go = o.grad.data() + ch * out_h * out_w;
      for (int i = 0; i < out_h; ++i) {
        for (int j = 0; j < out_w; ++j) {
          double gv = go[i * out_w + j];
          double wr = rw[i], wc = cw[j];
          gx[r0[i] * w + c0[j]] += gv * (1 - wr) * (1 - wc);
          gx[r0[i] * w + c1[j]] += gv * (1 - wr) * wc;
          gx[r1[i] * w + c0[j]] += gv * wr * (1 - wc);
          gx[r1[i] * w + c1[j]] += gv * wr * wc;
        }
      }
    }
  };
  return finish(n);
}

Tensor concat_ch(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(1) != b.dim(1) ||
      a.dim(2) != b.dim(2))
    throw DimensionError("concat_ch: spatial size mismatch");
  const int ca = a.dim(0), cb = b.dim(0), h = a.dim(1), w = a.dim(2);
  auto n = make_node({ca + cb, h, w}, "concat_ch", {a, b});
  std::copy_n(a.data(), ca * h * w, n->value.begin());
  std::copy_n(b.data(), cb * h * w, n->value.begin() + ca * h * w);
  n->backprop = [ca, cb, h, w](TensorNode& o) {
    const int na = ca * h * w, nb = cb * h * w;
    if (wants_grad(o, 0)) {
      auto& g = pgrad(o, 0);
      for (int i = 0; i < na; ++i) g[i] += o.grad[i];
    }
    if (wants_grad(o, 1)) {
      auto& g = pgrad(o, 1);
      for (int i = 0; i < nb; ++i) g[i] += o.grad[na + i];
    }
  };
  return finish(n);
}

Tensor slice_ch(const Tensor& x, int c) {
  if (x.ndim() != 3) throw DimensionError("slice_ch: CHW input only");
  if (c < 0 || c >= x.dim(0)) throw DimensionError("slice_ch: channel oob");
  const int h = x.dim(1), w = x.dim(2);
  auto n = make_node({h, w}, "slice_ch", {x});
  std::copy_n(x.data() + c * h * w, h * w, n->value.begin());
  n->backprop = [c, h, w](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    for (int i = 0; i < h * w; ++i) g[c * h * w + i] += o.grad[i];
  };
  return finish(n);
}

Tensor cls_cross_entropy(const Tensor& logits, int label) {
  if (logits.ndim() != 1)
    throw DimensionError("cls_cross_entropy: expects a logit vector");
  const int c = logits.dim(0);
  if (label < 0 || label >= c)
    throw ContractError("cls_cross_entropy: label out of range");
  auto n = make_node({1}, "cls_cross_entropy", {logits});
  const double* in = logits.data();
  double mx = in[0];
  for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
  double z = 0.0;
  for (int j = 0; j < c; ++j) z += std::exp(in[j] - mx);
  n->value[0] = std::log(z) + mx - in[label];
  n->backprop = [c, label](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    const double* in = o.parents[0]->value.data();
    double mx = in[0];
    for (int j = 1; j < c; ++j) mx = std::max(mx, in[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(in[j] - mx);
    for (int j = 0; j < c; ++j) {
      double p = std::exp(in[j] - mx) / z;
      g[j] += o.grad[0] * (p - (j == label ? 1.0 : 0.0));
    }
  };
  return finish(n);
}

Tensor mask_cross_entropy(const Tensor& logits2hw, const Tensor& target_hw) {
  if (logits2hw.ndim() != 3 || logits2hw.dim(0) != 2)
    throw DimensionError("mask_cross_entropy: expects [2,H,W] logits");
  const int h = logits2hw.dim(1), w = logits2hw.dim(2), np = h * w;
  if (target_hw.size() != np)
    throw DimensionError("mask_cross_entropy: target size mismatch");
  for (int i = 0; i < np; ++i) {
    double t = target_hw.data()[i];
    if (t != 0.0 && t != 1.0)
      throw ContractError("mask_cross_entropy: target must be binary");
  }
  auto n = make_node({1}, "mask_cross_entropy", {logits2hw, target_hw});
  const double* l0 = logits2hw.data();
  const double* l1 = logits2hw.data() + np;
  double acc = 0.0;
  for (int i = 0; i < np; ++i) {
    double mx = std::max(l0[i], l1[i]);
    double lse = std::log(std::exp(l0[i] - mx) + std::exp(l1[i] - mx)) + mx;
    double lt = target_hw.data()[i] > 0.5 ? l1[i] : l0[i];
    acc += lse - lt;
  }
  n->value[0] = acc / np;
  n->backprop = [np](TensorNode& o) {
    if (!wants_grad(o, 0)) return;
    auto& g = pgrad(o, 0);
    const double* l0 = o.parents[0]->value.data();
    const double* l1 = l0 + np;
    const double* t = o.parents[1]->value.data();
    const double s = o.grad[0] / np;
    for (int i = 0; i < np; ++i) {
      double mx = std::max(l0[i], l1[i]);
      double e0 = std::exp(l0[i] - mx), e1 = std::exp(l1[i] - mx);
      double p1 = e1 / (e0 + e1);
      double tgt = t[i] > 0.5 ? 1.0 : 0.0;
      g[i] += s * ((1.0 - p1) - (1.0 - tgt));
      g[np + i] += s * (p1 - tgt);
    }
  };
  return finish(n);
}

}  // namespace mttu
