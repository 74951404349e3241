#include "mttu/levelset.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mttu {

namespace {

constexpr double kInf = 1e18;

// 1-D squared distance transform (lower envelope of parabolas),
// Felzenszwalb & Huttenlocher. f holds squared distances, out gets the
// transformed row.
void dt1d(const std::vector<double>& f, std::vector<double>& out, int n,
          std::vector<int>& v, std::vector<double>& z) {
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    out[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

// Exact squared EDT to the set of pixels where `in_set` is true.
std::vector<double> squared_edt(const BinaryMask& mask, bool to_foreground) {
  const int h = mask.height, w = mask.width;
  std::vector<double> d(static_cast<size_t>(h) * w);
  // column pass
  std::vector<double> f(std::max(h, w)), out(std::max(h, w));
  std::vector<int> v(std::max(h, w));
  std::vector<double> z(static_cast<size_t>(std::max(h, w)) + 1);
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r)
      f[r] = (mask.at(r, c) == (to_foreground ? 1 : 0)) ? 0.0 : kInf;
    dt1d(f, out, h, v, z);
    for (int r = 0; r < h; ++r) d[static_cast<size_t>(r) * w + c] = out[r];
  }
  // row pass
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) f[c] = d[static_cast<size_t>(r) * w + c];
    dt1d(f, out, w, v, z);
    for (int c = 0; c < w; ++c) d[static_cast<size_t>(r) * w + c] = out[c];
  }
  return d;
}

}  // namespace

int BinaryMask::foreground_area() const {
  int a = 0;
  for (uint8_t p : data) a += p;
  return a;
}

std::vector<double> raw_signed_distance(const BinaryMask& mask) {
  if (mask.height <= 0 || mask.width <= 0)
    throw ContractError("raw_signed_distance: zero-area grid");
  const int n = mask.size();
  const int fg = mask.foreground_area();
  std::vector<double> field(static_cast<size_t>(n));
  if (fg == 0 || fg == n) {
    // degenerate: no opposite class anywhere
    std::fill(field.begin(), field.end(), fg == n ? -kInf : kInf);
    return field;
  }
  std::vector<double> d_to_fg = squared_edt(mask, true);
  std::vector<double> d_to_bg = squared_edt(mask, false);
  for (int i = 0; i < n; ++i) {
    field[static_cast<size_t>(i)] = mask.data[static_cast<size_t>(i)]
                                        ? -std::sqrt(d_to_bg[static_cast<size_t>(i)])
                                        : std::sqrt(d_to_fg[static_cast<size_t>(i)]);
  }
  return field;
}

SignedDistanceField signed_distance(const BinaryMask& mask,
                                    double truncation_radius) {
  if (truncation_radius < 1.0)
    throw ContractError("signed_distance: truncation_radius must be >= 1");
  std::vector<double> raw = raw_signed_distance(mask);
  SignedDistanceField f;
  f.height = mask.height;
  f.width = mask.width;
  f.data.resize(raw.size());
  for (size_t i = 0; i < raw.size(); ++i) {
    double v = std::clamp(raw[i], -truncation_radius, truncation_radius);
    f.data[i] = v / truncation_radius;
  }
  return f;
}

std::vector<double> brute_force_signed_distance(const BinaryMask& mask) {
  if (mask.height <= 0 || mask.width <= 0)
    throw ContractError("brute_force_signed_distance: zero-area grid");
  if (mask.height > 64 || mask.width > 64)
    throw ContractError("brute_force_signed_distance: grid above 64x64 refused");
  const int h = mask.height, w = mask.width, n = mask.size();
  const int fg = mask.foreground_area();
  std::vector<double> field(static_cast<size_t>(n));
  if (fg == 0 || fg == n) {
    std::fill(field.begin(), field.end(), fg == n ? -kInf : kInf);
    return field;
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const uint8_t self = mask.at(r, c);
      double best = kInf;
      for (int r2 = 0; r2 < h; ++r2) {
        for (int c2 = 0; c2 < w; ++c2) {
          if (mask.at(r2, c2) == self) continue;
          const double d2 = static_cast<double>((r - r2) * (r - r2) +
                                                (c - c2) * (c - c2));
          best = std::min(best, d2);
        }
      }
      field[static_cast<size_t>(r) * w + c] =
          self ? -std::sqrt(best) : std::sqrt(best);
    }
  }
  return field;
}

double default_truncation_radius(int height, int width) {
  return std::max(1.0, std::min(height, width) / 2.0);
}

Tensor lsf_to_mask(const Tensor& lsf, double k) {
  if (k <= 0.0) throw ContractError("lsf_to_mask: k must be positive");
  return sigmoid(mul_scalar(lsf, -k));
}

Tensor sdf_to_tensor(const SignedDistanceField& f) {
  return Tensor::from({f.height, f.width}, f.data);
}

Tensor mask_to_tensor(const BinaryMask& m) {
  std::vector<double> v(m.data.begin(), m.data.end());
  return Tensor::from({m.height, m.width}, std::move(v));
}

}  // namespace mttu
