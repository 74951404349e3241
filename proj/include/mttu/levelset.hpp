#pragma once

#include <cstdint>
#include <vector>

#include "mttu/ops.hpp"
#include "mttu/tensor.hpp"

namespace mttu {

// Per-pixel {0,1}; 1 = lesion foreground.
struct BinaryMask {
  int height = 0;
  int width = 0;
  std::vector<uint8_t> data;  // row-major

  uint8_t at(int r, int c) const { return data[static_cast<size_t>(r) * width + c]; }
  int size() const { return height * width; }
  int foreground_area() const;
};

// Signed distance per pixel: negative inside the lesion, positive outside,
// normalized to [-1, 1] after truncation.
struct SignedDistanceField {
  int height = 0;
  int width = 0;
  std::vector<double> data;
};

// Exact Euclidean distance to the nearest opposite-class pixel, negated on
// the foreground. No pixel carries 0: on a discrete grid the foreground
// distance-to-background is always >= 1. Degenerate single-class masks yield
// a constant +/- truncation-scale field, handled by the callers below.
std::vector<double> raw_signed_distance(const BinaryMask& mask);

// Truncation-normalized field: raw values clamped to +/-truncation_radius,
// then divided by truncation_radius. Degenerate masks give constant -1 / +1.
SignedDistanceField signed_distance(const BinaryMask& mask,
                                    double truncation_radius);

// O(n^2 m^2) reference; grids above 64x64 are refused.
std::vector<double> brute_force_signed_distance(const BinaryMask& mask);

double default_truncation_radius(int height, int width);

// Differentiable transform back to a soft mask: Sigmoid(-k * L), elementwise,
// differentiable w.r.t. L.
Tensor lsf_to_mask(const Tensor& lsf, double k);

Tensor sdf_to_tensor(const SignedDistanceField& f);
Tensor mask_to_tensor(const BinaryMask& m);

}  // namespace mttu
