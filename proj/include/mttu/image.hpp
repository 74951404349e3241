#pragma once

#include <string>
#include <vector>

#include "mttu/levelset.hpp"
#include "mttu/tensor.hpp"

namespace mttu {

// RGB image, CHW, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> data;  // 3*H*W

  static Image zeros(int h, int w) {
    return Image{h, w, std::vector<double>(static_cast<size_t>(3) * h * w, 0.0)};
  }
  double& at(int c, int r, int col) {
    return data[(static_cast<size_t>(c) * height + r) * width + col];
  }
  double at(int c, int r, int col) const {
    return data[(static_cast<size_t>(c) * height + r) * width + col];
  }
  Tensor to_tensor() const { return Tensor::from({3, height, width}, data); }
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PNG I/O. Images are 8-bit RGB; masks are 8-bit grayscale, loaded as
// binary with pixels > 127 -> 1.
Image read_image_png(const std::string& path);
void write_image_png(const std::string& path, const Image& img);
BinaryMask read_mask_png(const std::string& path);
void write_mask_png(const std::string& path, const BinaryMask& mask);
// Grayscale heatmap in [0,1], for attention overlays.
void write_gray_png(const std::string& path, const std::vector<double>& v,
                    int h, int w);

// Plain (non-graph) geometric helpers shared by augmentation and TTA.
Image resize_bilinear(const Image& img, int oh, int ow);
Image flip_h(const Image& img);
Image flip_v(const Image& img);
Image rotate90(const Image& img, int quarter_turns);  // CCW, k in [0,3]
Image central_crop(const Image& img, double scale);

BinaryMask resize_nearest(const BinaryMask& m, int oh, int ow);
BinaryMask flip_h(const BinaryMask& m);
BinaryMask flip_v(const BinaryMask& m);
BinaryMask rotate90(const BinaryMask& m, int quarter_turns);
BinaryMask central_crop(const BinaryMask& m, double scale);

// Probability-map versions used to invert TTA transforms.
std::vector<double> resize_bilinear_map(const std::vector<double>& v, int h,
                                        int w, int oh, int ow);
std::vector<double> flip_map(const std::vector<double>& v, int h, int w,
                             bool horizontal);
std::vector<double> rotate90_map(const std::vector<double>& v, int h, int w,
                                 int quarter_turns);

}  // namespace mttu
