#include "mttu/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include "mttu/ops.hpp"

namespace mttu {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

uint8_t to_byte(double v) {
  int b = static_cast<int>(std::lround(v * 255.0));
  return static_cast<uint8_t>(std::clamp(b, 0, 255));
}

// Reads any PNG as 8-bit RGB rows.
std::vector<std::vector<uint8_t>> read_png_rgb(const std::string& path, int& h,
                                               int& w) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw FormatError("cannot open PNG: " + path);
  png_structp png =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("corrupt PNG: " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);
  h = static_cast<int>(png_get_image_height(png, info));
  w = static_cast<int>(png_get_image_width(png, info));
  std::vector<std::vector<uint8_t>> rows(static_cast<size_t>(h));
  std::vector<png_bytep> ptrs(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r) {
    rows[static_cast<size_t>(r)].resize(static_cast<size_t>(w) * 3);
    ptrs[static_cast<size_t>(r)] = rows[static_cast<size_t>(r)].data();
  }
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return rows;
}

void write_png_bytes(const std::string& path, const std::vector<uint8_t>& bytes,
                     int h, int w, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw FormatError("cannot write PNG: " + path);
  png_structp png =
      png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG write failure: " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(w),
               static_cast<png_uint_32>(h), 8,
               channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> ptrs(static_cast<size_t>(h));
  for (int r = 0; r < h; ++r)
    ptrs[static_cast<size_t>(r)] =
        const_cast<png_bytep>(bytes.data() + static_cast<size_t>(r) * w * channels);
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image_png(const std::string& path) {
  int h = 0, w = 0;
  auto rows = read_png_rgb(path, h, w);
  Image img = Image::zeros(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.at(ch, r, c) = rows[static_cast<size_t>(r)][static_cast<size_t>(c) * 3 + ch] / 255.0;
  return img;
}

void write_image_png(const std::string& path, const Image& img) {
  std::vector<uint8_t> bytes(static_cast<size_t>(img.height) * img.width * 3);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (int ch = 0; ch < 3; ++ch)
        bytes[(static_cast<size_t>(r) * img.width + c) * 3 + ch] =
            to_byte(img.at(ch, r, c));
  write_png_bytes(path, bytes, img.height, img.width, 3);
}

BinaryMask read_mask_png(const std::string& path) {
  int h = 0, w = 0;
  auto rows = read_png_rgb(path, h, w);
  BinaryMask m{h, w, std::vector<uint8_t>(static_cast<size_t>(h) * w)};
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      m.data[static_cast<size_t>(r) * w + c] =
          rows[static_cast<size_t>(r)][static_cast<size_t>(c) * 3] > 127 ? 1 : 0;
  return m;
}

void write_mask_png(const std::string& path, const BinaryMask& mask) {
  std::vector<uint8_t> bytes(mask.data.size());
  for (size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
  write_png_bytes(path, bytes, mask.height, mask.width, 1);
}

void write_gray_png(const std::string& path, const std::vector<double>& v,
                    int h, int w) {
  std::vector<uint8_t> bytes(v.size());
  for (size_t i = 0; i < v.size(); ++i) bytes[i] = to_byte(v[i]);
  write_png_bytes(path, bytes, h, w, 1);
}

Image resize_bilinear(const Image& img, int oh, int ow) {
  Image out = Image::zeros(oh, ow);
  out.data = resize_bilinear_map(img.data, img.height, img.width, oh, ow);
  return out;
}

std::vector<double> resize_bilinear_map(const std::vector<double>& v, int h,
                                        int w, int oh, int ow) {
  const int channels = static_cast<int>(v.size()) / (h * w);
  std::vector<int> r0, r1, c0, c1;
  std::vector<double> rw, cw;
  bilinear_axis_weights(h, oh, r0, r1, rw);
  bilinear_axis_weights(w, ow, c0, c1, cw);
  std::vector<double> out(static_cast<size_t>(channels) * oh * ow);
  for (int ch = 0; ch < channels; ++ch) {
    const double* in = v.data() + static_cast<size_t>(ch) * h * w;
    double* o = out.data() + static_cast<size_t>(ch) * oh * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) {
        double a = in[r0[i] * w + c0[j]], b = in[r0[i] * w + c1[j]];
        double c = in[r1[i] * w + c0[j]], d = in[r1[i] * w + c1[j]];
        double top = a + (b - a) * cw[j];
        double bot = c + (d - c) * cw[j];
        o[i * ow + j] = top + (bot - top) * rw[i];
      }
  }
  return out;
}

std::vector<double> flip_map(const std::vector<double>& v, int h, int w,
                             bool horizontal) {
  const int channels = static_cast<int>(v.size()) / (h * w);
  std::vector<double> out(v.size());
  for (int ch = 0; ch < channels; ++ch)
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) {
        const int sr = horizontal ? r : h - 1 - r;
        const int sc = horizontal ? w - 1 - c : c;
        out[(static_cast<size_t>(ch) * h + r) * w + c] =
            v[(static_cast<size_t>(ch) * h + sr) * w + sc];
      }
  return out;
}

std::vector<double> rotate90_map(const std::vector<double>& v, int h, int w,
                                 int quarter_turns) {
  std::vector<double> cur = v;
  int ch = static_cast<int>(v.size()) / (h * w);
  int hh = h, ww = w;
  for (int k = 0; k < ((quarter_turns % 4) + 4) % 4; ++k) {
    std::vector<double> next(cur.size());
    // 90 deg counterclockwise: out[i][j] = in[j][w-1-i], out is [w,h]
    for (int c = 0; c < ch; ++c)
      for (int i = 0; i < ww; ++i)
        for (int j = 0; j < hh; ++j)
          next[(static_cast<size_t>(c) * ww + i) * hh + j] =
              cur[(static_cast<size_t>(c) * hh + j) * ww + (ww - 1 - i)];
    cur = std::move(next);
    std::swap(hh, ww);
  }
  return cur;
}

Image flip_h(const Image& img) {
  return Image{img.height, img.width, flip_map(img.data, img.height, img.width, true)};
}
Image flip_v(const Image& img) {
  return Image{img.height, img.width, flip_map(img.data, img.height, img.width, false)};
}
Image rotate90(const Image& img, int quarter_turns) {
  Image out;
  out.data = rotate90_map(img.data, img.height, img.width, quarter_turns);
  if (quarter_turns % 2 == 0) {
    out.height = img.height;
    out.width = img.width;
  } else {
    out.height = img.width;
    out.width = img.height;
  }
  return out;
}

Image central_crop(const Image& img, double scale) {
  const int ch = static_cast<int>(std::lround(img.height * scale));
  const int cw = static_cast<int>(std::lround(img.width * scale));
  const int r0 = (img.height - ch) / 2, c0 = (img.width - cw) / 2;
  Image out = Image::zeros(ch, cw);
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < ch; ++r)
      for (int col = 0; col < cw; ++col)
        out.at(c, r, col) = img.at(c, r0 + r, c0 + col);
  return out;
}

namespace {
std::vector<double> mask_to_double(const BinaryMask& m) {
  return std::vector<double>(m.data.begin(), m.data.end());
}
BinaryMask double_to_mask(const std::vector<double>& v, int h, int w) {
  BinaryMask m{h, w, std::vector<uint8_t>(static_cast<size_t>(h) * w)};
  for (size_t i = 0; i < m.data.size(); ++i) m.data[i] = v[i] > 0.5 ? 1 : 0;
  return m;
}
}  // namespace

BinaryMask resize_nearest(const BinaryMask& m, int oh, int ow) {
  BinaryMask out{oh, ow, std::vector<uint8_t>(static_cast<size_t>(oh) * ow)};
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      int sr = std::min(m.height - 1,
                        static_cast<int>((r + 0.5) * m.height / oh));
      int sc = std::min(m.width - 1,
                        static_cast<int>((c + 0.5) * m.width / ow));
      out.data[static_cast<size_t>(r) * ow + c] = m.at(sr, sc);
    }
  return out;
}

BinaryMask flip_h(const BinaryMask& m) {
  return double_to_mask(flip_map(mask_to_double(m), m.height, m.width, true),
                        m.height, m.width);
}
BinaryMask flip_v(const BinaryMask& m) {
  return double_to_mask(flip_map(mask_to_double(m), m.height, m.width, false),
                        m.height, m.width);
}
BinaryMask rotate90(const BinaryMask& m, int quarter_turns) {
  auto v = rotate90_map(mask_to_double(m), m.height, m.width, quarter_turns);
  if (quarter_turns % 2 == 0) return double_to_mask(v, m.height, m.width);
  return double_to_mask(v, m.width, m.height);
}

BinaryMask central_crop(const BinaryMask& m, double scale) {
  const int ch = static_cast<int>(std::lround(m.height * scale));
  const int cw = static_cast<int>(std::lround(m.width * scale));
  const int r0 = (m.height - ch) / 2, c0 = (m.width - cw) / 2;
  BinaryMask out{ch, cw, std::vector<uint8_t>(static_cast<size_t>(ch) * cw)};
  for (int r = 0; r < ch; ++r)
    for (int c = 0; c < cw; ++c)
      out.data[static_cast<size_t>(r) * cw + c] = m.at(r0 + r, c0 + c);
  return out;
}

}  // namespace mttu
