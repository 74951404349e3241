#include "mttu/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace mttu {

int DatasetManifest::labeled_count() const {
  int n = 0;
  for (const auto& e : entries) n += e.mask_path.has_value() ? 1 : 0;
  return n;
}

int DatasetManifest::unlabeled_count() const {
  return static_cast<int>(entries.size()) - labeled_count();
}

DatasetManifest load_dataset(const std::string& root) {
  const fs::path base(root);
  const fs::path labels = base / "labels.csv";
  if (!fs::exists(labels))
    throw FormatError("missing labels.csv under " + root);
  std::ifstream in(labels);
  std::string line;
  std::getline(in, line);  // header
  DatasetManifest m;
  m.root = root;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw FormatError("malformed labels.csv row: " + line);
    ManifestEntry e;
    e.id = line.substr(0, comma);
    e.label = std::stoi(line.substr(comma + 1));
    const fs::path img = base / "images" / (e.id + ".png");
    if (!fs::exists(img))
      throw FormatError("referenced image missing: " + img.string());
    e.image_path = img.string();
    const fs::path msk = base / "masks" / (e.id + ".png");
    if (fs::exists(msk)) e.mask_path = msk.string();
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw FormatError("empty dataset manifest: " + root);
  return m;
}

Sample load_sample(const ManifestEntry& entry) {
  Sample s;
  s.id = entry.id;
  s.label = entry.label;
  s.image = read_image_png(entry.image_path);
  if (entry.mask_path) {
    BinaryMask mask = read_mask_png(*entry.mask_path);
    if (mask.height != s.image.height || mask.width != s.image.width)
      throw FormatError("mask/image size mismatch for id " + entry.id);
    s.mask = std::move(mask);
  }
  return s;
}

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

struct Blob {
  double cx, cy, radius, elong, theta;
  std::vector<double> amp, phase;  // border harmonics, index m starts at 2
};

bool point_inside(const Blob& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double ct = std::cos(b.theta), st = std::sin(b.theta);
  const double e = std::sqrt(b.elong);
  const double u = (ct * dx + st * dy) / e;
  const double v = (-st * dx + ct * dy) * e;
  const double rho = std::sqrt(u * u + v * v);
  const double phi = std::atan2(v, u);
  double r = 1.0;
  for (size_t m = 0; m < b.amp.size(); ++m)
    r += b.amp[m] * std::cos((static_cast<double>(m) + 2.0) * phi + b.phase[m]);
  return rho <= b.radius * r;
}

void draw_hair(Image& img, Rng& rng) {
  const int s = img.height;
  const double x0 = rng.uniform(0, s), y0 = rng.uniform(0, s);
  const double ang = rng.uniform(0.0, kTau);
  const double len = rng.uniform(0.4, 0.9) * s;
  const double curl = rng.uniform(-2.0, 2.0) / s;
  const double dark[3] = {0.10, 0.08, 0.07};
  const int thick = rng.coin(0.4) ? 2 : 1;
  const int steps = static_cast<int>(len * 2);
  for (int t = 0; t <= steps; ++t) {
    const double d = t * 0.5;
    const double a = ang + curl * d;
    for (int o = 0; o < thick; ++o) {
      const int x = static_cast<int>(
          std::lround(x0 + d * std::cos(a) - o * std::sin(a)));
      const int y = static_cast<int>(
          std::lround(y0 + d * std::sin(a) + o * std::cos(a)));
      if (x < 0 || x >= s || y < 0 || y >= s) continue;
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = 0.25 * img.at(c, y, x) + 0.75 * dark[c];
    }
  }
}

void draw_ruler(Image& img, Rng& rng) {
  const int s = img.height;
  const bool vertical = rng.coin(0.5);
  const int line = rng.coin(0.5) ? rng.uniform_int(1, s / 6)
                                 : s - 1 - rng.uniform_int(1, s / 6);
  const int phase = rng.uniform_int(0, 5);
  const double dark[3] = {0.15, 0.15, 0.18};
  for (int t = 0; t < s; ++t) {
    const int tick = (t + phase) % 6 == 0 ? 3 : 1;
    for (int o = 0; o < tick; ++o) {
      const int x = vertical ? line + o : t;
      const int y = vertical ? t : line + o;
      if (x < 0 || x >= s || y < 0 || y >= s) continue;
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = 0.35 * img.at(c, y, x) + 0.65 * dark[c];
    }
  }
}

// fraction of a pixel covered by the blob, 2x2 supersampled
double pixel_coverage(const Blob& b, int r, int c) {
  int inside = 0;
  for (int dy = 0; dy < 2; ++dy)
    for (int dx = 0; dx < 2; ++dx)
      if (point_inside(b, c + 0.25 + 0.5 * dx, r + 0.25 + 0.5 * dy)) ++inside;
  return inside / 4.0;
}

}  // namespace

Sample synth_sample(const SynthConfig& config, int index) {
  if (config.size % 16 != 0)
    throw ContractError("synth: size must be divisible by 16");
  Rng rng(config.seed * 0x9E3779B97F4A7C15ull + static_cast<uint64_t>(index) + 1);
  const int s = config.size;
  const int label = index % config.num_classes;

  Blob b;
  BinaryMask mask{s, s, {}};
  for (int attempt = 0; attempt < 32; ++attempt) {
    b.cx = rng.uniform(0.35, 0.65) * s;
    b.cy = rng.uniform(0.35, 0.65) * s;
    b.radius = rng.uniform(0.16, 0.26) * s;
    if (label == 0) {
      b.elong = rng.uniform(1.0, 1.15);
      b.theta = rng.uniform(0.0, kTau);
      b.amp.assign(3, 0.0);
      b.phase.assign(3, 0.0);
      for (int m = 0; m < 3; ++m) {
        b.amp[m] = rng.uniform(0.0, 0.04);
        b.phase[m] = rng.uniform(0.0, kTau);
      }
    } else {
      b.elong = rng.uniform(2.0, 3.2);
      b.theta = rng.uniform(0.0, kTau);
      b.amp.assign(6, 0.0);
      b.phase.assign(6, 0.0);
      for (int m = 0; m < 6; ++m) {
        b.amp[m] = rng.uniform(0.02, 0.12);
        b.phase[m] = rng.uniform(0.0, kTau);
      }
    }
    mask.data.assign(static_cast<size_t>(s) * s, 0);
    int area = 0;
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c)
        if (point_inside(b, c + 0.5, r + 0.5)) {
          mask.data[static_cast<size_t>(r) * s + c] = 1;
          ++area;
        }
    const double frac = static_cast<double>(area) / (s * s);
    if (frac >= 0.02 && frac <= 0.60) break;
  }

  if (config.annotation_jitter > 0.0) {
    // imprecise tracing: the stored annotation wobbles around the true
    // boundary (zero-mean, fixed per image) while the image keeps the
    // true lesion. Evaluation sets are generated with jitter 0.
    Blob ann = b;
    const double rel = config.annotation_jitter / b.radius;
    ann.radius *= 1.0 + 0.5 * rng.uniform(-rel, rel);
    for (size_t m = 0; m < ann.amp.size() && m < 3; ++m)
      ann.amp[m] += rng.uniform(-rel, rel);
    for (int r = 0; r < s; ++r)
      for (int c = 0; c < s; ++c)
        mask.data[static_cast<size_t>(r) * s + c] =
            point_inside(ann, c + 0.5, r + 0.5) ? 1 : 0;
  }

  // background: skin tone + gradient + grain; lesion contrast varies so
  // segmentation stays appearance-limited rather than trivial
  Image img = Image::zeros(s, s);
  const double base[3] = {0.76 + rng.uniform(-0.05, 0.05),
                          0.62 + rng.uniform(-0.05, 0.05),
                          0.56 + rng.uniform(-0.05, 0.05)};
  const double gdir = rng.uniform(0.0, kTau), gamp = rng.uniform(0.0, 0.05);
  const double contrast = rng.uniform(0.16, 0.42);
  const double lesion[3] = {base[0] - contrast + rng.uniform(-0.03, 0.03),
                            base[1] - contrast + rng.uniform(-0.03, 0.03),
                            base[2] - contrast + rng.uniform(-0.03, 0.03)};
  for (int r = 0; r < s; ++r) {
    for (int c = 0; c < s; ++c) {
      const double g =
          gamp * ((c * std::cos(gdir) + r * std::sin(gdir)) / s - 0.5);
      const double alpha = pixel_coverage(b, r, c);  // anti-aliased boundary
      for (int ch = 0; ch < 3; ++ch) {
        double v = alpha * lesion[ch] + (1.0 - alpha) * (base[ch] + g);
        v += rng.uniform(-0.035, 0.035);
        img.at(ch, r, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  if (config.hair_distractors) {
    if (rng.coin(0.8)) {
      const int nh = rng.uniform_int(2, 6);
      for (int i = 0; i < nh; ++i) draw_hair(img, rng);
    }
    if (rng.coin(0.35)) draw_ruler(img, rng);
  }

  Sample out;
  {
    std::ostringstream id;
    id << "synth_";
    id.width(6);
    id.fill('0');
    id << index;
    out.id = id.str();
  }
  out.image = std::move(img);
  out.mask = std::move(mask);
  out.label = label;
  return out;
}

void synth_generate(const SynthConfig& config, const std::string& root) {
  const fs::path base(root);
  fs::create_directories(base / "images");
  fs::create_directories(base / "masks");

  // choose which samples ship without masks
  std::vector<int> idx(static_cast<size_t>(config.count));
  for (int i = 0; i < config.count; ++i) idx[static_cast<size_t>(i)] = i;
  Rng split_rng(config.seed ^ 0xA5A5A5A5ull);
  split_rng.shuffle(idx);
  const int n_unlabeled =
      static_cast<int>(std::lround(config.count * config.unlabeled_fraction));
  std::vector<bool> unlabeled(static_cast<size_t>(config.count), false);
  for (int i = 0; i < n_unlabeled; ++i) unlabeled[static_cast<size_t>(idx[static_cast<size_t>(i)])] = true;

  std::ofstream labels(base / "labels.csv");
  labels << "id,label\n";
  for (int i = 0; i < config.count; ++i) {
    Sample s = synth_sample(config, i);
    write_image_png((base / "images" / (s.id + ".png")).string(), s.image);
    if (!unlabeled[static_cast<size_t>(i)])
      write_mask_png((base / "masks" / (s.id + ".png")).string(), *s.mask);
    labels << s.id << ',' << s.label << '\n';
  }
  labels.close();

  nlohmann::json meta;
  meta["seed"] = config.seed;
  meta["count"] = config.count;
  meta["size"] = config.size;
  meta["unlabeled_fraction"] = config.unlabeled_fraction;
  meta["hair_distractors"] = config.hair_distractors;
  meta["num_classes"] = config.num_classes;
  std::ofstream mf(base / "meta.json");
  mf << meta.dump(2) << '\n';
}

Sample augment_train(const Sample& s, Rng& rng) {
  Sample out = s;
  const bool hf = rng.coin(), vf = rng.coin();
  const double scales[3] = {0.8, 0.9, 1.0};
  const double scale = scales[rng.uniform_int(0, 2)];
  if (hf) {
    out.image = flip_h(out.image);
    if (out.mask) out.mask = flip_h(*out.mask);
  }
  if (vf) {
    out.image = flip_v(out.image);
    if (out.mask) out.mask = flip_v(*out.mask);
  }
  if (scale < 1.0) {
    const int h = out.image.height, w = out.image.width;
    out.image = resize_bilinear(central_crop(out.image, scale), h, w);
    if (out.mask) out.mask = resize_nearest(central_crop(*out.mask, scale), h, w);
  }
  return out;
}

TwoStreamSampler::TwoStreamSampler(std::vector<int> labeled,
                                   std::vector<int> unlabeled, int batch_size,
                                   uint64_t seed)
    : labeled_(std::move(labeled)),
      unlabeled_(std::move(unlabeled)),
      batch_size_(batch_size),
      rng_(seed) {
  if (batch_size_ <= 0 || batch_size_ % 2 != 0)
    throw ContractError("TwoStreamSampler: batch size must be positive and even");
  if (labeled_.empty() && unlabeled_.empty())
    throw ContractError("TwoStreamSampler: both streams empty");
  if (labeled_.empty() || unlabeled_.empty())
    std::fprintf(stderr,
                 "warning: one stream is empty; degrading to single-stream batches\n");
}

int TwoStreamSampler::draw(std::vector<int>& order, size_t& pos,
                           const std::vector<int>& pool) {
  if (pos >= order.size()) {
    order = pool;
    rng_.shuffle(order);
    pos = 0;
  }
  return order[pos++];
}

std::vector<TwoStreamSampler::Item> TwoStreamSampler::next_batch() {
  std::vector<Item> batch;
  const int half = batch_size_ / 2;
  const int n_lab = unlabeled_.empty() ? batch_size_ : (labeled_.empty() ? 0 : half);
  const int n_unl = batch_size_ - n_lab;
  for (int i = 0; i < n_lab; ++i)
    batch.push_back({draw(labeled_order_, labeled_pos_, labeled_), true});
  for (int i = 0; i < n_unl; ++i)
    batch.push_back({draw(unlabeled_order_, unlabeled_pos_, unlabeled_), false});
  return batch;
}

std::vector<TTAVariant> tta_variants(int base_size) {
  std::vector<TTAVariant> vs;
  const int sizes[3] = {base_size, base_size + 16, base_size + 32};
  for (int size : sizes)
    for (int flip = 0; flip < 3; ++flip)
      for (int rot = 0; rot < 4; ++rot) vs.push_back({size, flip, rot});
  return vs;
}

Image apply_tta(const Image& img, const TTAVariant& v) {
  Image out = (img.height == v.size && img.width == v.size)
                  ? img
                  : resize_bilinear(img, v.size, v.size);
  if (v.flip == 1) out = flip_h(out);
  if (v.flip == 2) out = flip_v(out);
  if (v.rotation) out = rotate90(out, v.rotation);
  return out;
}

std::vector<double> invert_tta(const std::vector<double>& map, int h, int w,
                               const TTAVariant& v, int orig_h, int orig_w) {
  std::vector<double> cur = rotate90_map(map, h, w, (4 - v.rotation) % 4);
  int ch = v.rotation % 2 ? w : h;
  int cw = v.rotation % 2 ? h : w;
  if (v.flip == 1) cur = flip_map(cur, ch, cw, true);
  if (v.flip == 2) cur = flip_map(cur, ch, cw, false);
  if (ch != orig_h || cw != orig_w)
    cur = resize_bilinear_map(cur, ch, cw, orig_h, orig_w);
  return cur;
}

double mask_eccentricity(const BinaryMask& m) {
  double a = 0, mx = 0, my = 0;
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        a += 1;
        mx += c;
        my += r;
      }
  if (a < 2) return 0.0;
  mx /= a;
  my /= a;
  double u20 = 0, u02 = 0, u11 = 0;
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        u20 += (c - mx) * (c - mx);
        u02 += (r - my) * (r - my);
        u11 += (c - mx) * (r - my);
      }
  u20 /= a;
  u02 /= a;
  u11 /= a;
  const double tr = u20 + u02;
  const double det = std::sqrt((u20 - u02) * (u20 - u02) + 4 * u11 * u11);
  const double l1 = (tr + det) / 2, l2 = (tr - det) / 2;
  if (l1 <= 0) return 0.0;
  return std::sqrt(std::max(0.0, 1.0 - l2 / l1));
}

}  // namespace mttu
