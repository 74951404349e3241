#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mttu/image.hpp"
#include "mttu/levelset.hpp"
#include "mttu/rng.hpp"

namespace mttu {

struct Sample {
  std::string id;
  Image image;
  std::optional<BinaryMask> mask;
  int label = 0;

  bool has_mask() const { return mask.has_value(); }
};

struct ManifestEntry {
  std::string id;
  std::string image_path;
  std::optional<std::string> mask_path;
  int label = 0;
};

struct DatasetManifest {
  std::string root;
  std::vector<ManifestEntry> entries;

  int labeled_count() const;
  int unlabeled_count() const;
};

// Layout: root/images/<id>.png, root/masks/<id>.png (optional),
// root/labels.csv with header id,label.
DatasetManifest load_dataset(const std::string& root);
Sample load_sample(const ManifestEntry& entry);

struct SynthConfig {
  int count = 200;
  int size = 64;
  uint64_t seed = 0;
  double unlabeled_fraction = 0.0;
  bool hair_distractors = true;
  // boundary noise (pixels) baked into the stored mask and level-set targets,
  // mimicking imprecise tracing; the rendered image keeps the true lesion.
  // Set to 0 for evaluation sets so metrics score the true boundary.
  double annotation_jitter = 1.5;
  int num_classes = 2;
};

// Deterministic synthetic lesion dataset: textured skin background plus one
// blob per image. Class 0 is a near-circular smooth blob, class 1 an
// elongated irregular one. Writes the dataset layout plus meta.json.
void synth_generate(const SynthConfig& config, const std::string& root);
// In-memory variant used by tests and the overfit harness; deterministic in
// (config.seed, index).
Sample synth_sample(const SynthConfig& config, int index);

// Random H/V flips (p=0.5 each) and a central crop at scale in
// {0.8, 0.9, 1.0} resized back; mask follows the image (nearest-neighbor).
Sample augment_train(const Sample& s, Rng& rng);

// 4 labeled + 4 unlabeled per batch; both streams reshuffled per epoch, the
// shorter stream cycles. With an empty unlabeled stream, degrades to
// all-labeled batches (warns once).
class TwoStreamSampler {
 public:
  TwoStreamSampler(std::vector<int> labeled, std::vector<int> unlabeled,
                   int batch_size, uint64_t seed);

  struct Item {
    int index;
    bool labeled;
  };
  std::vector<Item> next_batch();

 private:
  int draw(std::vector<int>& order, size_t& pos, const std::vector<int>& pool);

  std::vector<int> labeled_, unlabeled_;
  std::vector<int> labeled_order_, unlabeled_order_;
  size_t labeled_pos_ = 0, unlabeled_pos_ = 0;
  int batch_size_;
  Rng rng_;
};

// Test-time augmentation descriptor; invertible on probability maps.
struct TTAVariant {
  int size;        // resized square input
  int flip;        // 0 none, 1 horizontal, 2 vertical
  int rotation;    // quarter turns CCW
};

// Full cross product: 3 sizes x 3 flip states x 4 rotations = 36.
std::vector<TTAVariant> tta_variants(int base_size);
Image apply_tta(const Image& img, const TTAVariant& v);
// Maps a single-channel probability map from the variant frame back to
// orig_h x orig_w.
std::vector<double> invert_tta(const std::vector<double>& map, int h, int w,
                               const TTAVariant& v, int orig_h, int orig_w);

// Shape statistic used to validate that the synthetic classes are separable:
// eccentricity of the mask's second-moment ellipse.
double mask_eccentricity(const BinaryMask& m);

}  // namespace mttu
