#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mttu/data.hpp"
#include "mttu/losses.hpp"
#include "mttu/model.hpp"

namespace mttu {

struct TrainConfig {
  double lr = 1e-3;
  long total_iters = 2000;
  int batch_size = 8;
  uint64_t seed = 0;
  LossWeights weights;
  ModelConfig model;
  long eval_every = 0;  // 0 = never
  std::string checkpoint_path;
  bool augment = true;
};

// Adam with per-parameter moment buffers and linear LR decay to 0.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Parameter>& params, double lr, long total_iters,
                double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  // LR at step t: lr * (1 - t/total_iters).
  double lr_at(long t) const;
  void step(long t);
  void zero_grad();
  long step_count() const { return step_count_; }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  void set_step_count(long n) { step_count_ = n; }

 private:
  std::vector<Parameter>* params_;
  double lr_, beta1_, beta2_, eps_;
  long total_iters_;
  long step_count_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

struct SegMetrics {
  double ja = 0, di = 0, ac = 0, se = 0, sp = 0;
};

struct ClsMetrics {
  double ac = 0, se = 0, sp = 0, auc = 0;
};

SegMetrics segmentation_metrics(const BinaryMask& pred, const BinaryMask& gt);

// One-vs-rest binary metrics at threshold 0.5; AUC by the rank statistic
// (ties half-credit).
ClsMetrics classification_metrics(const std::vector<double>& scores,
                                  const std::vector<int>& labels);
double auc_rank(const std::vector<double>& scores,
                const std::vector<int>& labels);
double auc_brute_force(const std::vector<double>& scores,
                       const std::vector<int>& labels);

struct MetricsReport {
  SegMetrics seg;
  std::vector<ClsMetrics> cls_one_vs_rest;  // per class
  double cls_overall_ac = 0;
  int n_seg = 0, n_cls = 0;
  std::string to_json() const;
};

// Checkpoint: "MTTU1" magic, JSON manifest (name -> shape/dtype/offset plus
// config and seed), little-endian float32 payload.
void save_checkpoint(const std::string& path, const Model& model,
                     const TrainConfig& config, AdamOptimizer* opt = nullptr);
struct LoadedCheckpoint {
  TrainConfig config;
  std::unique_ptr<Model> model;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

struct BatchSample {
  Sample sample;
  Tensor mask_gt;  // defined iff sample has a mask
  Tensor lsf_gt;
};
BatchSample prepare_sample(const Sample& s);

// One optimization step over a prepared 4+4 batch; returns the batch-mean
// loss report. `iter` drives the linear LR decay, `ramp_t` the DTC ramp-up
// (counted in epochs over the labeled stream).
LossReport train_step(Model& model, const std::vector<BatchSample>& batch,
                      AdamOptimizer& opt, const LossWeights& weights,
                      long iter, double ramp_t);

struct TrainResult {
  std::vector<std::string> loss_csv;  // header + one row per step
};
TrainResult train(Model& model, const DatasetManifest& data,
                  const TrainConfig& config,
                  const std::function<void(long, const LossReport&)>& on_step =
                      nullptr);

MetricsReport evaluate(const Model& model, const DatasetManifest& data,
                       bool use_tta);

// Mean over the 36 TTA variants of inverse-transformed foreground
// probabilities and class softmax vectors.
void tta_predict(const Model& model, const Image& image,
                 std::vector<double>& mask_prob, std::vector<double>& class_prob);
void plain_predict(const Model& model, const Image& image,
                   std::vector<double>& mask_prob,
                   std::vector<double>& class_prob,
                   std::vector<double>* cls_attention = nullptr);

std::vector<double> softmax_values(const std::vector<double>& logits);

}  // namespace mttu
