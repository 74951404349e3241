#pragma once

#include <string>
#include <vector>

#include "mttu/ops.hpp"
#include "mttu/rng.hpp"
#include "mttu/tensor.hpp"

namespace mttu {

struct ModelConfig {
  int input_size = 64;                              // square, divisible by 16
  std::vector<int> stem_channels = {8, 16, 32, 64};  // four stride-2 stages
  int embed_dim = 64;                                // D
  int heads = 4;
  int layers = 4;                                    // n transformer layers
  int num_classes = 2;
  std::vector<int> decode_channels = {32, 16, 8, 8};

  int token_grid() const { return input_size / 16; }
  int token_count() const { return token_grid() * token_grid(); }
  void validate() const;
};

// Post-softmax attention weights, one [heads, T, T] block per layer
// (values only, no graph).
struct AttentionRecord {
  std::vector<std::vector<double>> layers;  // each heads*T*T, row-major
  int heads = 0;
  int tokens = 0;  // T = N+1
};

struct ModelOutput {
  Tensor mask_logits;    // [2, H, W]
  Tensor level_set;      // [H, W], tanh-bounded to (-1, 1)
  Tensor class_logits;   // [num_classes]
  Tensor cls_attention;  // [N], head-averaged, renormalized to sum 1
  AttentionRecord attention;
};

// Hybrid conv-transformer network: conv stem, token embedding with an appended
// zero-initialized classification token, n pre-LN transformer layers, a
// cascade decoder with skip connections, and mask / level-set / class heads.
class Model {
 public:
  Model(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  Parameter* find_parameter(const std::string& name);

  // image: [3, H, W], H = W divisible by 16 (multi-scale inputs allowed;
  // token count follows the input).
  ModelOutput forward(const Tensor& image) const;

  // Exposed stages, mainly for tests.
  Tensor stem_encode(const Tensor& image, std::vector<Tensor>& skips) const;
  Tensor tokenize(const Tensor& feature_map) const;
  Tensor transformer_layer(int layer, const Tensor& tokens,
                           std::vector<Tensor>* head_attn = nullptr) const;
  void decode(const Tensor& seg_tokens, int grid,
              const std::vector<Tensor>& skips, Tensor& mask_logits,
              Tensor& level_set) const;
  Tensor classify(const Tensor& cls_token_row) const;

  void zero_grads();

 private:
  Tensor param(const std::string& name) const;

  ModelConfig config_;
  std::vector<Parameter> params_;
};

}  // namespace mttu
