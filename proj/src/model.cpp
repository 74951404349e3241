#include "mttu/model.hpp"

#include <cmath>
#include <unordered_map>

namespace mttu {

void ModelConfig::validate() const {
  if (input_size <= 0 || input_size % 16 != 0)
    throw ContractError("ModelConfig: input_size must be a positive multiple of 16");
  if (stem_channels.size() != 4 || decode_channels.size() != 4)
    throw ContractError("ModelConfig: stem/decode need exactly 4 widths");
  if (embed_dim % heads != 0)
    throw ContractError("ModelConfig: embed_dim must be divisible by heads");
  if (layers < 0) throw ContractError("ModelConfig: layers must be >= 0");
  if (num_classes < 2) throw ContractError("ModelConfig: num_classes must be >= 2");
}

namespace {

Tensor init_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
  const double limit = std::sqrt(6.0 / fan_in);
  Tensor t = Tensor::zeros(std::move(shape), /*requires_grad=*/true);
  for (int i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(-limit, limit);
  return t;
}

}  // namespace

Model::Model(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  auto add = [&](const std::string& name, Tensor t) {
    params_.push_back({name, std::move(t)});
  };
  auto add_conv = [&](const std::string& name, int cout, int cin, int k) {
    add(name + ".w", init_uniform({cout, cin, k, k}, cin * k * k, rng));
    add(name + ".b", Tensor::zeros({cout}, true));
  };
  auto add_linear = [&](const std::string& name, int in, int out) {
    add(name + ".w", init_uniform({in, out}, in, rng));
    add(name + ".b", Tensor::zeros({out}, true));
  };

  int cin = 3;
  for (int s = 0; s < 4; ++s) {
    add_conv("stem." + std::to_string(s), config_.stem_channels[s], cin, 3);
    cin = config_.stem_channels[s];
  }

  const int d = config_.embed_dim;
  add("embed.e", init_uniform({cin, d}, cin, rng));
  add("cls_token", Tensor::zeros({1, d}, true));  // zero-initialized

  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "layer." + std::to_string(l);
    add(p + ".ln1.g", Tensor::full({d}, 1.0, true));
    add(p + ".ln1.b", Tensor::zeros({d}, true));
    add_linear(p + ".attn.q", d, d);
    add_linear(p + ".attn.k", d, d);
    add_linear(p + ".attn.v", d, d);
    add_linear(p + ".attn.o", d, d);
    add(p + ".ln2.g", Tensor::full({d}, 1.0, true));
    add(p + ".ln2.b", Tensor::zeros({d}, true));
    add_linear(p + ".ffn.0", d, 4 * d);
    add_linear(p + ".ffn.1", 4 * d, d);
  }

  int dec_in = d;
  for (int s = 0; s < 4; ++s) {
    // skips are concatenated at the first three stages, deepest first
    const int skip_c = s < 3 ? config_.stem_channels[2 - s] : 0;
    const int w = config_.decode_channels[s];
    add_conv("decode." + std::to_string(s) + ".0", w, dec_in + skip_c, 3);
    add_conv("decode." + std::to_string(s) + ".1", w, w, 3);
    dec_in = w;
  }
  add_conv("head.mask", 2, dec_in, 1);
  // dedicated stage so the level-set regression does not force the shared
  // decoder features to encode a distance field
  add_conv("head.lsf.0", dec_in, dec_in, 3);
  add_conv("head.lsf.1", 1, dec_in, 1);
  add_linear("head.cls", d, config_.num_classes);
}

Parameter* Model::find_parameter(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

Tensor Model::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw ContractError("unknown parameter: " + name);
}

void Model::zero_grads() {
  for (auto& p : params_) p.tensor.zero_grad();
}

Tensor Model::stem_encode(const Tensor& image, std::vector<Tensor>& skips) const {
  if (image.ndim() != 3 || image.dim(0) != 3)
    throw DimensionError("stem_encode: expects [3,H,W] input");
  if (image.dim(1) % 16 != 0 || image.dim(2) % 16 != 0)
    throw DimensionError("stem_encode: spatial size must be divisible by 16");
  Tensor x = image;
  skips.clear();
  for (int s = 0; s < 4; ++s) {
    const std::string p = "stem." + std::to_string(s);
    x = relu(conv2d(x, param(p + ".w"), param(p + ".b"), /*stride=*/2, /*pad=*/1));
    if (s < 3) skips.push_back(x);  // /2, /4, /8
  }
  return x;
}

Tensor Model::tokenize(const Tensor& feature_map) const {
  const int c = feature_map.dim(0), g = feature_map.dim(1);
  if (feature_map.dim(2) != g) throw DimensionError("tokenize: non-square grid");
  // [C,G,G] -> [N,C] row-major cells, then project to D; no positional
  // embedding is added.
  Tensor cells = transpose2d(reshape(feature_map, {c, g * g}));
  Tensor seg = matmul(cells, param("embed.e"));
  return concat_rows({seg, param("cls_token")});
}

Tensor Model::transformer_layer(int layer, const Tensor& tokens,
                                std::vector<Tensor>* head_attn) const {
  const std::string p = "layer." + std::to_string(layer);
  const int d = config_.embed_dim, nh = config_.heads, dh = d / nh;
  Tensor h = layer_norm(tokens, param(p + ".ln1.g"), param(p + ".ln1.b"));
  Tensor q = linear(h, param(p + ".attn.q.w"), param(p + ".attn.q.b"));
  Tensor k = linear(h, param(p + ".attn.k.w"), param(p + ".attn.k.b"));
  Tensor v = linear(h, param(p + ".attn.v.w"), param(p + ".attn.v.b"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Tensor> ctx;
  for (int hd = 0; hd < nh; ++hd) {
    Tensor qh = slice_cols(q, hd * dh, dh);
    Tensor kh = slice_cols(k, hd * dh, dh);
    Tensor vh = slice_cols(v, hd * dh, dh);
    Tensor attn = softmax(mul_scalar(matmul(qh, transpose2d(kh)), scale));
    if (head_attn) head_attn->push_back(attn);
    ctx.push_back(matmul(attn, vh));
  }
  Tensor msa = linear(concat_cols(ctx), param(p + ".attn.o.w"),
                      param(p + ".attn.o.b"));
  Tensor z1 = add(tokens, msa);
  Tensor h2 = layer_norm(z1, param(p + ".ln2.g"), param(p + ".ln2.b"));
  Tensor f = relu(linear(h2, param(p + ".ffn.0.w"), param(p + ".ffn.0.b")));
  Tensor ffn = linear(f, param(p + ".ffn.1.w"), param(p + ".ffn.1.b"));
  return add(z1, ffn);
}

void Model::decode(const Tensor& seg_tokens, int grid,
                   const std::vector<Tensor>& skips, Tensor& mask_logits,
                   Tensor& level_set) const {
  const int d = config_.embed_dim;
  if (seg_tokens.dim(0) != grid * grid)
    throw DimensionError("decode: token count does not match grid");
  Tensor x = reshape(transpose2d(seg_tokens), {d, grid, grid});
  int cur = grid;
  for (int s = 0; s < 4; ++s) {
    cur *= 2;
    x = bilinear_resize(x, cur, cur);
    if (s < 3) x = concat_ch(x, skips[2 - s]);
    const std::string p = "decode." + std::to_string(s);
    x = relu(conv2d(x, param(p + ".0.w"), param(p + ".0.b"), 1, 1));
    x = relu(conv2d(x, param(p + ".1.w"), param(p + ".1.b"), 1, 1));
  }
  mask_logits = conv2d(x, param("head.mask.w"), param("head.mask.b"), 1, 0);
  Tensor lf = relu(conv2d(x, param("head.lsf.0.w"), param("head.lsf.0.b"), 1, 1));
  Tensor lsf = conv2d(lf, param("head.lsf.1.w"), param("head.lsf.1.b"), 1, 0);
  level_set = tanh_op(slice_ch(lsf, 0));
}

Tensor Model::classify(const Tensor& cls_token_row) const {
  Tensor logits =
      linear(cls_token_row, param("head.cls.w"), param("head.cls.b"));
  return reshape(logits, {config_.num_classes});
}

ModelOutput Model::forward(const Tensor& image) const {
  std::vector<Tensor> skips;
  Tensor f = stem_encode(image, skips);
  const int grid = f.dim(1);
  const int n = grid * grid;
  Tensor z = tokenize(f);

  ModelOutput out;
  out.attention.heads = config_.heads;
  out.attention.tokens = n + 1;
  std::vector<Tensor> last_attn;
  for (int l = 0; l < config_.layers; ++l) {
    std::vector<Tensor> head_attn;
    z = transformer_layer(l, z, &head_attn);
    std::vector<double> rec;
    rec.reserve(static_cast<size_t>(config_.heads) * (n + 1) * (n + 1));
    for (const auto& a : head_attn)
      rec.insert(rec.end(), a.values().begin(), a.values().end());
    out.attention.layers.push_back(std::move(rec));
    if (l == config_.layers - 1) last_attn = std::move(head_attn);
  }

  Tensor seg_tokens = slice_rows(z, 0, n);
  Tensor cls_token = slice_rows(z, n, 1);
  decode(seg_tokens, grid, skips, out.mask_logits, out.level_set);
  out.class_logits = classify(cls_token);

  if (!last_attn.empty()) {
    // cls-query row to segmentation-token keys, head-averaged, renormalized
    Tensor acc;
    for (const auto& a : last_attn) {
      Tensor row = slice_cols(slice_rows(a, n, 1), 0, n);
      acc = acc.defined() ? add(acc, row) : row;
    }
    Tensor avg = mul_scalar(acc, 1.0 / config_.heads);
    out.cls_attention = reshape(div_bcast(avg, sum(avg)), {n});
  } else {
    out.cls_attention = Tensor::full({n}, 1.0 / n);
  }
  return out;
}

}  // namespace mttu
