#include "mttu/engine.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace mttu {

AdamOptimizer::AdamOptimizer(std::vector<Parameter>& params, double lr,
                             long total_iters, double beta1, double beta2,
                             double eps)
    : params_(&params),
      lr_(lr),
      beta1_(beta1),
      beta2_(beta2),
      eps_(eps),
      total_iters_(total_iters) {
  if (lr <= 0) throw ContractError("AdamOptimizer: lr must be positive");
  if (total_iters <= 0)
    throw ContractError("AdamOptimizer: total_iters must be positive");
  for (const auto& p : *params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

double AdamOptimizer::lr_at(long t) const {
  const double frac = std::min(1.0, static_cast<double>(t) / total_iters_);
  return lr_ * (1.0 - frac);
}

void AdamOptimizer::zero_grad() {
  for (auto& p : *params_) p.tensor.zero_grad();
}

void AdamOptimizer::step(long t) {
  const double lr = lr_at(t);
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_->size(); ++i) {
    Tensor& p = (*params_)[i].tensor;
    if (!p.has_grad()) continue;
    const auto& g = p.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (int j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.data()[j] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

SegMetrics segmentation_metrics(const BinaryMask& pred, const BinaryMask& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("segmentation_metrics: shape mismatch");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    if (p && g) ++tp;
    else if (p && !g) ++fp;
    else if (!p && g) ++fn;
    else ++tn;
  }
  auto ratio = [](long num, long den) {
    if (den == 0) return num == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / den;
  };
  SegMetrics m;
  m.ja = ratio(tp, tp + fp + fn);
  m.di = ratio(2 * tp, 2 * tp + fp + fn);
  m.ac = ratio(tp + tn, tp + tn + fp + fn);
  m.se = ratio(tp, tp + fn);
  m.sp = ratio(tn, tn + fp);
  return m;
}

double auc_rank(const std::vector<double>& scores,
                const std::vector<int>& labels) {
  const size_t n = scores.size();
  long pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  const long neg = static_cast<long>(n) - pos;
  if (pos == 0 || neg == 0)
    throw ContractError("auc: needs at least one positive and one negative");
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](size_t a, size_t b) { return scores[a] < scores[b]; });
  // average ranks over ties
  std::vector<double> rank(n);
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j + 1 < n && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (size_t k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double pos_rank_sum = 0;
  for (size_t k = 0; k < n; ++k)
    if (labels[k]) pos_rank_sum += rank[k];
  return (pos_rank_sum - static_cast<double>(pos) * (pos + 1) / 2.0) /
         (static_cast<double>(pos) * neg);
}

double auc_brute_force(const std::vector<double>& scores,
                       const std::vector<int>& labels) {
  long pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  const long neg = static_cast<long>(labels.size()) - pos;
  if (pos == 0 || neg == 0)
    throw ContractError("auc: needs at least one positive and one negative");
  double credit = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) credit += 1.0;
      else if (scores[i] == scores[j]) credit += 0.5;
    }
  }
  return credit / (static_cast<double>(pos) * neg);
}

ClsMetrics classification_metrics(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
  if (scores.size() != labels.size() || scores.empty())
    throw ContractError("classification_metrics: size mismatch");
  long tp = 0, fp = 0, fn = 0, tn = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    const bool p = scores[i] >= 0.5, g = labels[i] != 0;
    if (p && g) ++tp;
    else if (p && !g) ++fp;
    else if (!p && g) ++fn;
    else ++tn;
  }
  auto ratio = [](long num, long den) {
    if (den == 0) return num == 0 ? 1.0 : 0.0;
    return static_cast<double>(num) / den;
  };
  ClsMetrics m;
  m.ac = ratio(tp + tn, tp + tn + fp + fn);
  m.se = ratio(tp, tp + fn);
  m.sp = ratio(tn, tn + fp);
  m.auc = auc_rank(scores, labels);
  return m;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["segmentation"] = {{"JA", seg.ja}, {"DI", seg.di}, {"AC", seg.ac},
                       {"SE", seg.se}, {"SP", seg.sp}, {"n", n_seg}};
  j["classification"] = nlohmann::json::array();
  for (size_t c = 0; c < cls_one_vs_rest.size(); ++c) {
    const auto& m = cls_one_vs_rest[c];
    nlohmann::json e = {{"class", c}, {"AC", m.ac}, {"SE", m.se}, {"SP", m.sp}};
    if (std::isnan(m.auc)) e["AUC"] = nullptr;
    else e["AUC"] = m.auc;
    j["classification"].push_back(e);
  }
  j["classification_overall_AC"] = cls_overall_ac;
  j["n_cls"] = n_cls;
  return j.dump(2);
}

namespace {

constexpr char kMagic[5] = {'M', 'T', 'T', 'U', '1'};

nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["lr"] = c.lr;
  j["total_iters"] = c.total_iters;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["augment"] = c.augment;
  j["weights"] = {{"lambda_m", c.weights.lambda_m},
                  {"lambda_c", c.weights.lambda_c},
                  {"lambda_l", c.weights.lambda_l},
                  {"lambda_d", c.weights.lambda_d},
                  {"lambda_a", c.weights.lambda_a},
                  {"k", c.weights.k},
                  {"rampup_length", c.weights.rampup_length}};
  j["model"] = {{"input_size", c.model.input_size},
                {"stem_channels", c.model.stem_channels},
                {"embed_dim", c.model.embed_dim},
                {"heads", c.model.heads},
                {"layers", c.model.layers},
                {"num_classes", c.model.num_classes},
                {"decode_channels", c.model.decode_channels}};
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lr = j.at("lr");
  c.total_iters = j.at("total_iters");
  c.batch_size = j.at("batch_size");
  c.seed = j.at("seed");
  c.augment = j.value("augment", true);
  const auto& w = j.at("weights");
  c.weights.lambda_m = w.value("lambda_m", 1.0);
  c.weights.lambda_c = w.at("lambda_c");
  c.weights.lambda_l = w.at("lambda_l");
  c.weights.lambda_d = w.at("lambda_d");
  c.weights.lambda_a = w.at("lambda_a");
  c.weights.k = w.at("k");
  c.weights.rampup_length = w.at("rampup_length");
  const auto& m = j.at("model");
  c.model.input_size = m.at("input_size");
  c.model.stem_channels = m.at("stem_channels").get<std::vector<int>>();
  c.model.embed_dim = m.at("embed_dim");
  c.model.heads = m.at("heads");
  c.model.layers = m.at("layers");
  c.model.num_classes = m.at("num_classes");
  c.model.decode_channels = m.at("decode_channels").get<std::vector<int>>();
  return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const TrainConfig& config, AdamOptimizer* opt) {
  nlohmann::json manifest;
  manifest["config"] = config_to_json(config);
  manifest["params"] = nlohmann::json::array();
  size_t offset = 0;
  for (const auto& p : model.parameters()) {
    manifest["params"].push_back({{"name", p.name},
                                  {"shape", p.tensor.shape()},
                                  {"dtype", "f32"},
                                  {"offset", offset}});
    offset += static_cast<size_t>(p.tensor.size()) * 4;
  }
  if (opt) manifest["optimizer_step"] = opt->step_count();
  const std::string mjson = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint: " + path);
  out.write(kMagic, 5);
  const uint64_t mlen = mjson.size();
  out.write(reinterpret_cast<const char*>(&mlen), 8);
  out.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (const auto& p : model.parameters()) {
    std::vector<float> buf(static_cast<size_t>(p.tensor.size()));
    for (int i = 0; i < p.tensor.size(); ++i)
      buf[static_cast<size_t>(i)] = static_cast<float>(p.tensor.data()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * 4));
  }
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint: " + path);
  char magic[5];
  if (!in.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
    throw FormatError("checkpoint magic mismatch");
  uint64_t mlen = 0;
  if (!in.read(reinterpret_cast<char*>(&mlen), 8))
    throw FormatError("truncated checkpoint header");
  std::string mjson(mlen, '\0');
  if (!in.read(mjson.data(), static_cast<std::streamsize>(mlen)))
    throw FormatError("truncated checkpoint manifest");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mjson);
  } catch (const nlohmann::json::exception&) {
    throw FormatError("corrupt checkpoint manifest");
  }

  LoadedCheckpoint lc;
  lc.config = config_from_json(manifest.at("config"));
  lc.model = std::make_unique<Model>(lc.config.model, lc.config.seed);

  // read the full payload first so a truncated file never half-loads
  std::vector<char> payload(std::istreambuf_iterator<char>(in), {});
  for (const auto& pj : manifest.at("params")) {
    const std::string name = pj.at("name");
    Parameter* p = lc.model->find_parameter(name);
    if (!p) throw FormatError("checkpoint names unknown parameter " + name);
    const size_t offset = pj.at("offset");
    const size_t bytes = static_cast<size_t>(p->tensor.size()) * 4;
    if (offset + bytes > payload.size())
      throw FormatError("truncated checkpoint payload");
    const auto shape = pj.at("shape").get<std::vector<int>>();
    if (shape != p->tensor.shape())
      throw FormatError("checkpoint shape mismatch for " + name);
    for (int i = 0; i < p->tensor.size(); ++i) {
      float f;
      std::memcpy(&f, payload.data() + offset + static_cast<size_t>(i) * 4, 4);
      p->tensor.data()[i] = static_cast<double>(f);
    }
  }
  return lc;
}

BatchSample prepare_sample(const Sample& s) {
  BatchSample b;
  b.sample = s;
  if (s.mask) {
    b.mask_gt = mask_to_tensor(*s.mask);
    b.lsf_gt = sdf_to_tensor(signed_distance(
        *s.mask, default_truncation_radius(s.mask->height, s.mask->width)));
  }
  return b;
}

LossReport train_step(Model& model, const std::vector<BatchSample>& batch,
                      AdamOptimizer& opt, const LossWeights& weights,
                      long iter, double ramp_t) {
  opt.zero_grad();
  Tensor lab_total, unlab_total;
  int n_lab = 0, n_unlab = 0;
  LossReport agg;
  for (const auto& b : batch) {
    ModelOutput out = model.forward(b.sample.image.to_tensor());
    if (b.sample.has_mask()) {
      LossReport r =
          labeled_loss(out, b.mask_gt, b.lsf_gt, b.sample.label, weights, ramp_t);
      lab_total = lab_total.defined() ? add(lab_total, r.lab_loss) : r.lab_loss;
      agg.mask += r.mask;
      agg.cls += r.cls;
      agg.lsf += r.lsf;
      agg.dtc += r.dtc;
      agg.arc += r.arc;
      agg.total_lab += r.total_lab;
      ++n_lab;
    } else {
      LossReport r = unlabeled_loss(out, b.sample.label, weights, ramp_t);
      unlab_total =
          unlab_total.defined() ? add(unlab_total, r.unlab_loss) : r.unlab_loss;
      agg.cls += r.cls;
      agg.dtc += r.dtc;
      agg.arc += r.arc;
      agg.total_unlab += r.total_unlab;
      ++n_unlab;
    }
  }
  Tensor total;
  if (lab_total.defined())
    total = mul_scalar(lab_total, 1.0 / n_lab);
  if (unlab_total.defined()) {
    Tensor u = mul_scalar(unlab_total, 1.0 / n_unlab);
    total = total.defined() ? add(total, u) : u;
  }
  backward(total);
  opt.step(iter);

  const int n_all = n_lab + n_unlab;
  if (n_lab) {
    agg.mask /= n_lab;
    agg.lsf /= n_lab;
    agg.total_lab /= n_lab;
  }
  if (n_unlab) agg.total_unlab /= n_unlab;
  if (n_all) {
    agg.cls /= n_all;
    agg.dtc /= n_all;
    agg.arc /= n_all;
  }
  return agg;
}

namespace {

// Ramp-up time is counted in epochs over the labeled stream.
double epochs_at(long t, int labeled_count, int half_batch) {
  const int per_epoch = std::max(1, labeled_count / std::max(1, half_batch));
  return static_cast<double>(t) / per_epoch;
}

}  // namespace

TrainResult train(Model& model, const DatasetManifest& data,
                  const TrainConfig& config,
                  const std::function<void(long, const LossReport&)>& on_step) {
  std::vector<int> labeled, unlabeled;
  for (size_t i = 0; i < data.entries.size(); ++i) {
    if (data.entries[i].mask_path) labeled.push_back(static_cast<int>(i));
    else unlabeled.push_back(static_cast<int>(i));
  }
  TwoStreamSampler sampler(labeled, unlabeled, config.batch_size,
                           config.seed + 1);
  Rng aug_rng(config.seed + 2);

  std::vector<std::optional<Sample>> cache(data.entries.size());
  auto get_sample = [&](int idx) -> const Sample& {
    auto& slot = cache[static_cast<size_t>(idx)];
    if (!slot) slot = load_sample(data.entries[static_cast<size_t>(idx)]);
    return *slot;
  };

  TrainResult result;
  result.loss_csv.push_back("step,lr," + LossReport::csv_header().substr(5));
  LossWeights w = config.weights;
  AdamOptimizer opt(model.parameters(), config.lr, config.total_iters);
  for (long t = 0; t < config.total_iters; ++t) {
    auto items = sampler.next_batch();
    std::vector<BatchSample> batch;
    for (const auto& it : items) {
      Sample s = get_sample(it.index);
      if (!it.labeled) s.mask.reset();
      if (config.augment) s = augment_train(s, aug_rng);
      batch.push_back(prepare_sample(s));
    }
    const double ramp_t = epochs_at(t, static_cast<int>(labeled.size()),
                                    config.batch_size / 2);
    const double lr_t = opt.lr_at(t);
    LossReport r;
    try {
      r = train_step(model, batch, opt, w, t, ramp_t);
    } catch (const NumericError& e) {
      throw NumericError("step " + std::to_string(t) + ": " + e.what());
    }
    std::ostringstream os;
    os.precision(17);
    os << t << ',' << lr_t << ',' << r.mask << ',' << r.cls << ',' << r.lsf
       << ',' << r.dtc << ',' << r.arc << ',' << r.total_lab << ','
       << r.total_unlab;
    result.loss_csv.push_back(os.str());
    if (on_step) on_step(t, r);
  }
  return result;
}

std::vector<double> softmax_values(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  std::vector<double> out(logits.size());
  double z = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    z += out[i];
  }
  for (auto& v : out) v /= z;
  return out;
}

void plain_predict(const Model& model, const Image& image,
                   std::vector<double>& mask_prob,
                   std::vector<double>& class_prob,
                   std::vector<double>* cls_attention) {
  ModelOutput out = model.forward(image.to_tensor());
  Tensor fg = foreground_prob(out.mask_logits);
  mask_prob = fg.values();
  class_prob = softmax_values(out.class_logits.values());
  if (cls_attention) *cls_attention = out.cls_attention.values();
}

void tta_predict(const Model& model, const Image& image,
                 std::vector<double>& mask_prob,
                 std::vector<double>& class_prob) {
  const auto variants = tta_variants(image.height);
  mask_prob.assign(static_cast<size_t>(image.height) * image.width, 0.0);
  class_prob.assign(static_cast<size_t>(model.config().num_classes), 0.0);
  for (const auto& v : variants) {
    Image xi = apply_tta(image, v);
    ModelOutput out = model.forward(xi.to_tensor());
    Tensor fg = foreground_prob(out.mask_logits);
    std::vector<double> back = invert_tta(fg.values(), xi.height, xi.width, v,
                                          image.height, image.width);
    for (size_t i = 0; i < mask_prob.size(); ++i) mask_prob[i] += back[i];
    std::vector<double> probs = softmax_values(out.class_logits.values());
    for (size_t i = 0; i < class_prob.size(); ++i) class_prob[i] += probs[i];
  }
  const double inv = 1.0 / static_cast<double>(variants.size());
  for (auto& v : mask_prob) v *= inv;
  for (auto& v : class_prob) v *= inv;
}

MetricsReport evaluate(const Model& model, const DatasetManifest& data,
                       bool use_tta) {
  MetricsReport rep;
  const int nc = model.config().num_classes;
  std::vector<std::vector<double>> scores(static_cast<size_t>(nc));
  std::vector<std::vector<int>> ovr_labels(static_cast<size_t>(nc));
  int correct = 0;
  double ja = 0, di = 0, ac = 0, se = 0, sp = 0;
  for (const auto& e : data.entries) {
    Sample s = load_sample(e);
    Image img = s.image;
    const int in_size = model.config().input_size;
    if (img.height != in_size || img.width != in_size)
      img = resize_bilinear(img, in_size, in_size);
    std::vector<double> mask_prob, class_prob;
    if (use_tta) tta_predict(model, img, mask_prob, class_prob);
    else plain_predict(model, img, mask_prob, class_prob);

    int pred_label = 0;
    for (int c = 1; c < nc; ++c)
      if (class_prob[static_cast<size_t>(c)] > class_prob[static_cast<size_t>(pred_label)])
        pred_label = c;
    if (pred_label == s.label) ++correct;
    for (int c = 0; c < nc; ++c) {
      scores[static_cast<size_t>(c)].push_back(class_prob[static_cast<size_t>(c)]);
      ovr_labels[static_cast<size_t>(c)].push_back(s.label == c ? 1 : 0);
    }
    ++rep.n_cls;

    if (s.mask) {
      BinaryMask pred{in_size, in_size,
                      std::vector<uint8_t>(static_cast<size_t>(in_size) * in_size)};
      for (size_t i = 0; i < mask_prob.size(); ++i)
        pred.data[i] = mask_prob[i] >= 0.5 ? 1 : 0;
      BinaryMask gt = (s.mask->height == in_size && s.mask->width == in_size)
                          ? *s.mask
                          : resize_nearest(*s.mask, in_size, in_size);
      SegMetrics m = segmentation_metrics(pred, gt);
      ja += m.ja;
      di += m.di;
      ac += m.ac;
      se += m.se;
      sp += m.sp;
      ++rep.n_seg;
    }
  }
  if (rep.n_seg) {
    rep.seg.ja = ja / rep.n_seg;
    rep.seg.di = di / rep.n_seg;
    rep.seg.ac = ac / rep.n_seg;
    rep.seg.se = se / rep.n_seg;
    rep.seg.sp = sp / rep.n_seg;
  }
  if (rep.n_cls) rep.cls_overall_ac = static_cast<double>(correct) / rep.n_cls;
  for (int c = 0; c < nc; ++c) {
    ClsMetrics m;
    try {
      m = classification_metrics(scores[static_cast<size_t>(c)],
                                 ovr_labels[static_cast<size_t>(c)]);
    } catch (const ContractError&) {
      m.auc = std::nan("");
    }
    rep.cls_one_vs_rest.push_back(m);
  }
  return rep;
}

}  // namespace mttu
