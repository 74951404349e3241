#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "mttu/data.hpp"
#include "mttu/engine.hpp"
#include "mttu/gradsuite.hpp"
#include "mttu/image.hpp"
#include "mttu/levelset.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitFormat = 2;
constexpr int kExitNumeric = 3;

// Flat dotted-key config: defaults <- file <- command-line overrides.
// Unknown keys are rejected so a typo can't silently fall back to a default.
json train_defaults() {
  mttu::TrainConfig c;
  json j;
  j["data.root"] = "";
  j["train.iters"] = c.total_iters;
  j["train.lr"] = c.lr;
  j["train.seed"] = static_cast<uint64_t>(c.seed);
  j["train.eval_every"] = c.eval_every;
  j["train.augment"] = c.augment;
  j["train.ablation"] = 6;
  j["model.input_size"] = c.model.input_size;
  j["model.embed_dim"] = c.model.embed_dim;
  j["model.heads"] = c.model.heads;
  j["model.layers"] = c.model.layers;
  j["model.num_classes"] = c.model.num_classes;
  j["loss.lambda_m"] = c.weights.lambda_m;
  j["loss.lambda_c"] = c.weights.lambda_c;
  j["loss.lambda_l"] = c.weights.lambda_l;
  j["loss.lambda_d"] = c.weights.lambda_d;
  j["loss.lambda_a"] = c.weights.lambda_a;
  j["loss.k"] = c.weights.k;
  j["loss.rampup_length"] = c.weights.rampup_length;
  return j;
}

void merge_known(json& effective, const json& incoming, const std::string& src) {
  for (auto it = incoming.begin(); it != incoming.end(); ++it) {
    if (!effective.contains(it.key()))
      throw mttu::ContractError("unknown config key '" + it.key() + "' from " +
                                src);
    effective[it.key()] = it.value();
  }
}

json parse_override(const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw mttu::ContractError("override must be key=value: '" + kv + "'");
  const std::string key = kv.substr(0, eq);
  const std::string val = kv.substr(eq + 1);
  json out;
  // numbers and bools parse as themselves, anything else stays a string
  json parsed = json::parse(val, nullptr, /*allow_exceptions=*/false);
  if (!parsed.is_discarded() && !parsed.is_object() && !parsed.is_array())
    out[key] = parsed;
  else
    out[key] = val;
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw mttu::FormatError("cannot write " + path);
  f << text;
}

void echo_config(const std::string& out_dir, const json& effective) {
  fs::create_directories(out_dir);
  write_text(out_dir + "/config.json", effective.dump(2) + "\n");
}

mttu::TrainConfig config_from_json(const json& j, const std::string& out_dir) {
  mttu::TrainConfig c;
  c.total_iters = j.at("train.iters").get<long>();
  c.lr = j.at("train.lr").get<double>();
  c.seed = j.at("train.seed").get<uint64_t>();
  c.eval_every = j.at("train.eval_every").get<long>();
  c.augment = j.at("train.augment").get<bool>();
  c.model.input_size = j.at("model.input_size").get<int>();
  c.model.embed_dim = j.at("model.embed_dim").get<int>();
  c.model.heads = j.at("model.heads").get<int>();
  c.model.layers = j.at("model.layers").get<int>();
  c.model.num_classes = j.at("model.num_classes").get<int>();
  c.weights = mttu::ablation_preset(j.at("train.ablation").get<int>());
  // explicit loss.* values override the preset; untouched defaults don't
  const mttu::LossWeights defaults;
  auto apply = [&](const char* key, double def, double& slot) {
    const double v = j.at(key).get<double>();
    if (v != def) slot = v;
  };
  apply("loss.lambda_m", defaults.lambda_m, c.weights.lambda_m);
  apply("loss.lambda_c", defaults.lambda_c, c.weights.lambda_c);
  apply("loss.lambda_l", defaults.lambda_l, c.weights.lambda_l);
  apply("loss.lambda_d", defaults.lambda_d, c.weights.lambda_d);
  apply("loss.lambda_a", defaults.lambda_a, c.weights.lambda_a);
  apply("loss.k", defaults.k, c.weights.k);
  apply("loss.rampup_length", defaults.rampup_length, c.weights.rampup_length);
  c.checkpoint_path = out_dir + "/model.ckpt";
  return c;
}

int cmd_train(const json& effective, const std::string& out_dir) {
  const std::string root = effective.at("data.root").get<std::string>();
  if (root.empty()) {
    std::cerr << "train: data.root is required\n";
    return kExitUsage;
  }
  mttu::DatasetManifest data = mttu::load_dataset(root);
  mttu::TrainConfig config = config_from_json(effective, out_dir);
  echo_config(out_dir, effective);

  mttu::Model model(config.model, config.seed);
  mttu::TrainResult result = mttu::train(model, data, config);
  std::string csv;
  for (const auto& line : result.loss_csv) csv += line + "\n";
  write_text(out_dir + "/loss.csv", csv);
  mttu::save_checkpoint(config.checkpoint_path, model, config);
  std::cout << "trained " << config.total_iters << " iters; checkpoint "
            << config.checkpoint_path << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& root, bool tta,
             const std::string& out_path) {
  mttu::LoadedCheckpoint loaded = mttu::load_checkpoint(ckpt);
  mttu::DatasetManifest data = mttu::load_dataset(root);
  mttu::MetricsReport report = mttu::evaluate(*loaded.model, data, tta);
  const std::string text = report.to_json() + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
  return kExitOk;
}

int cmd_gradcheck(int reps, double tol, uint64_t seed, bool inject_bug) {
  auto results = mttu::run_gradcheck_suite(reps, tol, seed, inject_bug);
  for (const auto& r : results)
    std::printf("%-34s rel_err %.3e  checked %-6d %s\n", r.name.c_str(),
                r.report.max_rel_err, r.report.checked,
                r.report.passed ? "PASS" : "FAIL");
  if (!mttu::all_passed(results)) {
    std::cerr << "gradcheck: failures detected\n";
    return kExitNumeric;
  }
  return kExitOk;
}

int cmd_predict(const std::string& ckpt, const std::string& image_path,
                const std::string& out_dir, bool tta) {
  mttu::LoadedCheckpoint loaded = mttu::load_checkpoint(ckpt);
  mttu::Image img = mttu::read_image_png(image_path);
  fs::create_directories(out_dir);

  std::vector<double> mask_prob, class_prob, attention;
  if (tta)
    mttu::tta_predict(*loaded.model, img, mask_prob, class_prob);
  else
    mttu::plain_predict(*loaded.model, img, mask_prob, class_prob, &attention);
  if (attention.empty())
    mttu::plain_predict(*loaded.model, img, mask_prob, class_prob, &attention);

  mttu::BinaryMask mask{img.height, img.width,
                        std::vector<uint8_t>(mask_prob.size(), 0)};
  for (size_t i = 0; i < mask_prob.size(); ++i)
    mask.data[i] = mask_prob[i] > 0.5 ? 1 : 0;
  mttu::write_mask_png(out_dir + "/mask.png", mask);

  // attention upsampled to image size and tone-mapped by its own max
  const int g = static_cast<int>(std::lround(std::sqrt(attention.size())));
  std::vector<double> up = mttu::resize_bilinear_map(attention, g, g,
                                                     img.height, img.width);
  double peak = 1e-12;
  for (double v : up) peak = std::max(peak, v);
  for (double& v : up) v /= peak;
  mttu::write_gray_png(out_dir + "/attention.png", up, img.height, img.width);

  json probs;
  probs["class_probabilities"] = class_prob;
  double asum = 0.0;
  for (double v : attention) asum += v;
  probs["attention_sum"] = asum;
  write_text(out_dir + "/probabilities.json", probs.dump(2) + "\n");
  std::cout << probs.dump() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task skin lesion segmentation + classification"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  int s_count = 0, s_size = 64, s_classes = 2;
  uint64_t s_seed = 0;
  double s_unlabeled = 0.0;
  bool s_no_hair = false;
  std::string s_out = "dataset";
  synth->add_option("--count", s_count, "number of images")->required();
  synth->add_option("--size", s_size, "image side in pixels");
  synth->add_option("--seed", s_seed, "generator seed");
  synth->add_option("--unlabeled-fraction", s_unlabeled,
                    "fraction of images without masks");
  synth->add_option("--classes", s_classes, "number of lesion classes");
  synth->add_flag("--no-hair", s_no_hair, "disable hair distractors");
  synth->add_option("--out", s_out, "output directory");

  // train
  auto* train = app.add_subcommand("train", "train from a dataset directory");
  std::string t_data, t_out = "run", t_config;
  std::vector<std::string> t_sets;
  long t_iters = -1;
  double t_lr = -1.0;
  int t_ablation = -1, t_input = -1, t_layers = -1, t_embed = -1;
  long t_seed = -1;
  long t_eval_every = -1;
  train->add_option("--data", t_data, "dataset root");
  train->add_option("--out", t_out, "output directory");
  train->add_option("--config", t_config, "JSON config with flat dotted keys");
  train->add_option("--set", t_sets, "override, key=value (repeatable)");
  train->add_option("--iters", t_iters, "training iterations");
  train->add_option("--lr", t_lr, "base learning rate");
  train->add_option("--seed", t_seed, "run seed");
  train->add_option("--ablation", t_ablation, "loss preset 1..6");
  train->add_option("--input-size", t_input, "model input side");
  train->add_option("--layers", t_layers, "transformer layers");
  train->add_option("--embed-dim", t_embed, "token width");
  train->add_option("--eval-every", t_eval_every, "metrics interval, 0=never");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data, e_out;
  bool e_tta = false;
  eval->add_option("--checkpoint", e_ckpt, "checkpoint path")->required();
  eval->add_option("--data", e_data, "dataset root")->required();
  eval->add_flag("--tta", e_tta, "test-time augmentation");
  eval->add_option("--out", e_out, "metrics JSON path (default stdout)");

  // gradcheck
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  int g_reps = 20;
  double g_tol = 1e-4;
  uint64_t g_seed = 12345;
  bool g_bug = false;
  grad->add_option("--reps", g_reps, "random instances per primitive");
  grad->add_option("--tol", g_tol, "relative error tolerance");
  grad->add_option("--seed", g_seed, "suite seed");
  grad->add_flag("--inject-bug", g_bug,
                 "add a broken-gradient negative control (must fail)");

  // predict
  auto* pred = app.add_subcommand("predict", "run one image through a checkpoint");
  std::string p_ckpt, p_image, p_out = "prediction";
  bool p_tta = false;
  pred->add_option("--checkpoint", p_ckpt, "checkpoint path")->required();
  pred->add_option("--image", p_image, "input PNG")->required();
  pred->add_option("--out", p_out, "output directory");
  pred->add_flag("--tta", p_tta, "test-time augmentation");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      mttu::SynthConfig c;
      c.count = s_count;
      c.size = s_size;
      c.seed = s_seed;
      c.unlabeled_fraction = s_unlabeled;
      c.hair_distractors = !s_no_hair;
      c.num_classes = s_classes;
      mttu::synth_generate(c, s_out);
      json effective = {{"synth.count", c.count},
                        {"synth.size", c.size},
                        {"synth.seed", c.seed},
                        {"synth.unlabeled_fraction", c.unlabeled_fraction},
                        {"synth.hair_distractors", c.hair_distractors},
                        {"synth.classes", c.num_classes}};
      echo_config(s_out, effective);
      std::cout << "wrote " << c.count << " images to " << s_out << "\n";
      return kExitOk;
    }
    if (train->parsed()) {
      json effective = train_defaults();
      if (!t_config.empty()) {
        std::ifstream f(t_config);
        if (!f) throw mttu::FormatError("cannot read config " + t_config);
        merge_known(effective, json::parse(f), t_config);
      }
      json flags;
      if (!t_data.empty()) flags["data.root"] = t_data;
      if (t_iters >= 0) flags["train.iters"] = t_iters;
      if (t_lr >= 0) flags["train.lr"] = t_lr;
      if (t_seed >= 0) flags["train.seed"] = t_seed;
      if (t_ablation >= 0) flags["train.ablation"] = t_ablation;
      if (t_input >= 0) flags["model.input_size"] = t_input;
      if (t_layers >= 0) flags["model.layers"] = t_layers;
      if (t_embed >= 0) flags["model.embed_dim"] = t_embed;
      if (t_eval_every >= 0) flags["train.eval_every"] = t_eval_every;
      merge_known(effective, flags, "command line");
      for (const auto& kv : t_sets)
        merge_known(effective, parse_override(kv), "--set");
      return cmd_train(effective, t_out);
    }
    if (eval->parsed()) return cmd_eval(e_ckpt, e_data, e_tta, e_out);
    if (grad->parsed()) return cmd_gradcheck(g_reps, g_tol, g_seed, g_bug);
    if (pred->parsed()) return cmd_predict(p_ckpt, p_image, p_out, p_tta);
  } catch (const mttu::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const mttu::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const mttu::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const mttu::DimensionError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFormat;
  }
  return kExitUsage;
}
