// pathogan: train / infer / evaluate / phantom / render-panel / netspec
// One binary for the whole lifecycle; every subcommand is reproducible
// under --seed and the relevant config keys.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "pathogan/config.hpp"
#include "pathogan/data.hpp"
#include "pathogan/errors.hpp"
#include "pathogan/evaluation.hpp"
#include "pathogan/model.hpp"
#include "pathogan/netspec.hpp"
#include "pathogan/network.hpp"
#include "pathogan/npy.hpp"
#include "pathogan/panel.hpp"
#include "pathogan/png_io.hpp"
#include "pathogan/training.hpp"

namespace fs = std::filesystem;
using namespace pathogan;

namespace {

std::string config_key_help() {
  std::string out = "Config keys (file values, overridable with --set key=value):\n";
  for (const KeySpec& k : RunConfig::schema()) {
    out += "  " + k.key;
    out.append(k.key.size() < 28 ? 28 - k.key.size() : 1, ' ');
    out += k.help + "\n";
  }
  return out;
}

RunConfig load_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  RunConfig cfg =
      config_path.empty() ? RunConfig::defaults() : RunConfig::from_file(config_path);
  for (const std::string& o : overrides) cfg.apply_override(o);
  return cfg;
}

// slices of one split; domain filter: 'a', 'b' or 0 for all
std::vector<DataSlice> gather_slices(const Manifest& m, const std::string& split,
                                     char domain, const SliceSelection& sel) {
  TrainingSet pool = load_slice_pool(m, split, sel);
  std::vector<DataSlice> out;
  if (domain != 'b')
    for (DataSlice& s : pool.healthy) out.push_back(std::move(s));
  if (domain != 'a')
    for (DataSlice& s : pool.pathological) out.push_back(std::move(s));
  return out;
}

std::string slice_tag(const DataSlice& s) {
  return s.image.patient_id + "_" + std::to_string(s.image.slice_index);
}

Tensor<float> channel_of(const Tensor<float>& img, int c) {
  const int H = img.dim(1), W = img.dim(2);
  Tensor<float> out({H, W});
  std::copy(img.ptr() + static_cast<int64_t>(c) * H * W,
            img.ptr() + static_cast<int64_t>(c + 1) * H * W, out.ptr());
  return out;
}

int cmd_netspec_describe(const std::string& text, int channels, int size, int z,
                         int i_override, int vector_input) {
  std::map<std::string, int> symbols = {{"z", z}, {"r", channels + 1}};
  NetSpec spec = parse_netspec(text, [&] {
    // first parse with a permissive i to learn the down count, then derive i
    std::map<std::string, int> probe = {{"z", z}, {"r", channels + 1}, {"i", 1}};
    const NetSpec p = parse_netspec(text, probe);
    int i_val = i_override;
    if (i_val <= 0) {
      i_val = size;
      for (int d = 0; d < p.down_count(); ++d) i_val = (i_val + 1) / 2;
    }
    symbols["i"] = i_val;
    return symbols;
  }());

  const bool flat_input = spec.layers.front().kind == LayerKind::kFC ||
                          spec.layers.front().kind == LayerKind::kF2Q;
  const Shape input = flat_input
                          ? Shape::vec(vector_input > 0 ? vector_input : 2 * z)
                          : Shape::image(channels, size, size);
  const std::vector<Shape> shapes = infer_shapes(spec, input);

  std::cout << "spec: " << spec.pretty() << "\n";
  std::cout << "symbols:";
  for (const auto& [k, v] : spec.symbols) std::cout << " " << k << "=" << v;
  std::cout << "\ninput: " << input.str() << "\n";
  for (size_t li = 0; li < spec.layers.size(); ++li)
    std::cout << "  layer " << li << "  " << spec.layers[li].token() << "  -> "
              << shapes[li].str() << "\n";
  Network<float> net = build_network<float>(spec, input, 0);
  std::cout << "parameters: " << net.parameter_count() << "\n";
  return kExitOk;
}

int cmd_phantom(const std::string& out_dir, int healthy, int pathological,
                int eval_pathological, int size, int channels, uint64_t seed) {
  const std::string manifest =
      write_phantom_dataset(out_dir, healthy, pathological, eval_pathological, size,
                            channels, seed);
  // a ready-to-run training config for this dataset
  RunConfig cfg = RunConfig::defaults();
  cfg.set("seed", static_cast<int64_t>(seed));
  cfg.set("image.size", static_cast<int64_t>(size));
  cfg.set("image.channels", static_cast<int64_t>(channels));
  cfg.set("model.z", int64_t{64});
  cfg.set("arch.encoder",
          std::string("c7-16,d32,d64,d128,d256,C1-15,Q2F,l(z*i)t,l(2*z)"));
  cfg.set("arch.decoder",
          std::string("l(i*i)e,l(i*i),F2Q,c3-256,u128,u64,C7-64e,R64,R64,R64,"
                      "R64,R64,R64,u32,u16,C7-r"));
  cfg.set("arch.zb",
          std::string("c7-16,d32,d64,R64,R64,R64,R64,R64,R64,u32,u16,C7-r"));
  cfg.set("arch.discriminator", std::string("v16,w32,w64,W128,C4-1"));
  cfg.set("data.manifest", manifest);
  cfg.set("data.slice_lo", int64_t{0});
  cfg.set("data.slice_hi", int64_t{1});
  cfg.set("data.counts.healthy", int64_t{-1});
  cfg.set("data.counts.pathological", int64_t{-1});
  cfg.set("augment.deform_grid_spacing", int64_t{32});
  cfg.set("augment.deform_sigma", 2.0);
  cfg.set("train.epochs", int64_t{30});
  cfg.set("train.checkpoint_every", int64_t{10});
  cfg.set("train.out_dir", (fs::path(out_dir) / "run").string());
  const std::string cfg_path = (fs::path(out_dir) / "phantom.json").string();
  std::ofstream out(cfg_path);
  out << cfg.to_json().dump(2) << "\n";
  std::cout << manifest << "\n";
  std::cout << "config: " << cfg_path << "\n";
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, const std::string& resume) {
  std::cout << "config hash " << cfg.hash() << "\n";
  std::cout << "lambda_cc=" << cfg.get_double("loss.lambda_cc")
            << " lambda_vae=" << cfg.get_double("loss.lambda_vae")
            << " lambda_idt=" << cfg.get_double("loss.lambda_idt")
            << " lambda_r=" << cfg.get_double("loss.lambda_r")
            << " lambda_kl=" << cfg.get_double("loss.lambda_kl")
            << " epochs=" << cfg.get_int("train.epochs")
            << " batch=" << cfg.get_int("train.batch_size") << "\n";

  const Manifest manifest = Manifest::load(cfg.get_string("data.manifest"));
  Rng rng(mix_seed(static_cast<uint64_t>(cfg.get_int("seed")), 0xda7aull));
  TrainingSet pool = load_slice_pool(manifest, "train", cfg.slice_selection());
  std::cout << "pool: " << pool.healthy.size() << " healthy, "
            << pool.pathological.size() << " pathological slices\n";
  TrainingSet train = subsample_pool(
      std::move(pool), static_cast<int>(cfg.get_int("data.counts.healthy")),
      static_cast<int>(cfg.get_int("data.counts.pathological")), rng);
  std::cout << "training on " << train.healthy.size() << "/"
            << train.pathological.size() << " slices\n";

  const std::string final_ckpt = run_training(cfg, train, resume);
  std::cout << "final checkpoint: " << final_ckpt << "\n";
  return kExitOk;
}

int cmd_infer(const std::string& checkpoint_path, const std::string& data_path,
              const std::string& out_dir, const std::string& mode,
              const std::string& split, double threshold, uint64_t seed, int limit) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  PathoGanModel<float>& model = ckpt.state->model;
  const Manifest manifest = Manifest::load(data_path);
  fs::create_directories(out_dir);

  const char domain = mode == "sample" ? 'a' : 'b';
  std::vector<DataSlice> slices =
      gather_slices(manifest, split, domain, ckpt.config.slice_selection());
  if (limit > 0 && static_cast<int>(slices.size()) > limit) slices.resize(limit);
  if (slices.empty()) throw IoError("no '" + split + "' slices for mode " + mode);

  Rng rng(seed);
  const int n = manifest.channels;
  for (const DataSlice& s : slices) {
    const std::string tag = slice_tag(s);
    const fs::path base = fs::path(out_dir) / tag;
    if (mode == "segment") {
      auto [prob, mask] = segment(model, s.image, threshold);
      save_npy(base.string() + "_prob.npy", prob);
      save_npy(base.string() + "_mask.npy", mask);
      write_png_gray(base.string() + "_prob.png", gray_from_unit(prob));
      Tensor<float> m(mask.shape);
      for (int64_t i = 0; i < mask.numel(); ++i) m[i] = mask[i];
      write_png_gray(base.string() + "_mask.png", gray_from_unit(m));
    } else if (mode == "inpaint") {
      TranslationProducts<float> p = inpaint_healthy(model, s.image);
      save_npy(base.string() + "_translated.npy", p.output);
      save_npy(base.string() + "_inpaint.npy", p.inpaint);
      save_npy(base.string() + "_prob.npy", p.labelmap);
      write_png_gray(base.string() + "_prob.png", gray_from_unit(p.labelmap));
      for (int c = 0; c < n; ++c) {
        write_png_gray(base.string() + "_translated_c" + std::to_string(c) + ".png",
                       gray_from_signed(channel_of(p.output, c)));
        write_png_gray(base.string() + "_inpaint_c" + std::to_string(c) + ".png",
                       gray_from_signed(channel_of(p.inpaint, c)));
      }
    } else if (mode == "sample") {
      TranslationProducts<float> p = sample_pathology(model, s.image, rng);
      save_npy(base.string() + "_sample.npy", p.output);
      save_npy(base.string() + "_prob.npy", p.labelmap);
      write_png_gray(base.string() + "_prob.png", gray_from_unit(p.labelmap));
      for (int c = 0; c < n; ++c)
        write_png_gray(base.string() + "_sample_c" + std::to_string(c) + ".png",
                       gray_from_signed(channel_of(p.output, c)));
    }
  }
  std::cout << "wrote " << slices.size() << " " << mode << " results to " << out_dir
            << "\n";
  return kExitOk;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_path,
                 double threshold, const std::string& out_dir) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Manifest manifest = Manifest::load(data_path);
  std::vector<DataSlice> slices =
      gather_slices(manifest, "eval", 'b', ckpt.config.slice_selection());
  if (slices.empty()) throw IoError("no pathological eval slices in " + data_path);

  const MetricsRecord rec = evaluate_dataset(ckpt.state->model, slices, threshold);
  fs::create_directories(out_dir);
  write_metrics_csv(rec, (fs::path(out_dir) / "eval_report.csv").string());

  nlohmann::json j = metrics_json(rec);
  j["config"] = ckpt.config.to_json();
  j["config_hash"] = ckpt.config.hash();
  {
    std::ifstream in(checkpoint_path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    j["checkpoint_hash"] = fnv1a_hex(bytes);
  }
  std::ofstream out((fs::path(out_dir) / "eval_report.json").string());
  out << j.dump(2) << "\n";

  std::cout << metrics_table(rec);
  return kExitOk;
}

int cmd_render_panel(const std::string& checkpoint_path, const std::string& data_path,
                     int index, const std::string& split, const std::string& out_path) {
  Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const Manifest manifest = Manifest::load(data_path);
  std::vector<DataSlice> slices =
      gather_slices(manifest, split, 'b', ckpt.config.slice_selection());
  if (index < 0 || index >= static_cast<int>(slices.size()))
    throw IoError("slice index " + std::to_string(index) + " out of range (0.." +
                  std::to_string(slices.size() - 1) + ")");
  const DataSlice& s = slices[index];

  TranslationProducts<float> p = inpaint_healthy(ckpt.state->model, s.image);
  const std::vector<PanelRow> rows = build_panel_rows(
      s.image.data, s.has_gold() ? &s.gold : nullptr, p.inpaint, p.labelmap, p.output);
  write_png_gray(out_path, compose_panel(rows));
  std::cout << "wrote " << out_path << " (" << count_populated(rows)
            << " populated cells)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PathoGAN: weakly-supervised pathology segmentation, inpainting "
               "and sampling"};
  app.require_subcommand(1);
  app.footer(config_key_help());

  // netspec describe
  auto* sub_netspec = app.add_subcommand("netspec", "architecture string tools");
  auto* describe = sub_netspec->add_subcommand("describe", "print IR and shape trace");
  std::string ns_text;
  int ns_channels = 4, ns_size = 240, ns_z = 256, ns_i = 0, ns_vec = 0;
  describe->add_option("spec", ns_text, "architecture string")->required();
  describe->add_option("--channels", ns_channels, "input channels");
  describe->add_option("--size", ns_size, "input spatial size");
  describe->add_option("--z", ns_z, "encoding length");
  describe->add_option("--i", ns_i, "override the reshape side");
  describe->add_option("--vector-input", ns_vec, "input features for vector nets");

  // phantom
  auto* phantom = app.add_subcommand("phantom", "generate a synthetic dataset");
  std::string ph_out = "phantom";
  int ph_healthy = 200, ph_patho = 400, ph_eval = 50, ph_size = 64, ph_channels = 1;
  uint64_t ph_seed = 1337;
  phantom->add_option("--out", ph_out, "output directory")->required();
  phantom->add_option("--healthy", ph_healthy, "healthy training slices");
  phantom->add_option("--pathological", ph_patho, "pathological training slices");
  phantom->add_option("--eval-pathological", ph_eval, "held-out pathological slices");
  phantom->add_option("--size", ph_size, "slice size");
  phantom->add_option("--channels", ph_channels, "channels");
  phantom->add_option("--seed", ph_seed, "seed");

  // train
  auto* train = app.add_subcommand("train", "run the optimization loop");
  std::string tr_config, tr_resume, tr_data, tr_out;
  std::vector<std::string> tr_sets;
  int64_t tr_epochs = -1, tr_seed = -1;
  train->add_option("--config", tr_config, "TOML or JSON config file");
  train->add_option("--set", tr_sets, "override: key=value (repeatable)");
  train->add_option("--epochs", tr_epochs, "override train.epochs");
  train->add_option("--seed", tr_seed, "override seed");
  train->add_option("--data", tr_data, "override data.manifest");
  train->add_option("--out", tr_out, "override train.out_dir");
  train->add_option("--resume", tr_resume, "checkpoint to resume from");

  // infer
  auto* infer = app.add_subcommand("infer", "segment / inpaint / sample");
  std::string in_ckpt, in_data, in_out = "infer_out", in_mode, in_split = "eval";
  double in_threshold = 0.5;
  uint64_t in_seed = 1337;
  int in_limit = 0;
  infer->add_option("--checkpoint", in_ckpt, "checkpoint file")->required();
  infer->add_option("--data", in_data, "dataset manifest")->required();
  infer->add_option("--out", in_out, "output directory");
  infer->add_option("--mode", in_mode, "segment|inpaint|sample")
      ->required()
      ->check(CLI::IsMember({"segment", "inpaint", "sample"}));
  infer->add_option("--split", in_split, "manifest split to read");
  infer->add_option("--threshold", in_threshold, "segmentation threshold");
  infer->add_option("--seed", in_seed, "seed for pathology sampling");
  infer->add_option("--limit", in_limit, "max slices (0: all)");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "metrics against reference masks");
  std::string ev_ckpt, ev_data, ev_out = ".";
  double ev_threshold = 0.5;
  evaluate->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
  evaluate->add_option("--data", ev_data, "dataset manifest")->required();
  evaluate->add_option("--threshold", ev_threshold, "segmentation threshold");
  evaluate->add_option("--out", ev_out, "report directory");

  // render-panel
  auto* panel = app.add_subcommand("render-panel", "compose the figure grid");
  std::string pn_ckpt, pn_data, pn_out = "panel.png", pn_split = "eval";
  int pn_index = 0;
  panel->add_option("--checkpoint", pn_ckpt, "checkpoint file")->required();
  panel->add_option("--data", pn_data, "dataset manifest")->required();
  panel->add_option("--index", pn_index, "slice index within the split");
  panel->add_option("--split", pn_split, "manifest split");
  panel->add_option("--out", pn_out, "output PNG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (describe->parsed())
      return cmd_netspec_describe(ns_text, ns_channels, ns_size, ns_z, ns_i, ns_vec);
    if (phantom->parsed())
      return cmd_phantom(ph_out, ph_healthy, ph_patho, ph_eval, ph_size, ph_channels,
                         ph_seed);
    if (train->parsed()) {
      RunConfig cfg = load_config(tr_config, tr_sets);
      if (tr_epochs >= 0) cfg.set("train.epochs", tr_epochs);
      if (tr_seed >= 0) cfg.set("seed", tr_seed);
      if (!tr_data.empty()) cfg.set("data.manifest", tr_data);
      if (!tr_out.empty()) cfg.set("train.out_dir", tr_out);
      return cmd_train(cfg, tr_resume);
    }
    if (infer->parsed())
      return cmd_infer(in_ckpt, in_data, in_out, in_mode, in_split, in_threshold,
                       in_seed, in_limit);
    if (evaluate->parsed())
      return cmd_evaluate(ev_ckpt, ev_data, ev_threshold, ev_out);
    if (panel->parsed())
      return cmd_render_panel(pn_ckpt, pn_data, pn_index, pn_split, pn_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NonFiniteLossError& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    return kExitNonFinite;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitUsage;
}
