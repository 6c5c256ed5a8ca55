// Command-line front end: train, eval, infer, synth, params.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "adunet/checkpoint.hpp"
#include "adunet/data.hpp"
#include "adunet/errors.hpp"
#include "adunet/metrics.hpp"
#include "adunet/network.hpp"
#include "adunet/trainer.hpp"

namespace fs = std::filesystem;
using namespace adunet;

namespace {

constexpr int kUsageError = 1;
constexpr int kRuntimeError = 2;

// --seed wins over ADUNET_SEED; neither leaves the document's seed alone.
std::optional<std::uint64_t> resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return flag;
  if (const char* env = std::getenv("ADUNET_SEED"); env && *env) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("ADUNET_SEED is not an unsigned integer: ") + env);
  }
  return std::nullopt;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  out << text;
  if (!out) throw DataError("failed to write " + path.string());
}

void write_floats(const fs::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!out) throw DataError("failed to write " + path.string());
}

// Affine map of a signed residual onto [0,1] for display.
Image display_normalize(const Tensor<float>& r, float lo, float hi) {
  Image out(r.shape());
  const float span = hi - lo;
  for (std::int64_t i = 0; i < r.numel(); ++i) out[i] = span > 0 ? (r[i] - lo) / span : 0.5f;
  return out;
}

std::pair<float, float> range_of(const Tensor<float>& t) {
  const auto [lo, hi] = std::minmax_element(t.values().begin(), t.values().end());
  return {*lo, *hi};
}

void check_against_config(const CheckpointContents& ck, const std::string& config_path) {
  if (config_path.empty()) return;
  const NetworkConfig c = load_config(config_path);
  if (architecture_hash(c) != ck.config_hash)
    throw CheckpointError("checkpoint architecture does not match " + config_path);
}

std::vector<fs::path> png_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("input directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  return files;
}

int run_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
              const std::optional<std::uint64_t>& seed_flag, const std::optional<int>& epochs,
              const std::optional<std::int64_t>& max_steps, bool quiet) {
  const nlohmann::json doc = read_json(config_path);
  NetworkConfig net_config = config_from_json(doc);
  TrainConfig train_config = doc.contains("train") ? train_config_from_json(doc["train"]) : TrainConfig{};
  if (const auto seed = resolve_seed(seed_flag)) net_config.seed = train_config.seed = *seed;
  if (epochs) train_config.epochs = *epochs;
  if (max_steps) train_config.max_steps = *max_steps;
  train_config.checkpoint_dir = out_dir;
  train_config.verbose = !quiet;
  validate(train_config);

  const fs::path root(data_dir);
  PairedDataset train_set, val_set;
  if (fs::is_directory(root / "train") && fs::is_directory(root / "val")) {
    train_set = load_paired(root / "train", train_config.resize);
    val_set = load_paired(root / "val", train_config.resize);
  } else {
    std::tie(train_set, val_set) = split(load_paired(root, train_config.resize), 1.0 - train_config.val_fraction,
                                         train_config.seed);
  }

  fs::create_directories(out_dir);
  nlohmann::json used = to_json(net_config);
  used["train"] = to_json(train_config);
  write_text(fs::path(out_dir) / "config.json", used.dump(2) + "\n");

  AduNet<float> net(net_config);
  const TrainReport report = train(net, train_config, train_set, val_set);
  std::cout << "trained " << report.epochs.size() << " epochs, best val PSNR " << std::fixed << std::setprecision(3)
            << report.best_metric << " dB at epoch " << report.best_epoch << "; checkpoints in " << out_dir << "\n";
  return 0;
}

int run_eval(const std::string& ckpt, const std::string& data_dir, const std::string& config_path,
             std::string metrics_path) {
  CheckpointContents contents;
  const AduNet<float> net = load_network(ckpt, &contents);
  check_against_config(contents, config_path);
  const PairedDataset ds = load_paired(data_dir);
  const Metrics m = evaluate(net, ds);
  const Metrics input = evaluate_identity(ds);
  std::cout << std::fixed << std::setprecision(4) << "psnr " << m.psnr << " ssim " << m.ssim << " (input psnr "
            << input.psnr << " ssim " << input.ssim << ", " << m.count << " images)\n";
  if (metrics_path.empty()) metrics_path = (fs::path(ckpt).parent_path() / "metrics.json").string();
  const nlohmann::json doc{{"checkpoint", ckpt},     {"data", data_dir},         {"count", m.count},
                           {"psnr", m.psnr},         {"ssim", m.ssim},           {"mse", m.mse},
                           {"input_psnr", input.psnr}, {"input_ssim", input.ssim}};
  write_text(metrics_path, doc.dump(2) + "\n");
  return 0;
}

int run_infer(const std::string& ckpt, const std::string& input_dir, const std::string& out_dir,
              const std::string& config_path, bool dump_residuals) {
  CheckpointContents contents;
  const AduNet<float> net = load_network(ckpt, &contents);
  check_against_config(contents, config_path);
  const auto files = png_files(input_dir);
  fs::create_directories(out_dir);

  std::vector<std::string> errors(files.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < files.size(); ++i) {
    try {
      const std::string stem = files[i].stem().string();
      const fs::path out(out_dir);
      const Image input = read_png_rgb(files[i]);
      const auto d = net.decompose(input);
      write_png_rgb(out / (stem + ".png"), clamp01(d.restored));
      if (!dump_residuals) continue;
      const auto [clo, chi] = range_of(d.contamination);
      const auto [slo, shi] = range_of(d.scene);
      write_png_rgb(out / (stem + "_cres.png"), display_normalize(d.contamination, clo, chi));
      write_png_rgb(out / (stem + "_sres.png"), display_normalize(d.scene, slo, shi));
      write_floats(out / (stem + "_cres.f32"), d.contamination);
      write_floats(out / (stem + "_sres.f32"), d.scene);
      write_floats(out / (stem + "_restored.f32"), d.restored);
      std::ostringstream sidecar;
      sidecar << std::setprecision(9) << "height " << input.dim(1) << "\nwidth " << input.dim(2) << "\ncres_min "
              << clo << "\ncres_max " << chi << "\nsres_min " << slo << "\nsres_max " << shi
              << "\n# display = (raw - min) / (max - min); raw float32 planes in <stem>_{cres,sres,restored}.f32\n";
      write_text(out / (stem + "_residuals.txt"), sidecar.str());
    } catch (const std::exception& e) {
      errors[i] = files[i].string() + ": " + e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw DataError(e);
  std::cout << "restored " << files.size() << " images into " << out_dir << "\n";
  return 0;
}

int run_synth(int n, const std::optional<std::uint64_t>& seed_flag, const std::string& out_dir, SynthParams params,
              const std::vector<double>& beta, const std::vector<double>& airlight,
              const std::vector<int>& streaks) {
  if (const auto seed = resolve_seed(seed_flag)) params.seed = *seed;
  if (!beta.empty()) params.beta_min = beta.front(), params.beta_max = beta.back();
  if (!airlight.empty()) params.airlight_min = airlight.front(), params.airlight_max = airlight.back();
  if (!streaks.empty()) params.streaks_min = streaks.front(), params.streaks_max = streaks.back();
  validate(params);
  write_synth_dataset(out_dir, params, n);
  std::cout << "wrote " << n << " pairs to " << out_dir << "\n";
  return 0;
}

int run_params(const std::string& config_path) {
  const NetworkConfig c = load_config(config_path);
  const ParameterBreakdown b = count_parameters(c);
  std::size_t width = 6;
  for (const auto& [name, _] : b.modules) width = std::max(width, name.size());
  std::cout << std::left << std::setw(static_cast<int>(width)) << "module" << "  " << std::right << std::setw(12)
            << "parameters" << "\n";
  for (const auto& [name, count] : b.modules)
    std::cout << std::left << std::setw(static_cast<int>(width)) << name << "  " << std::right << std::setw(12)
              << count << "\n";
  std::cout << "\nconv3x3    " << b.conv3x3 << " (layer table: " << table_conv_parameter_count(c) << ")\n"
            << "conv1x1    " << b.conv1x1 << "\n"
            << "norm       " << b.norm << "\n"
            << "attention  " << b.attention << "\n"
            << "total      " << b.total << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint rain and haze removal with an asymmetric dual-decoder U-Net"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_dir = "run", ckpt, input_dir, metrics_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::int64_t> max_steps;
  bool quiet = false, dump_residuals = false;

  auto* train_cmd = app.add_subcommand("train", "Train a network and write checkpoints and a report");
  train_cmd->add_option("--config", config_path, "Network config JSON (optional \"train\" section)")
      ->required()
      ->check(CLI::ExistingFile);
  train_cmd->add_option("--data", data_dir, "Dataset root with input/ and gt/, or train/ and val/")
      ->required()
      ->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", out_dir, "Run directory")->capture_default_str();
  train_cmd->add_option("--seed", seed, "Seed for initialisation, shuffling and the split");
  train_cmd->add_option("--epochs", epochs, "Override the configured epoch count")->check(CLI::PositiveNumber);
  train_cmd->add_option("--max-steps", max_steps, "Stop after this many optimizer steps")->check(CLI::PositiveNumber);
  train_cmd->add_flag("--quiet", quiet, "No per-epoch log");

  auto* eval_cmd = app.add_subcommand("eval", "Mean PSNR/SSIM of a checkpoint on a paired dataset");
  eval_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", data_dir, "Dataset root with input/ and gt/")->required();
  eval_cmd->add_option("--config", config_path, "Config the checkpoint must match");
  eval_cmd->add_option("--metrics", metrics_path, "Metrics JSON path (default: next to the checkpoint)");
  eval_cmd->add_option("--seed", seed, "Accepted for symmetry; evaluation is deterministic");

  auto* infer_cmd = app.add_subcommand("infer", "Restore every PNG in a directory");
  infer_cmd->add_option("--ckpt", ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--input", input_dir, "Directory of PNG images")->required();
  infer_cmd->add_option("--out", out_dir, "Output directory")->required();
  infer_cmd->add_option("--config", config_path, "Config the checkpoint must match");
  infer_cmd->add_flag("--dump-residuals", dump_residuals,
                      "Also write <stem>_cres.png and <stem>_sres.png with raw ranges in a sidecar");
  infer_cmd->add_option("--seed", seed, "Accepted for symmetry; inference is deterministic");

  SynthParams synth;
  int n = 0;
  std::vector<double> beta, airlight;
  std::vector<int> streaks;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic rain and haze dataset");
  synth_cmd->add_option("--n", n, "Number of pairs")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--seed", seed, "Generator seed");
  synth_cmd->add_option("--out", out_dir, "Dataset root")->required();
  synth_cmd->add_option("--height", synth.height, "Image height")->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--width", synth.width, "Image width")->capture_default_str()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--beta", beta, "Haze attenuation: one value or min max")->expected(1, 2);
  synth_cmd->add_option("--airlight", airlight, "Atmospheric light: one value or min max")->expected(1, 2);
  synth_cmd->add_option("--streaks", streaks, "Streak count: one value or min max")->expected(1, 2);
  synth_cmd->add_option("--blur", synth.blur_sigma, "Streak blur sigma (px)")->capture_default_str();

  auto* params_cmd = app.add_subcommand("params", "Per-module parameter breakdown");
  params_cmd->add_option("--config", config_path, "Network config JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);  // prints help or the parse error
    return code == 0 ? 0 : kUsageError;
  }

  try {
    if (*train_cmd) return run_train(config_path, data_dir, out_dir, seed, epochs, max_steps, quiet);
    if (*eval_cmd) return run_eval(ckpt, data_dir, config_path, metrics_path);
    if (*infer_cmd) return run_infer(ckpt, input_dir, out_dir, config_path, dump_residuals);
    if (*synth_cmd) return run_synth(n, seed, out_dir, synth, beta, airlight, streaks);
    if (*params_cmd) return run_params(config_path);
  } catch (const std::exception& e) {
    std::cerr << "adunet: " << e.what() << "\n";
    return kRuntimeError;
  }
  return kUsageError;
}
