#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <sys/wait.h>

#include "adunet/checkpoint.hpp"
#include "adunet/data.hpp"
#include "adunet/trainer.hpp"
#include "support.hpp"

using namespace adunet;
namespace fs = std::filesystem;

namespace {

const fs::path kTool = ADUNET_TOOL_PATH;

struct Result {
  int code;
  std::string out;
  std::string err;
};

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "adunet_test_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Result run(const std::string& args, const std::string& env = "") {
  const fs::path out = work_dir() / "stdout.txt", err = work_dir() / "stderr.txt";
  const std::string cmd = "cd '" + work_dir().string() + "' && " + env + " '" + kTool.string() + "' " + args + " >'" +
                          out.string() + "' 2>'" + err.string() + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<float> read_floats(const fs::path& p) {
  const std::string bytes = slurp(p);
  std::vector<float> v(bytes.size() / sizeof(float));
  std::memcpy(v.data(), bytes.data(), v.size() * sizeof(float));
  return v;
}

const char* kTinyConfig = R"({"preset": "custom", "encoder_channels": [8, 16, 32, 64, 64], "window_size": 4,
  "loss_mode": "mse", "train": {"epochs": 1, "batch_size": 2, "val_fraction": 0.25}})";

// One synthetic dataset and one briefly trained checkpoint shared by the cases below.
const fs::path& checkpoint() {
  static const fs::path ckpt = [] {
    write_file(work_dir() / "tiny.json", kTinyConfig);
    REQUIRE(run("synth --n 4 --seed 2 --out data --height 32 --width 32").code == 0);
    const auto r = run("train --config tiny.json --data data --out run --seed 1 --quiet");
    REQUIRE_MESSAGE(r.code == 0, r.err);
    return work_dir() / "run" / "last.ckpt";
  }();
  return ckpt;
}

}  // namespace

TEST_CASE("params reports the breakdown and the layer-table subtotal") {
  write_file(work_dir() / "base.json", R"({"preset": "adu_net"})");
  const auto r = run("params --config base.json");
  REQUIRE(r.code == 0);
  std::istringstream in(r.out);
  std::string line;
  std::int64_t total = -1, conv = -1, table = -2;
  while (std::getline(in, line)) {
    if (line.rfind("total", 0) == 0) total = std::stoll(line.substr(5));
    if (line.rfind("conv3x3", 0) == 0) {
      conv = std::stoll(line.substr(7));
      table = std::stoll(line.substr(line.find("table:") + 6));
    }
  }
  CHECK(conv == table);
  CHECK(total >= 0.6 * 6.63e6);
  CHECK(total <= 1.5 * 6.63e6);
  CHECK(r.out.find("encoder.conv0") != std::string::npos);
}

TEST_CASE("synth writes the data layout and honours the seed fallback") {
  REQUIRE(run("synth --n 2 --seed 9 --out s1 --height 16 --width 16").code == 0);
  REQUIRE(run("synth --n 2 --out s2 --height 16 --width 16", "ADUNET_SEED=9").code == 0);
  REQUIRE(run("synth --n 2 --seed 10 --out s3 --height 16 --width 16", "ADUNET_SEED=9").code == 0);
  for (auto sub : {"input", "gt", "depth"}) CHECK(fs::exists(work_dir() / "s1" / sub / "00001.png"));
  CHECK(slurp(work_dir() / "s1/input/00000.png") == slurp(work_dir() / "s2/input/00000.png"));
  CHECK(slurp(work_dir() / "s1/input/00000.png") != slurp(work_dir() / "s3/input/00000.png"));
  const auto bad = run("synth --n 2 --out s4", "ADUNET_SEED=abc");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("ADUNET_SEED") != std::string::npos);
}

TEST_CASE("train writes checkpoints and is deterministic given a seed") {
  const fs::path& ckpt = checkpoint();
  for (auto name : {"best.ckpt", "last.ckpt", "epoch_1.ckpt", "report.json", "config.json"})
    CHECK(fs::exists(ckpt.parent_path() / name));
  REQUIRE(run("train --config tiny.json --data data --out run2 --seed 1 --quiet").code == 0);
  CHECK(slurp(work_dir() / "run/last.ckpt") == slurp(work_dir() / "run2/last.ckpt"));
}

TEST_CASE("eval prints and records metrics") {
  const fs::path& ckpt = checkpoint();
  const auto r = run("eval --ckpt '" + ckpt.string() + "' --data data --metrics m.json");
  REQUIRE(r.code == 0);
  CHECK(r.out.find("psnr") != std::string::npos);
  const auto doc = nlohmann::json::parse(slurp(work_dir() / "m.json"));
  CHECK(doc["count"] == 4);
  const auto ds = load_paired(work_dir() / "data");
  CHECK(doc["psnr"].get<double>() == doctest::Approx(evaluate(load_network(ckpt), ds).psnr).epsilon(1e-12));
}

TEST_CASE("infer restores every image with its stem and size") {
  const fs::path& ckpt = checkpoint();
  fs::create_directories(work_dir() / "three");
  Rng rng(1);
  const std::vector<std::pair<std::string, Shape>> images{
      {"alpha", {3, 32, 32}}, {"beta", {3, 487, 313}}, {"gamma", {3, 20, 45}}};
  for (const auto& [stem, shape] : images)
    write_png_rgb(work_dir() / "three" / (stem + ".png"), testing::random_tensor<float>(shape, rng, 0, 1));
  const auto r = run("infer --ckpt '" + ckpt.string() + "' --input three --out restored");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(work_dir() / "restored")) pngs += e.path().extension() == ".png";
  CHECK(pngs == 3);
  for (const auto& [stem, shape] : images) CHECK(read_png_rgb(work_dir() / "restored" / (stem + ".png")).shape() == shape);
}

TEST_CASE("dumped residuals recombine to the restored image") {
  const fs::path& ckpt = checkpoint();
  const auto r = run("infer --ckpt '" + ckpt.string() + "' --input data/input --out dumped --dump-residuals");
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const std::string stem : {"00000", "00003"}) {
    const fs::path dir = work_dir() / "dumped";
    CHECK(fs::exists(dir / (stem + "_cres.png")));
    CHECK(fs::exists(dir / (stem + "_sres.png")));
    const Image input = read_png_rgb(work_dir() / "data/input" / (stem + ".png"));
    const auto c = read_floats(dir / (stem + "_cres.f32"));
    const auto s = read_floats(dir / (stem + "_sres.f32"));
    const auto y = read_floats(dir / (stem + "_restored.f32"));
    REQUIRE(c.size() == static_cast<std::size_t>(input.numel()));
    int worst = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      const float recombined = input[static_cast<std::int64_t>(i)] - c[i] - s[i];
      int ulps = 0;
      for (float x = std::min(recombined, y[i]); x < std::max(recombined, y[i]) && ulps < 100; ++ulps)
        x = std::nextafter(x, INFINITY);
      worst = std::max(worst, ulps);
    }
    CHECK(worst <= 2);

    // The sidecar range maps the display PNG back to the raw residual.
    std::istringstream side(slurp(dir / (stem + "_residuals.txt")));
    std::string key;
    double value, cmin = 0, cmax = 0;
    while (side >> key >> value) {
      if (key == "cres_min") cmin = value;
      if (key == "cres_max") cmax = value;
    }
    const Image shown = read_png_rgb(dir / (stem + "_cres.png"));
    for (std::size_t i = 0; i < c.size(); i += 97)
      CHECK(std::abs(cmin + shown[static_cast<std::int64_t>(i)] * (cmax - cmin) - c[i]) <= (cmax - cmin) / 255 + 1e-6);
  }
}

TEST_CASE("errors map to exit codes") {
  const fs::path& ckpt = checkpoint();
  CHECK(run("").code == 1);
  CHECK(run("train --config missing.json --data data").code == 1);
  CHECK(run("synth --n 0 --out x").code == 1);

  const auto no_data = run("eval --ckpt '" + ckpt.string() + "' --data nowhere");
  CHECK(no_data.code == 2);
  CHECK_FALSE(no_data.err.empty());

  write_file(work_dir() / "single.json",
             R"({"preset": "custom", "encoder_channels": [8, 16, 32, 64, 64], "decoder_mode": "single"})");
  const auto mismatch = run("infer --ckpt '" + ckpt.string() + "' --input data/input --out x --config single.json");
  CHECK(mismatch.code == 2);
  CHECK(mismatch.err.find("does not match") != std::string::npos);

  write_file(work_dir() / "broken.json", R"({"num_heads": 5})");
  const auto bad = run("params --config broken.json");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("num_heads") != std::string::npos);

  write_file(work_dir() / "corrupt.ckpt", "ADUNETCK garbage");
  CHECK(run("eval --ckpt corrupt.ckpt --data data").code == 2);
}
