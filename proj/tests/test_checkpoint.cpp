#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "adunet/checkpoint.hpp"
#include "adunet/errors.hpp"
#include "support.hpp"

using namespace adunet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

bool same_tensors(const AduNet<float>& a, const AduNet<float>& b) {
  const auto& ea = a.store().entries();
  const auto& eb = b.store().entries();
  if (ea.size() != eb.size()) return false;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    const auto& x = ea[i]->var.value();
    const auto& y = eb[i]->var.value();
    if (ea[i]->name != eb[i]->name || x.shape() != y.shape()) return false;
    if (std::memcmp(x.data(), y.data(), static_cast<std::size_t>(x.numel()) * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("save then load reproduces every tensor byte") {
  TempDir dir("adunet_test_ckpt");
  auto config = tiny_config();
  config.seed = 3;
  AduNet<float> net(config);
  Rng rng(1);
  for (const auto& e : net.store().entries())
    for (auto& v : e->var.mutable_value().values()) v = static_cast<float>(rng.normal());
  const std::vector<std::uint8_t> blob{1, 2, 3, 250};
  save_checkpoint(dir.path / "a.ckpt", net, 17, blob, {{"note", "x"}});
  CHECK_FALSE(fs::exists(dir.path / "a.ckpt.tmp"));

  config.seed = 99;  // a different initialisation, same architecture
  AduNet<float> other(config);
  CHECK_FALSE(same_tensors(net, other));
  const auto contents = load_checkpoint(dir.path / "a.ckpt", other);
  CHECK(same_tensors(net, other));
  CHECK(contents.epoch == 17);
  CHECK(contents.optimizer == blob);
  CHECK(contents.extra["note"] == "x");
  CHECK(contents.config.seed == 3);
  CHECK(contents.config_hash == architecture_hash(tiny_config()));

  CheckpointContents c2;
  const auto rebuilt = load_network(dir.path / "a.ckpt", &c2);
  CHECK(same_tensors(net, rebuilt));
  CHECK(rebuilt.config() == net.config());

  // Saving the restored network again gives the same file.
  save_checkpoint(dir.path / "b.ckpt", rebuilt, 17, blob, {{"note", "x"}});
  CHECK(bytes_of(dir.path / "a.ckpt") == bytes_of(dir.path / "b.ckpt"));
}

TEST_CASE("architecture mismatch is rejected") {
  TempDir dir("adunet_test_ckpt_hash");
  AduNet<float> net(tiny_config());
  save_checkpoint(dir.path / "a.ckpt", net, 1);
  auto c = tiny_config();
  c.decoder_mode = DecoderMode::single;
  AduNet<float> single(c);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "a.ckpt", single), CheckpointError);
}

TEST_CASE("corruption, truncation and version are detected") {
  TempDir dir("adunet_test_ckpt_bad");
  AduNet<float> net(tiny_config());
  save_checkpoint(dir.path / "good.ckpt", net, 1);
  const auto good = bytes_of(dir.path / "good.ckpt");

  auto flipped = good;
  flipped[flipped.size() - 10] ^= 0x40;
  write_bytes(dir.path / "flipped.ckpt", flipped);
  CHECK_THROWS_AS(load_checkpoint(dir.path / "flipped.ckpt", net), CheckpointError);

  write_bytes(dir.path / "short.ckpt", std::vector<char>(good.begin(), good.begin() + static_cast<long>(good.size() / 2)));
  CHECK_THROWS_AS(read_checkpoint_header(dir.path / "short.ckpt"), CheckpointError);

  auto version = good;
  version[8] = 9;
  write_bytes(dir.path / "version.ckpt", version);
  try {
    read_checkpoint_header(dir.path / "version.ckpt");
    FAIL("expected CheckpointError");
  } catch (const CheckpointError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  auto magic = good;
  magic[0] = 'X';
  write_bytes(dir.path / "magic.ckpt", magic);
  CHECK_THROWS_AS(read_checkpoint_header(dir.path / "magic.ckpt"), CheckpointError);
  CHECK_THROWS_AS(read_checkpoint_header(dir.path / "absent.ckpt"), CheckpointError);
}

TEST_CASE("unwritable destination raises") {
  AduNet<float> net(tiny_config());
  CHECK_THROWS_AS(save_checkpoint("/proc/adunet/none.ckpt", net, 0), CheckpointError);
}
