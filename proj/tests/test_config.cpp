#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "adunet/config.hpp"
#include "adunet/errors.hpp"

using namespace adunet;
using nlohmann::json;

TEST_CASE("presets expand to their channel widths") {
  const auto base = config_from_json(json{{"preset", "adu_net"}});
  CHECK(base.encoder_channels == std::array{32, 64, 128, 256, 256});
  CHECK(base.adb_channels == std::array{128, 64, 32, 16});
  CHECK(base.window_size == 8);
  CHECK(base.num_heads == 4);
  CHECK(base.leaky_slope == 0.01);

  const auto plus = config_from_json(json{{"preset", "adu_net_plus"}});
  CHECK(plus.encoder_channels == std::array{64, 128, 256, 512, 512});
  CHECK(plus.adb_channels == std::array{256, 128, 64, 32});

  CHECK(config_from_json(json::object()) == preset_config(Preset::adu_net));
}

TEST_CASE("custom widths derive the decoder from the encoder") {
  const auto c = config_from_json(json{{"preset", "custom"}, {"encoder_channels", {8, 16, 32, 64, 64}}});
  CHECK(c.adb_channels == std::array{32, 16, 8, 4});
  CHECK(c == tiny_config());
}

TEST_CASE("invariant violations name the field") {
  auto message = [](const json& doc) {
    try {
      config_from_json(doc);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string();
  };
  CHECK(message({{"preset", "custom"}, {"num_heads", 5}, {"encoder_channels", {32, 64, 128, 256, 256}}})
            .find("num_heads") != std::string::npos);
  CHECK(message({{"preset", "custom"}, {"encoder_channels", {32, 16, 128, 256, 256}}}).find("encoder_channels") !=
        std::string::npos);
  CHECK(message({{"preset", "custom"}, {"encoder_channels", {8, 16, 32, 64, 128}}}).find("encoder_channels") !=
        std::string::npos);
  CHECK(message({{"preset", "adu_net"}, {"encoder_channels", {8, 16, 32, 64, 64}}}).find("encoder_channels") !=
        std::string::npos);
  CHECK(message({{"window_size", 0}}).find("window_size") != std::string::npos);
  CHECK(message({{"attention_mode", "global"}}).find("attention_mode") != std::string::npos);
  CHECK(message({{"leaky_slope", 1.5}}).find("leaky_slope") != std::string::npos);
  CHECK(message({{"colour", 1}}).find("colour") != std::string::npos);
  CHECK(message({{"preset", "custom"}, {"encoder_channels", {8, 16, 32, 64, 64}}, {"adb_channels", {32, 16, 16, 4}}})
            .find("adb_channels") != std::string::npos);
}

TEST_CASE("num_heads only constrains attended widths") {
  json doc{{"preset", "custom"}, {"encoder_channels", {8, 16, 32, 64, 64}}, {"num_heads", 3}};
  CHECK_THROWS_AS(config_from_json(doc), ConfigError);
  doc["attention_mode"] = "none";
  CHECK_NOTHROW(config_from_json(doc));
}

TEST_CASE("json round trip") {
  auto c = tiny_config();
  c.attention_mode = AttentionMode::swmsa_only;
  c.fusion_mode = FusionMode::gcff_only;
  c.decoder_mode = DecoderMode::single;
  c.loss_mode = LossMode::ssim_plus_mse;
  c.seed = 123456789012345ULL;
  c.leaky_slope = 0.2;
  CHECK(config_from_json(to_json(c)) == c);
  for (Preset p : {Preset::adu_net, Preset::adu_net_plus}) CHECK(config_from_json(to_json(preset_config(p))) == preset_config(p));
}

TEST_CASE("architecture hash ignores loss and seed") {
  auto a = tiny_config(), b = tiny_config();
  b.seed = 9;
  b.loss_mode = LossMode::mse;
  CHECK(architecture_hash(a) == architecture_hash(b));
  b.window_size = 4;
  CHECK(architecture_hash(a) != architecture_hash(b));
  CHECK(architecture_hash(preset_config(Preset::adu_net)) != architecture_hash(preset_config(Preset::adu_net_plus)));
}

TEST_CASE("fnv1a matches published vectors") {
  CHECK(fnv1a64("", 0) == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a", 1) == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar", 6) == 0x85944171f73967e8ULL);
}

TEST_CASE("load_config reads files and reports bad ones") {
  const auto dir = std::filesystem::temp_directory_path() / "adunet_test_config";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "ok.json") << R"({"preset": "adu_net_plus", "loss_mode": "mse", "train": {"epochs": 3}})";
    std::ofstream(dir / "bad.json") << "{ not json";
  }
  const auto c = load_config(dir / "ok.json");
  CHECK(c.preset == Preset::adu_net_plus);
  CHECK(c.loss_mode == LossMode::mse);
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), ConfigError);
  std::filesystem::remove_all(dir);
}
