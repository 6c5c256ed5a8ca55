#include "adunet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "adunet/errors.hpp"

namespace adunet {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoints are written on little-endian hosts");

constexpr char kMagic[8] = {'A', 'D', 'U', 'N', 'E', 'T', 'C', 'K'};

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw CheckpointError("checkpoint is truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

struct Parsed {
  nlohmann::json manifest;
  std::string body;
};

Parsed parse(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  if (data.size() < sizeof kMagic || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointError(path.string() + " is not a checkpoint");
  pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(data, pos);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto manifest_len = take<std::uint32_t>(data, pos);
  if (pos + manifest_len > data.size()) throw CheckpointError("checkpoint is truncated");
  Parsed parsed;
  try {
    parsed.manifest = nlohmann::json::parse(data.substr(pos, manifest_len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  pos += manifest_len;
  const auto body_len = take<std::uint64_t>(data, pos);
  const auto checksum = take<std::uint64_t>(data, pos);
  if (data.size() - pos != body_len)
    throw CheckpointError("checkpoint body has " + std::to_string(data.size() - pos) + " bytes, expected " +
                          std::to_string(body_len) + " (checksum cannot be verified)");
  parsed.body = data.substr(pos);
  if (fnv1a64(parsed.body.data(), parsed.body.size()) != checksum) throw CheckpointError("checkpoint checksum mismatch");
  return parsed;
}

CheckpointContents contents_of(const Parsed& p) {
  CheckpointContents c;
  try {
    c.config = config_from_json(p.manifest.at("config"));
    c.config_hash = std::stoull(p.manifest.at("config_hash").get<std::string>(), nullptr, 16);
    c.epoch = p.manifest.at("epoch").get<int>();
    c.extra = p.manifest.value("extra", nlohmann::json::object());
    const auto offset = p.manifest.at("optimizer_offset").get<std::uint64_t>();
    const auto size = p.manifest.at("optimizer_bytes").get<std::uint64_t>();
    if (offset + size > p.body.size()) throw CheckpointError("optimizer state lies outside the body");
    c.optimizer.assign(p.body.begin() + static_cast<std::ptrdiff_t>(offset),
                       p.body.begin() + static_cast<std::ptrdiff_t>(offset + size));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  if (c.config_hash != architecture_hash(c.config))
    throw CheckpointError("checkpoint hash does not match its embedded config");
  return c;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const AduNet<float>& net, int epoch,
                     const std::vector<std::uint8_t>& optimizer, const nlohmann::json& extra) {
  std::string body;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& e : net.store().entries()) {
    const Tensor<float>& v = e->var.value();
    tensors.push_back({{"name", e->name},
                       {"kind", e->kind == TensorKind::parameter ? "parameter" : "buffer"},
                       {"dtype", "float32"},
                       {"shape", v.shape()},
                       {"offset", body.size()}});
    body.append(reinterpret_cast<const char*>(v.data()), static_cast<std::size_t>(v.numel()) * sizeof(float));
  }
  const std::size_t optimizer_offset = body.size();
  body.append(reinterpret_cast<const char*>(optimizer.data()), optimizer.size());

  const nlohmann::json manifest = {{"config", to_json(net.config())},
                                   {"config_hash", hex(net.store().config_hash)},
                                   {"seed", net.store().seed},
                                   {"epoch", epoch},
                                   {"tensors", tensors},
                                   {"optimizer_offset", optimizer_offset},
                                   {"optimizer_bytes", optimizer.size()},
                                   {"extra", extra.is_null() ? nlohmann::json::object() : extra}};
  const std::string manifest_text = manifest.dump();

  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(manifest_text.size()));
  out += manifest_text;
  put<std::uint64_t>(out, body.size());
  put<std::uint64_t>(out, fnv1a64(body.data(), body.size()));
  out += body;

  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw CheckpointError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    f.flush();
    if (!f) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw CheckpointError("failed to write checkpoint " + path.string() + " (disk full?)");
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError("failed to move checkpoint into place: " + ec.message());
}

CheckpointContents read_checkpoint_header(const std::filesystem::path& path) { return contents_of(parse(path)); }

CheckpointContents load_checkpoint(const std::filesystem::path& path, AduNet<float>& net) {
  const Parsed parsed = parse(path);
  CheckpointContents c = contents_of(parsed);
  if (c.config_hash != net.store().config_hash)
    throw CheckpointError("checkpoint architecture " + hex(c.config_hash) + " does not match the network (" +
                          hex(net.store().config_hash) + ")");
  const auto& tensors = parsed.manifest.at("tensors");
  if (tensors.size() != net.store().entries().size())
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) + " tensors, network has " +
                          std::to_string(net.store().entries().size()));
  for (const auto& t : tensors) {
    const auto name = t.at("name").get<std::string>();
    if (!net.store().contains(name)) throw CheckpointError("checkpoint tensor " + name + " is not in the network");
    Tensor<float>& v = net.store().at(name).var.mutable_value();
    if (t.at("shape").get<Shape>() != v.shape())
      throw CheckpointError("tensor " + name + " has shape " + t.at("shape").dump() + ", network expects " +
                            shape_string(v.shape()));
    const auto offset = t.at("offset").get<std::uint64_t>();
    const std::size_t bytes = static_cast<std::size_t>(v.numel()) * sizeof(float);
    if (offset + bytes > parsed.body.size()) throw CheckpointError("tensor " + name + " lies outside the body");
    std::memcpy(v.data(), parsed.body.data() + offset, bytes);
  }
  return c;
}

AduNet<float> load_network(const std::filesystem::path& path, CheckpointContents* contents) {
  const CheckpointContents header = read_checkpoint_header(path);
  AduNet<float> net(header.config);
  CheckpointContents c = load_checkpoint(path, net);
  if (contents) *contents = std::move(c);
  return net;
}

}  // namespace adunet
