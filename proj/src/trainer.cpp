#include "adunet/trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>

#include "adunet/checkpoint.hpp"
#include "adunet/errors.hpp"
#include "adunet/rng.hpp"

namespace adunet {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Stacks samples [first, last) of `order` into [B,3,H,W] input and target.
std::pair<Tensor<float>, Tensor<float>> make_batch(const PairedDataset& ds, const std::vector<std::size_t>& order,
                                                   std::size_t first, std::size_t last) {
  const Shape& s = ds.items[order[first]].input.shape();
  const auto b = static_cast<std::int64_t>(last - first);
  Tensor<float> x({b, s[0], s[1], s[2]}), y({b, s[0], s[1], s[2]});
  const std::int64_t per = shape_numel(s);
  for (std::size_t i = first; i < last; ++i) {
    const Sample& sample = ds.items[order[i]];
    const auto off = static_cast<std::int64_t>(i - first) * per;
    std::copy_n(sample.input.data(), per, x.data() + off);
    std::copy_n(sample.gt.data(), per, y.data() + off);
  }
  return {std::move(x), std::move(y)};
}

void check_trainable(const PairedDataset& ds, const char* which) {
  if (ds.empty()) throw DataError(std::string(which) + " set is empty");
  const Shape& s = ds.items.front().input.shape();
  for (const auto& item : ds.items) {
    if (item.input.shape() != s || item.gt.shape() != s)
      throw DataError(std::string(which) + " sample " + item.stem + " has shape " + shape_string(item.input.shape()) +
                      "; training batches need one shared size (set a resize target)");
  }
  if (s.size() != 3 || s[0] != 3 || s[1] % 16 || s[2] % 16)
    throw DataError(std::string(which) + " images are " + shape_string(s) + "; height and width must be divisible by 16");
}

void write_json(const std::filesystem::path& path, const nlohmann::json& doc) {
  std::ofstream out(path);
  out << doc.dump(2) << '\n';
  if (!out) throw CheckpointError("failed to write " + path.string());
}

}  // namespace

void validate(const TrainConfig& c) {
  auto fail = [](const std::string& what) { throw ConfigError("train config: " + what); };
  if (c.epochs < 1) fail("epochs must be >= 1");
  if (c.batch_size < 1) fail("batch_size must be >= 1");
  if (!(c.lr > 0)) fail("lr must be positive");
  if (!(c.plateau_factor > 0 && c.plateau_factor < 1)) fail("plateau_factor must lie in (0, 1)");
  if (c.plateau_patience < 1) fail("plateau_patience must be >= 1");
  if (c.monitor != "val_psnr") fail("monitor must be val_psnr");
  if (c.max_steps < 0) fail("max_steps must be >= 0");
  if (c.save_every < 0) fail("save_every must be >= 0");
  if (!(c.val_fraction > 0 && c.val_fraction < 1)) fail("val_fraction must lie in (0, 1)");
  if (c.resize && (c.resize->first < 16 || c.resize->second < 16 || c.resize->first % 16 || c.resize->second % 16))
    fail("resize must be positive multiples of 16");
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  static const std::set<std::string> known{"epochs",      "batch_size", "lr",        "plateau_factor",
                                           "plateau_patience", "monitor", "seed",    "checkpoint_dir",
                                           "max_steps",   "save_every", "val_fraction", "resize"};
  if (!doc.is_object()) throw ConfigError("train config must be a JSON object");
  for (const auto& [key, _] : doc.items())
    if (!known.count(key)) throw ConfigError("train config: unknown key \"" + key + "\"");
  TrainConfig c;
  try {
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.lr = doc.value("lr", c.lr);
    c.plateau_factor = doc.value("plateau_factor", c.plateau_factor);
    c.plateau_patience = doc.value("plateau_patience", c.plateau_patience);
    c.monitor = doc.value("monitor", c.monitor);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("checkpoint_dir")) c.checkpoint_dir = doc.at("checkpoint_dir").get<std::string>();
    c.max_steps = doc.value("max_steps", c.max_steps);
    c.save_every = doc.value("save_every", c.save_every);
    c.val_fraction = doc.value("val_fraction", c.val_fraction);
    if (doc.contains("resize") && !doc.at("resize").is_null()) {
      const auto r = doc.at("resize").get<std::vector<int>>();
      if (r.size() != 2) throw ConfigError("train config: resize must be [height, width]");
      c.resize = std::make_pair(r[0], r[1]);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json doc{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"plateau_factor", c.plateau_factor},
                     {"plateau_patience", c.plateau_patience},
                     {"monitor", c.monitor},
                     {"seed", c.seed},
                     {"checkpoint_dir", c.checkpoint_dir.string()},
                     {"max_steps", c.max_steps},
                     {"save_every", c.save_every},
                     {"val_fraction", c.val_fraction}};
  doc["resize"] = c.resize ? nlohmann::json{c.resize->first, c.resize->second} : nlohmann::json(nullptr);
  return doc;
}

Adam::Adam(std::vector<Var<float>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<std::size_t>(p.value().numel()), 0.f);
    v_.emplace_back(static_cast<std::size_t>(p.value().numel()), 0.f);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const auto b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  const auto step_size = static_cast<float>(lr_ / c1);
  const auto inv_c2 = static_cast<float>(1.0 / c2);
  const auto eps = static_cast<float>(eps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Var<float>& p = params_[k];
    const Tensor<float>& g = p.grad();
    if (g.empty()) continue;
    float* w = p.mutable_value().data();
    float* m = m_[k].data();
    float* v = v_[k].data();
    const std::int64_t n = g.numel();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1.f - b1) * g[i];
      v[i] = b2 * v[i] + (1.f - b2) * g[i] * g[i];
      w[i] -= step_size * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
    }
  }
}

std::vector<std::uint8_t> Adam::serialize() const {
  std::vector<std::uint8_t> out(sizeof(std::int64_t));
  std::memcpy(out.data(), &t_, sizeof t_);
  for (const auto* moments : {&m_, &v_})
    for (const auto& buf : *moments) {
      const auto* bytes = reinterpret_cast<const std::uint8_t*>(buf.data());
      out.insert(out.end(), bytes, bytes + buf.size() * sizeof(float));
    }
  return out;
}

void Adam::deserialize(const std::vector<std::uint8_t>& blob) {
  std::size_t expected = sizeof(std::int64_t);
  for (const auto& buf : m_) expected += 2 * buf.size() * sizeof(float);
  if (blob.size() != expected)
    throw CheckpointError("optimizer state has " + std::to_string(blob.size()) + " bytes, expected " +
                          std::to_string(expected));
  std::size_t pos = 0;
  std::memcpy(&t_, blob.data(), sizeof t_);
  pos += sizeof t_;
  for (auto* moments : {&m_, &v_})
    for (auto& buf : *moments) {
      std::memcpy(buf.data(), blob.data() + pos, buf.size() * sizeof(float));
      pos += buf.size() * sizeof(float);
    }
}

PlateauScheduler::PlateauScheduler(double lr, double factor, int patience)
    : lr_(lr), factor_(factor), patience_(patience), best_(-std::numeric_limits<double>::infinity()) {
  if (!(factor > 0 && factor < 1)) throw ConfigError("plateau factor must lie in (0, 1)");
  if (patience < 1) throw ConfigError("plateau patience must be >= 1");
}

bool PlateauScheduler::observe(double metric) {
  if (metric > best_) {
    best_ = metric;
    bad_epochs_ = 0;
    return false;
  }
  if (++bad_epochs_ < patience_) return false;
  lr_ *= factor_;
  bad_epochs_ = 0;
  return true;
}

nlohmann::json TrainReport::to_json() const {
  nlohmann::json epochs_json = nlohmann::json::array();
  for (const auto& e : epochs)
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"lr", e.lr},
                           {"val_psnr", e.val.psnr},
                           {"val_ssim", e.val.ssim},
                           {"steps", e.steps},
                           {"seconds", e.seconds}});
  return {{"epochs", epochs_json},
          {"step_losses", step_losses},
          {"best_epoch", best_epoch},
          {"best_val_psnr", best_metric},
          {"wall_seconds", wall_seconds}};
}

Metrics evaluate(const AduNet<float>& net, const PairedDataset& ds) {
  if (ds.empty()) throw DataError("cannot evaluate an empty dataset");
  std::vector<double> p(ds.size()), s(ds.size()), m(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Sample& item = ds.items[i];
    if (!item.input.same_shape(item.gt))
      throw ShapeError("sample " + item.stem + ": input and ground truth differ in shape");
    const Image restored = clamp01(net.decompose(item.input).restored);
    p[i] = psnr(restored, item.gt);
    s[i] = ssim(restored, item.gt);
    m[i] = mse(restored, item.gt);
  }
  Metrics out;
  for (std::size_t i = 0; i < ds.size(); ++i) out.psnr += p[i], out.ssim += s[i], out.mse += m[i];
  out.count = static_cast<int>(ds.size());
  out.psnr /= out.count, out.ssim /= out.count, out.mse /= out.count;
  return out;
}

Metrics evaluate_identity(const PairedDataset& ds) {
  if (ds.empty()) throw DataError("cannot evaluate an empty dataset");
  Metrics out;
  for (const auto& item : ds.items) {
    const Image input = clamp01(item.input);
    out.psnr += psnr(input, item.gt);
    out.ssim += ssim(input, item.gt);
    out.mse += mse(input, item.gt);
  }
  out.count = static_cast<int>(ds.size());
  out.psnr /= out.count, out.ssim /= out.count, out.mse /= out.count;
  return out;
}

TrainReport train(AduNet<float>& net, const TrainConfig& config, const PairedDataset& train_set,
                  const PairedDataset& val_set, const EpochCallback& on_epoch) {
  validate(config);
  check_trainable(train_set, "training");
  if (val_set.empty()) throw DataError("validation set is empty");

  const auto start = Clock::now();
  const bool write = !config.checkpoint_dir.empty();
  if (write) std::filesystem::create_directories(config.checkpoint_dir);

  Adam adam(net.store().parameters(), config.lr);
  PlateauScheduler scheduler(config.lr, config.plateau_factor, config.plateau_patience);
  const LossMode loss_mode = net.config().loss_mode;
  TrainReport report;
  report.best_metric = -std::numeric_limits<double>::infinity();

  std::vector<std::size_t> order(train_set.size());
  std::int64_t steps = 0;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto epoch_start = Clock::now();
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng::stream(config.seed, static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size() - 1; i > 0; --i)
      std::swap(order[i], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(i)))]);

    EpochRecord record;
    record.epoch = epoch;
    record.lr = scheduler.lr();
    adam.set_lr(scheduler.lr());
    double loss_sum = 0;
    int batches = 0;
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (std::size_t first = 0; first < order.size(); first += batch) {
      if (config.max_steps > 0 && steps >= config.max_steps) break;
      const std::size_t last = std::min(order.size(), first + batch);
      auto [x, y] = make_batch(train_set, order, first, last);
      const ForwardResult<float> out = net.forward(Var<float>(std::move(x)), true);
      const Var<float> l = loss(Var<float>(std::move(y)), out.restored, loss_mode);
      const double value = l.value()[0];
      if (!std::isfinite(value))
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batches) + " (step " + std::to_string(steps) + ")");
      net.store().zero_grad();
      backward(l);
      adam.step();
      ++steps;
      ++batches;
      loss_sum += value;
      report.step_losses.push_back(value);
    }
    record.train_loss = batches ? loss_sum / batches : std::numeric_limits<double>::quiet_NaN();
    record.steps = steps;
    record.val = evaluate(net, val_set);
    record.seconds = seconds_since(epoch_start);
    scheduler.observe(record.val.psnr);

    const bool improved = record.val.psnr > report.best_metric;
    if (improved) {
      report.best_metric = record.val.psnr;
      report.best_epoch = epoch;
    }
    report.epochs.push_back(record);
    if (write) {
      const nlohmann::json extra{{"val_psnr", record.val.psnr}, {"val_ssim", record.val.ssim}, {"lr", scheduler.lr()}};
      const auto blob = adam.serialize();
      if (config.save_every > 0 && epoch % config.save_every == 0)
        save_checkpoint(config.checkpoint_dir / ("epoch_" + std::to_string(epoch) + ".ckpt"), net, epoch, blob, extra);
      if (improved) save_checkpoint(config.checkpoint_dir / "best.ckpt", net, epoch, blob, extra);
      save_checkpoint(config.checkpoint_dir / "last.ckpt", net, epoch, blob, extra);
      report.wall_seconds = seconds_since(start);
      write_json(config.checkpoint_dir / "report.json", report.to_json());
    }
    if (config.verbose)
      std::cerr << "epoch " << epoch << " loss " << record.train_loss << " lr " << record.lr << " val_psnr "
                << record.val.psnr << " val_ssim " << record.val.ssim << " (" << record.seconds << " s)\n";
    if (on_epoch) on_epoch(record);
    if (config.max_steps > 0 && steps >= config.max_steps) break;
  }
  report.wall_seconds = seconds_since(start);
  if (write) write_json(config.checkpoint_dir / "report.json", report.to_json());
  return report;
}

}  // namespace adunet
