#pragma once

#include <string>
#include <utility>
#include <vector>

#include "adunet/adb.hpp"
#include "adunet/encoder.hpp"

namespace adunet {

template <typename T>
struct ForwardResult {
  Var<T> restored;       // I - Yc - Ys, not clamped
  Var<T> contamination;  // Yc
  Var<T> scene;          // Ys; zeros for a single decoder
};

/// Named activation shapes collected during a forward pass, in execution
/// order.
using ShapeTrace = std::vector<std::pair<std::string, Shape>>;

/// ADU-Net: encoder, four decoder blocks and one output head per residual
/// stream. The network owns its parameters; `forward` is const and may run
/// concurrently from several threads in eval mode.
template <typename T>
class AduNet {
 public:
  /// Validates `config` and initialises every parameter from `config.seed`.
  explicit AduNet(const NetworkConfig& config);

  AduNet(AduNet&&) noexcept = default;
  AduNet& operator=(AduNet&&) noexcept = default;

  const NetworkConfig& config() const noexcept { return config_; }
  ParameterStore<T>& store() noexcept { return store_; }
  const ParameterStore<T>& store() const noexcept { return store_; }
  bool dual() const noexcept { return head_scene_.has_value(); }

  /// image: [N,3,H,W] with H and W divisible by 16. Throws ConfigError when
  /// the parameter store was built for a different architecture.
  ForwardResult<T> forward(const Var<T>& image, bool training, ShapeTrace* trace = nullptr) const;

  /// Eval-mode restoration of one [3,H,W] image of any size: reflect-pads to
  /// a multiple of 16, runs the network and crops back. Outputs are not
  /// clamped.
  struct Decomposition {
    Tensor<T> restored;
    Tensor<T> contamination;
    Tensor<T> scene;
  };
  Decomposition decompose(const Tensor<T>& image) const;

  /// Zeroes both output heads so the network passes its input through.
  void zero_heads();

 private:
  NetworkConfig config_;
  ParameterStore<T> store_;
  EncoderParams<T> encoder_;
  std::array<AdbParams<T>, 4> blocks_;
  HeadParams<T> head_contamination_;
  std::optional<HeadParams<T>> head_scene_;
};

struct ParameterBreakdown {
  std::vector<std::pair<std::string, std::int64_t>> modules;  // registration order
  std::int64_t total = 0;
  std::int64_t conv3x3 = 0;   // 3x3 kernels and head biases
  std::int64_t conv1x1 = 0;   // fusion gates
  std::int64_t norm = 0;      // batch and layer norm affine terms
  std::int64_t attention = 0; // projections and relative position tables
};

/// Learnable scalar count of the network `config` describes.
ParameterBreakdown count_parameters(const NetworkConfig& config);

/// Closed-form 3x3 convolution count from the layer table: encoder blocks,
/// Conv_in and Conv_out of every decoder block and the output heads.
std::int64_t table_conv_parameter_count(const NetworkConfig& config);

/// Module a parameter name belongs to in the breakdown table.
std::string module_of(const std::string& parameter_name);

}  // namespace adunet
