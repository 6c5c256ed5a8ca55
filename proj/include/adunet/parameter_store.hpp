#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "adunet/autograd.hpp"

namespace adunet {

enum class TensorKind : std::uint8_t { parameter = 0, buffer = 1 };

/// Groups used by the parameter breakdown.
enum class ParamCategory : std::uint8_t { conv3x3 = 0, conv1x1 = 1, norm = 2, attention = 3, state = 4 };

/// Named tensors of a whole network. Learnable parameters are leaf Vars with
/// requires_grad set; buffers (normalisation running statistics) are stored
/// alongside them so a checkpoint captures both. Names are unique and
/// iteration follows registration order.
template <typename T>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    TensorKind kind;
    ParamCategory category;
    Var<T> var;
  };

  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Var<T> add_parameter(const std::string& name, Tensor<T> value, ParamCategory category);
  Var<T> add_buffer(const std::string& name, Tensor<T> value);

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Entry& at(const std::string& name) const;
  Entry& at(const std::string& name);

  const std::vector<std::unique_ptr<Entry>>& entries() const noexcept { return entries_; }
  std::vector<Var<T>> parameters() const;

  /// Number of learnable scalars.
  std::int64_t parameter_count() const;

  void zero_grad();

  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;

 private:
  Entry& insert(const std::string& name, TensorKind kind, ParamCategory category, Var<T> var);

  std::vector<std::unique_ptr<Entry>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace adunet
